//! Coding one row block (a line or a strip) through its column chain.
//!
//! Columns are coded left to right. Each column's conditional
//! `p(s_t | s_{t-1})` is split into one q-ary step per pixel, top to
//! bottom: with the top digit most significant, the states sharing a
//! prefix form a contiguous run, so every step is a sum over sub-runs.

use std::ops::Range;

use super::arith::{quantize_pmf, Decoder, Encoder, QuantizedPmf};
use crate::chain::ChainPosterior;
use crate::error::{RccError, Result};
use crate::lattice::{column_chain, Clamp, LatticeChain};
use crate::model::{Configuration, LatticeModel};

/// One coded block.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedBlock {
    pub bytes: Vec<u8>,
    /// Exact coded length (the payload is this many bits, zero padded).
    pub bits: u64,
    /// `-log2 p̂(block)` under the quantized model actually used.
    pub model_bits: f64,
    /// `-log2 p(block)` under the unquantized sequential model.
    pub ideal_bits: f64,
}

/// The per-pixel coding distributions of a block chain.
pub struct BlockModel {
    chain: LatticeChain,
}

impl BlockModel {
    pub fn new(chain: LatticeChain) -> Self {
        Self { chain }
    }

    /// Line under its reduced model (a whole, block-local lattice model).
    pub fn line(reduced: &LatticeModel, cap: usize) -> Result<Self> {
        Ok(Self::new(crate::lattice::block_chain(reduced, cap)?))
    }

    /// Rows `rows` of `model` given the rows directly above and below.
    pub fn strip(model: &LatticeModel, rows: Range<usize>, clamp: Clamp<'_>, cap: usize) -> Result<Self> {
        Ok(Self::new(column_chain(model, rows, clamp, cap)?))
    }

    pub fn chain(&self) -> &LatticeChain {
        &self.chain
    }

    /// Unquantized `p(s_0)` for the first column; both sides can compute it
    /// from the header alone.
    pub fn first_column(&self) -> Vec<f64> {
        self.chain.posterior().conditional(0, None)
    }

    pub fn encode(&self, block: &Configuration) -> Result<EncodedBlock> {
        let states = self.chain.states_of(block)?;
        let posterior = self.chain.posterior();
        let mut enc = Encoder::new();
        let mut model_bits = 0.0;
        let mut ideal_bits = 0.0;
        walk(&posterior, &self.chain, |t, d, pmf, exact| {
            let layout = self.chain.digit_layout();
            let s = layout.digit(states[t], d);
            enc.encode(pmf, s);
            model_bits += pmf.bits(s);
            ideal_bits -= exact[s].log2();
            Ok(s)
        })?;
        let out = enc.finish();
        Ok(EncodedBlock {
            bits: out.len(),
            bytes: out.into_bytes(),
            model_bits,
            ideal_bits,
        })
    }

    pub fn decode(&self, bytes: &[u8]) -> Result<Configuration> {
        let posterior = self.chain.posterior();
        let mut dec = Decoder::new(bytes);
        let states = walk(&posterior, &self.chain, |_, _, pmf, _| dec.decode(pmf))?;
        Ok(self.chain.configuration_of(&states))
    }
}

/// Drive `step(column, digit, quantized pmf, exact pmf)` through every
/// pixel; `step` returns the pixel value. Returns the column states.
fn walk<F>(posterior: &ChainPosterior<'_>, chain: &LatticeChain, mut step: F) -> Result<Vec<usize>>
where
    F: FnMut(usize, usize, &QuantizedPmf, &[f64]) -> Result<usize>,
{
    let layout = chain.digit_layout();
    let q = layout.q;
    let len = chain.chain().len();
    let mut states = Vec::with_capacity(len);
    let mut pmf = vec![0.0; q];
    for t in 0..len {
        let cond = posterior.conditional(t, states.last().copied());
        let mut base = 0usize;
        let mut span = cond.len();
        for d in 0..layout.digits {
            let stride = span / q;
            let mut total = 0.0;
            for (a, p) in pmf.iter_mut().enumerate() {
                let start = base + a * stride;
                *p = cond[start..start + stride].iter().sum();
                total += *p;
            }
            if total > 0.0 && total.is_finite() {
                pmf.iter_mut().for_each(|p| *p /= total);
            } else {
                // unreachable prefix under floating point; any shared choice works
                pmf.iter_mut().for_each(|p| *p = 1.0 / q as f64);
            }
            let quantized = quantize_pmf(&pmf)?;
            let a = step(t, d, &quantized, &pmf)?;
            if a >= q {
                return Err(RccError::CorruptStream("decoded symbol outside alphabet".into()));
            }
            base += a * stride;
            span = stride;
        }
        states.push(base);
    }
    Ok(states)
}

pub fn encode_line(line: &Configuration, reduced: &LatticeModel, cap: usize) -> Result<EncodedBlock> {
    BlockModel::line(reduced, cap)?.encode(line)
}

pub fn decode_line(bytes: &[u8], reduced: &LatticeModel, cap: usize) -> Result<Configuration> {
    BlockModel::line(reduced, cap)?.decode(bytes)
}

pub fn encode_strip(
    strip: &Configuration,
    model: &LatticeModel,
    rows: Range<usize>,
    clamp: Clamp<'_>,
    cap: usize,
) -> Result<EncodedBlock> {
    BlockModel::strip(model, rows, clamp, cap)?.encode(strip)
}

pub fn decode_strip(
    bytes: &[u8],
    model: &LatticeModel,
    rows: Range<usize>,
    clamp: Clamp<'_>,
    cap: usize,
) -> Result<Configuration> {
    BlockModel::strip(model, rows, clamp, cap)?.decode(bytes)
}

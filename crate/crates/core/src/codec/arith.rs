//! 32-bit integer arithmetic coder over 16-bit quantized pmfs.
//!
//! Bits are emitted one at a time with the usual pending-bit (underflow)
//! bookkeeping; the decoder reads zeros past the end of its input, so a
//! stream costs the emitted bits plus at most one.

use crate::error::{RccError, Result};

pub const PRECISION_BITS: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION_BITS;
pub const MAX_SYMBOLS: usize = 1 << 12;

const TOP: u64 = 1 << 32;
const HALF: u64 = TOP / 2;
const QUARTER: u64 = TOP / 4;
const MASK: u64 = TOP - 1;

/// Integer pmf with counts summing to exactly `TOTAL`, every count ≥ 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedPmf {
    cumulative: Vec<u32>,
}

impl QuantizedPmf {
    pub fn from_counts(counts: &[u32]) -> Result<Self> {
        if counts.len() > MAX_SYMBOLS {
            return Err(RccError::TooManySymbols(counts.len()));
        }
        if counts.is_empty() || counts.contains(&0) {
            return Err(RccError::InvalidPmf("counts must be non-empty and positive".into()));
        }
        let mut cumulative = Vec::with_capacity(counts.len() + 1);
        let mut acc = 0u32;
        cumulative.push(0);
        for &c in counts {
            acc = acc
                .checked_add(c)
                .ok_or_else(|| RccError::InvalidPmf("count overflow".into()))?;
            cumulative.push(acc);
        }
        if acc != TOTAL {
            return Err(RccError::InvalidPmf(format!("counts sum to {acc}, expected {TOTAL}")));
        }
        Ok(Self { cumulative })
    }

    pub fn len(&self) -> usize {
        self.cumulative.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, s: usize) -> u32 {
        self.cumulative[s + 1] - self.cumulative[s]
    }

    pub fn counts(&self) -> Vec<u32> {
        (0..self.len()).map(|s| self.count(s)).collect()
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cumulative
    }

    pub fn probability(&self, s: usize) -> f64 {
        self.count(s) as f64 / TOTAL as f64
    }

    /// `-log2 p̂(s)`.
    pub fn bits(&self, s: usize) -> f64 {
        PRECISION_BITS as f64 - (self.count(s) as f64).log2()
    }

    fn symbol_for(&self, target: u32) -> usize {
        // last index with cumulative[i] <= target
        self.cumulative.partition_point(|&c| c <= target) - 1
    }
}

/// Largest-remainder rounding of `pmf` to counts summing to `TOTAL`, then
/// every zero count raised to 1 at the expense of the currently largest.
pub fn quantize_pmf(pmf: &[f64]) -> Result<QuantizedPmf> {
    if pmf.len() > MAX_SYMBOLS {
        return Err(RccError::TooManySymbols(pmf.len()));
    }
    if pmf.is_empty() {
        return Err(RccError::InvalidPmf("empty pmf".into()));
    }
    if pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(RccError::InvalidPmf("probabilities must be finite and non-negative".into()));
    }
    let sum: f64 = pmf.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(RccError::InvalidPmf(format!("probabilities sum to {sum}")));
    }
    let total = TOTAL as f64;
    let mut counts: Vec<u32> = Vec::with_capacity(pmf.len());
    let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(pmf.len());
    for (i, p) in pmf.iter().enumerate() {
        let ideal = p / sum * total;
        let fl = ideal.floor().min(total);
        counts.push(fl as u32);
        remainders.push((ideal - fl, i));
    }
    let assigned: u64 = counts.iter().map(|&c| c as u64).sum();
    let mut left = (TOTAL as u64).saturating_sub(assigned);
    // largest remainder first, lower index on ties
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    for i in 0..counts.len() {
        if counts[i] == 0 {
            let donor = largest(&counts);
            counts[donor] -= 1;
            counts[i] = 1;
        }
    }
    QuantizedPmf::from_counts(&counts)
}

fn largest(counts: &[u32]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Bit vector packed MSB-first.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BitBuffer {
    bytes: Vec<u8>,
    len: u64,
}

impl BitBuffer {
    pub fn push(&mut self, bit: bool) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().unwrap() |= 0x80 >> (self.len % 8);
        }
        self.len += 1;
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

pub struct Encoder {
    low: u64,
    high: u64,
    pending: u64,
    out: BitBuffer,
}

impl Default for Encoder {
    fn default() -> Self {
        Self::new()
    }
}

impl Encoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            high: MASK,
            pending: 0,
            out: BitBuffer::default(),
        }
    }

    fn emit(&mut self, bit: bool) {
        self.out.push(bit);
        for _ in 0..self.pending {
            self.out.push(!bit);
        }
        self.pending = 0;
    }

    pub fn encode(&mut self, pmf: &QuantizedPmf, symbol: usize) {
        let range = self.high - self.low + 1;
        let lo = pmf.cumulative[symbol] as u64;
        let hi = pmf.cumulative[symbol + 1] as u64;
        self.high = self.low + range * hi / TOTAL as u64 - 1;
        self.low += range * lo / TOTAL as u64;
        loop {
            if self.high < HALF {
                self.emit(false);
            } else if self.low >= HALF {
                self.emit(true);
                self.low -= HALF;
                self.high -= HALF;
            } else if self.low >= QUARTER && self.high < HALF + QUARTER {
                self.pending += 1;
                self.low -= QUARTER;
                self.high -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
        }
    }

    /// After renormalisation `low < HALF <= high`, so the midpoint (a `1`
    /// plus the pending zeros) lies inside the final interval. The pending
    /// zeros are written out so lengths stay within one bit of the ideal in
    /// both directions.
    pub fn finish(mut self) -> BitBuffer {
        self.emit(true);
        self.out
    }
}

pub struct Decoder<'a> {
    input: &'a [u8],
    bit_len: u64,
    pos: u64,
    low: u64,
    high: u64,
    value: u64,
}

impl<'a> Decoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        let mut d = Self {
            input,
            bit_len: input.len() as u64 * 8,
            pos: 0,
            low: 0,
            high: MASK,
            value: 0,
        };
        for _ in 0..32 {
            d.value = (d.value << 1) | d.next_bit();
        }
        d
    }

    fn next_bit(&mut self) -> u64 {
        let bit = if self.pos < self.bit_len {
            (self.input[(self.pos / 8) as usize] >> (7 - self.pos % 8)) & 1
        } else {
            0
        };
        self.pos += 1;
        bit as u64
    }

    pub fn decode(&mut self, pmf: &QuantizedPmf) -> Result<usize> {
        if self.value < self.low || self.value > self.high {
            return Err(RccError::CorruptStream("decoder value left the coding interval".into()));
        }
        let range = self.high - self.low + 1;
        let target = ((self.value - self.low + 1) * TOTAL as u64 - 1) / range;
        if target >= TOTAL as u64 {
            return Err(RccError::CorruptStream("decoder target out of range".into()));
        }
        let symbol = pmf.symbol_for(target as u32);
        let lo = pmf.cumulative[symbol] as u64;
        let hi = pmf.cumulative[symbol + 1] as u64;
        self.high = self.low + range * hi / TOTAL as u64 - 1;
        self.low += range * lo / TOTAL as u64;
        loop {
            if self.high < HALF {
            } else if self.low >= HALF {
                self.low -= HALF;
                self.high -= HALF;
                self.value -= HALF;
            } else if self.low >= QUARTER && self.high < HALF + QUARTER {
                self.low -= QUARTER;
                self.high -= QUARTER;
                self.value -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
            self.value = (self.value << 1) | self.next_bit();
        }
        Ok(symbol)
    }
}

/// Encode a symbol stream whose pmfs come from `provider(previous symbols)`.
pub fn ac_encode<F>(symbols: &[usize], mut provider: F) -> Result<BitBuffer>
where
    F: FnMut(&[usize]) -> Result<QuantizedPmf>,
{
    let mut enc = Encoder::new();
    for (t, &s) in symbols.iter().enumerate() {
        let pmf = provider(&symbols[..t])?;
        if s >= pmf.len() {
            return Err(RccError::InvalidConfiguration(format!("symbol {s} outside alphabet of {}", pmf.len())));
        }
        enc.encode(&pmf, s);
    }
    Ok(enc.finish())
}

pub fn ac_decode<F>(bytes: &[u8], count: usize, mut provider: F) -> Result<Vec<usize>>
where
    F: FnMut(&[usize]) -> Result<QuantizedPmf>,
{
    let mut dec = Decoder::new(bytes);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let pmf = provider(&out)?;
        let s = dec.decode(&pmf)?;
        out.push(s);
    }
    Ok(out)
}

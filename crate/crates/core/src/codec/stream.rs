//! Two-stage image container: header, then every line payload top to
//! bottom, then every strip payload top to bottom.
//!
//! ```text
//! "RCC1" | version u8 | q u8 | M N n_L n_S u32
//! node_stat edge_h edge_v theta  (counted f64 arrays)
//! theta* per line                (counted f64 arrays, k+1 of them)
//! provenance u64 | checksum u64
//! 2k+1 payloads, each u32 byte length + bytes
//! ```
//! All integers and floats are big-endian.

use sha2::{Digest, Sha256};

use super::block::{BlockModel, EncodedBlock};
use crate::error::{RccError, Result};
use crate::lattice::Clamp;
use crate::model::{ComponentVector, Configuration, CutsetLayout, LatticeModel, LatticeShape, PairwiseFamily};
use crate::par::Execution;

pub const MAGIC: &[u8; 4] = b"RCC1";
pub const VERSION: u8 = 1;

/// Everything the decoder needs besides the payloads.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamHeader {
    pub model: LatticeModel,
    pub layout: CutsetLayout,
    /// Reduced-model parameters, one `n_L × N` vector per line.
    pub theta_star: Vec<ComponentVector>,
    pub provenance: u64,
}

impl StreamHeader {
    pub fn new(model: LatticeModel, layout: CutsetLayout, theta_star: Vec<ComponentVector>, provenance: u64) -> Result<Self> {
        let shape = model.shape();
        if layout.rows() != shape.rows {
            return Err(RccError::LayoutMismatch(format!(
                "layout covers {} rows, image has {}",
                layout.rows(),
                shape.rows
            )));
        }
        if theta_star.len() != layout.line_count() {
            return Err(RccError::LayoutMismatch(format!(
                "{} fitted line parameters for {} lines",
                theta_star.len(),
                layout.line_count()
            )));
        }
        let line_shape = LatticeShape::new(layout.line_height(), shape.cols)?;
        if theta_star.iter().any(|t| t.shape() != line_shape) {
            return Err(RccError::LayoutMismatch("fitted line parameters have the wrong shape".into()));
        }
        if model.q() > u8::MAX as usize {
            return Err(RccError::InvalidModel("alphabet too large for the container".into()));
        }
        Ok(Self {
            model,
            layout,
            theta_star,
            provenance,
        })
    }

    fn line_model(&self, i: usize) -> Result<LatticeModel> {
        LatticeModel::new(self.model.family().clone(), self.theta_star[i].clone())
    }

    /// First 8 bytes of SHA-256 over the first line's first-column
    /// distribution, a cheap guard against the two sides building
    /// different coding tables.
    fn checksum(&self, cap: usize) -> Result<u64> {
        let first = BlockModel::line(&self.line_model(0)?, cap)?.first_column();
        let mut h = Sha256::new();
        for p in first {
            h.update(p.to_be_bytes());
        }
        let digest = h.finalize();
        Ok(u64::from_be_bytes(digest[..8].try_into().unwrap()))
    }
}

/// An encoded image and its per-block accounting.
#[derive(Clone, Debug)]
pub struct EncodedImage {
    pub bytes: Vec<u8>,
    pub lines: Vec<EncodedBlock>,
    pub strips: Vec<EncodedBlock>,
    pub pixels: usize,
}

impl EncodedImage {
    pub fn payload_bits(&self) -> u64 {
        self.lines.iter().chain(&self.strips).map(|b| b.bits).sum()
    }

    /// Payload bits per pixel.
    pub fn rate(&self) -> f64 {
        self.payload_bits() as f64 / self.pixels as f64
    }

    pub fn line_bits(&self) -> u64 {
        self.lines.iter().map(|b| b.bits).sum()
    }

    pub fn strip_bits(&self) -> u64 {
        self.strips.iter().map(|b| b.bits).sum()
    }

    /// Whole container, header included, bits per pixel.
    pub fn stream_rate(&self) -> f64 {
        self.bytes.len() as f64 * 8.0 / self.pixels as f64
    }
}

pub fn encode_image(config: &Configuration, header: &StreamHeader, cap: usize, execution: Execution) -> Result<EncodedImage> {
    let shape = header.model.shape();
    if config.shape() != shape {
        return Err(RccError::LayoutMismatch(format!(
            "image {:?} does not match model {:?}",
            config.shape(),
            shape
        )));
    }
    config.check_alphabet(header.model.q())?;
    let layout = &header.layout;
    let lines: Vec<EncodedBlock> = execution
        .map_range(0..layout.line_count(), |i| {
            let block = config.rows(layout.line_rows(i))?;
            BlockModel::line(&header.line_model(i)?, cap)?.encode(&block)
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let strips: Vec<EncodedBlock> = execution
        .map_range(0..layout.k(), |i| {
            let rows = layout.strip_rows(i);
            let clamp = Clamp::both(config.row(rows.start - 1), config.row(rows.end));
            let block = config.rows(rows.clone())?;
            BlockModel::strip(&header.model, rows, clamp, cap)?.encode(&block)
        })
        .into_iter()
        .collect::<Result<_>>()?;

    let mut out = Vec::new();
    write_header(&mut out, header, header.checksum(cap)?);
    for b in lines.iter().chain(&strips) {
        let len = u32::try_from(b.bytes.len()).map_err(|_| RccError::InvalidConfiguration("block too large".into()))?;
        out.extend_from_slice(&len.to_be_bytes());
        out.extend_from_slice(&b.bytes);
    }
    Ok(EncodedImage {
        bytes: out,
        lines,
        strips,
        pixels: shape.sites(),
    })
}

#[derive(Clone, Debug)]
pub struct DecodedImage {
    pub header: StreamHeader,
    pub config: Configuration,
}

pub fn decode_image(bytes: &[u8], cap: usize, execution: Execution) -> Result<DecodedImage> {
    let mut r = Reader { bytes, pos: 0 };
    let (header, checksum) = read_header(&mut r)?;
    if header.checksum(cap)? != checksum {
        return Err(RccError::CorruptStream("coding table checksum mismatch".into()));
    }
    let layout = &header.layout;
    let k = layout.k();
    let payloads: Vec<&[u8]> = (0..2 * k + 1)
        .map(|_| {
            let len = r.u32()? as usize;
            r.take(len)
        })
        .collect::<Result<_>>()?;
    if r.pos != bytes.len() {
        return Err(RccError::CorruptStream("trailing bytes after the last block".into()));
    }

    let shape = header.model.shape();
    let mut config = Configuration::filled(shape, 0);
    let lines: Vec<Configuration> = execution
        .map_range(0..layout.line_count(), |i| {
            BlockModel::line(&header.line_model(i)?, cap)?.decode(payloads[i])
        })
        .into_iter()
        .collect::<Result<_>>()?;
    for (i, line) in lines.iter().enumerate() {
        paste(&mut config, line, layout.line_rows(i).start);
    }
    let strips: Vec<Configuration> = execution
        .map_range(0..k, |i| {
            let rows = layout.strip_rows(i);
            let clamp = Clamp::both(config.row(rows.start - 1), config.row(rows.end));
            BlockModel::strip(&header.model, rows, clamp, cap)?.decode(payloads[k + 1 + i])
        })
        .into_iter()
        .collect::<Result<_>>()?;
    for (i, strip) in strips.iter().enumerate() {
        paste(&mut config, strip, layout.strip_rows(i).start);
    }
    Ok(DecodedImage { header, config })
}

fn paste(into: &mut Configuration, block: &Configuration, first_row: usize) {
    let shape = block.shape();
    for r in 0..shape.rows {
        for c in 0..shape.cols {
            into.set(first_row + r, c, block.get(r, c));
        }
    }
}

fn write_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.extend_from_slice(&(values.len() as u32).to_be_bytes());
    for v in values {
        out.extend_from_slice(&v.to_be_bytes());
    }
}

fn write_header(out: &mut Vec<u8>, h: &StreamHeader, checksum: u64) {
    let shape = h.model.shape();
    let family = h.model.family();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(h.model.q() as u8);
    for v in [shape.rows, shape.cols, h.layout.line_height(), h.layout.strip_height()] {
        out.extend_from_slice(&(v as u32).to_be_bytes());
    }
    write_f64s(out, family.node_table());
    write_f64s(out, family.horiz_table());
    write_f64s(out, family.vert_table());
    write_f64s(out, h.model.params().values());
    for t in &h.theta_star {
        write_f64s(out, t.values());
    }
    out.extend_from_slice(&h.provenance.to_be_bytes());
    out.extend_from_slice(&checksum.to_be_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| RccError::CorruptStream("unexpected end of stream".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()? as usize;
        if n > (self.bytes.len() - self.pos) / 8 {
            return Err(RccError::CorruptStream("array length exceeds stream".into()));
        }
        (0..n).map(|_| Ok(f64::from_be_bytes(self.take(8)?.try_into().unwrap()))).collect()
    }
}

fn corrupt(e: RccError) -> RccError {
    match e {
        RccError::CorruptStream(_) => e,
        other => RccError::CorruptStream(format!("invalid header: {other}")),
    }
}

fn read_header(r: &mut Reader<'_>) -> Result<(StreamHeader, u64)> {
    if r.take(4)? != MAGIC {
        return Err(RccError::CorruptStream("bad magic".into()));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(RccError::CorruptStream(format!("unsupported version {version}")));
    }
    let q = r.u8()? as usize;
    let (rows, cols, nl, ns) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let family = PairwiseFamily::new(q, r.f64s()?, r.f64s()?, r.f64s()?).map_err(corrupt)?;
    let shape = LatticeShape::new(rows, cols).map_err(corrupt)?;
    let theta = ComponentVector::from_values(shape, r.f64s()?).map_err(corrupt)?;
    let model = LatticeModel::new(family, theta).map_err(corrupt)?;
    let layout = CutsetLayout::new(rows, nl, ns).map_err(corrupt)?;
    let line_shape = LatticeShape::new(nl, cols).map_err(corrupt)?;
    let theta_star = (0..layout.line_count())
        .map(|_| ComponentVector::from_values(line_shape, r.f64s()?).map_err(corrupt))
        .collect::<Result<_>>()?;
    let provenance = r.u64()?;
    let checksum = r.u64()?;
    let header = StreamHeader::new(model, layout, theta_star, provenance).map_err(corrupt)?;
    Ok((header, checksum))
}

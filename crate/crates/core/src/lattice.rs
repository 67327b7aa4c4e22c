//! Superpixel chains built from lattice models.
//!
//! A column chain groups the pixels of each column of a row block into one
//! supernode (digit `r` = block row `r`); a row chain groups each row of
//! the whole lattice (digit `c` = column `c`). A row chain is the column
//! chain of the transposed model, so both share one builder.

use std::ops::Range;

use crate::chain::{check_cap, ChainPosterior, DigitLayout, PairPotential, SuperpixelChain};
use crate::error::{RccError, Result};
use crate::model::{ComponentVector, Configuration, LatticeModel, LatticeShape, PairwiseFamily, Symbol};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    /// Supernodes are columns of a row block; chain runs left to right.
    Columns,
    /// Supernodes are whole rows; chain runs top to bottom.
    Rows,
}

/// Fixed boundary rows directly above and below a row block.
#[derive(Clone, Copy, Debug, Default)]
pub struct Clamp<'a> {
    pub above: Option<&'a [Symbol]>,
    pub below: Option<&'a [Symbol]>,
}

impl<'a> Clamp<'a> {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn both(above: &'a [Symbol], below: &'a [Symbol]) -> Self {
        Self {
            above: Some(above),
            below: Some(below),
        }
    }
}

/// A chain together with the lattice block it represents.
#[derive(Clone, Debug)]
pub struct LatticeChain {
    chain: SuperpixelChain,
    /// Family in chain orientation.
    family: PairwiseFamily,
    /// Block shape in chain orientation: `rows` digits per supernode,
    /// `cols` supernodes.
    block: LatticeShape,
    orientation: Orientation,
}

/// Column chain of the row block `rows` of `model`, optionally conditioned
/// on fixed rows directly above and below the block.
pub fn column_chain(model: &LatticeModel, rows: Range<usize>, clamp: Clamp<'_>, cap: usize) -> Result<LatticeChain> {
    build(model, rows, clamp, cap, Orientation::Columns)
}

/// Column chain of a whole (typically reduced, block-local) model.
pub fn block_chain(model: &LatticeModel, cap: usize) -> Result<LatticeChain> {
    column_chain(model, 0..model.shape().rows, Clamp::none(), cap)
}

/// Row chain of the whole lattice.
pub fn row_chain(model: &LatticeModel, cap: usize) -> Result<LatticeChain> {
    let transposed = model.transpose();
    let rows = 0..transposed.shape().rows;
    build(&transposed, rows, Clamp::none(), cap, Orientation::Rows)
}

fn build(
    model: &LatticeModel,
    rows: Range<usize>,
    clamp: Clamp<'_>,
    cap: usize,
    orientation: Orientation,
) -> Result<LatticeChain> {
    let shape = model.shape();
    if rows.start >= rows.end || rows.end > shape.rows {
        return Err(RccError::InvalidModel(format!("row block {rows:?} outside lattice of {} rows", shape.rows)));
    }
    let family = model.family().clone();
    let q = family.q();
    let b = rows.len();
    let n = shape.cols;
    let states = check_cap(q, b, cap)?;
    let layout = DigitLayout { q, digits: b };
    for (name, row, present) in [
        ("above", clamp.above, rows.start > 0),
        ("below", clamp.below, rows.end < shape.rows),
    ] {
        if let Some(row) = row {
            if !present {
                return Err(RccError::InvalidConfiguration(format!("no lattice row {name} the block to clamp")));
            }
            if row.len() != n || row.iter().any(|&s| s as usize >= q) {
                return Err(RccError::InvalidConfiguration(format!("clamped row {name} has wrong length or symbols")));
            }
        }
    }
    let params = model.params();
    let node_stat = family.node_table();
    let vert_stat = family.vert_table();
    let horiz_stat = family.horiz_table();

    let mut node = Vec::with_capacity(n);
    let mut digits = vec![0usize; b];
    for c in 0..n {
        // per-digit local tables for this column
        let node_tab: Vec<Vec<f64>> = rows
            .clone()
            .map(|r| node_stat.iter().map(|t| params.node(r, c) * t).collect())
            .collect();
        let vert_tab: Vec<Vec<f64>> = rows
            .clone()
            .take(b - 1)
            .map(|r| vert_stat.iter().map(|t| params.vert(r, c) * t).collect())
            .collect();
        let mut boundary_top = vec![0.0; q];
        let mut boundary_bottom = vec![0.0; q];
        if let Some(above) = clamp.above {
            let theta = params.vert(rows.start - 1, c);
            let a = above[c] as usize;
            for (d, v) in boundary_top.iter_mut().enumerate() {
                *v = theta * vert_stat[a * q + d];
            }
        }
        if let Some(below) = clamp.below {
            let theta = params.vert(rows.end - 1, c);
            let a = below[c] as usize;
            for (d, v) in boundary_bottom.iter_mut().enumerate() {
                *v = theta * vert_stat[d * q + a];
            }
        }
        let mut pot = Vec::with_capacity(states);
        digits.iter_mut().for_each(|d| *d = 0);
        for _ in 0..states {
            let mut total = boundary_top[digits[0]] + boundary_bottom[digits[b - 1]];
            for r in 0..b {
                total += node_tab[r][digits[r]];
                if r + 1 < b {
                    total += vert_tab[r][digits[r] * q + digits[r + 1]];
                }
            }
            pot.push(total);
            // odometer increment, last digit fastest
            for r in (0..b).rev() {
                digits[r] += 1;
                if digits[r] < q {
                    break;
                }
                digits[r] = 0;
            }
        }
        node.push(pot);
    }
    let pair = (0..n.saturating_sub(1))
        .map(|c| PairPotential::Separable {
            layout,
            tables: rows
                .clone()
                .map(|r| horiz_stat.iter().map(|t| params.horiz(r, c) * t).collect())
                .collect(),
        })
        .collect();
    let chain = SuperpixelChain::from_parts(node, pair, Some(layout))?;
    Ok(LatticeChain {
        chain,
        family,
        block: LatticeShape::new(b, n)?,
        orientation,
    })
}

impl LatticeChain {
    pub fn chain(&self) -> &SuperpixelChain {
        &self.chain
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn digit_layout(&self) -> DigitLayout {
        self.chain.digits().expect("lattice chains always carry a digit layout")
    }

    /// Shape of the represented block in lattice orientation.
    pub fn block_shape(&self) -> LatticeShape {
        match self.orientation {
            Orientation::Columns => self.block,
            Orientation::Rows => self.block.transpose(),
        }
    }

    pub fn posterior(&self) -> ChainPosterior<'_> {
        self.chain.posterior()
    }

    pub fn log_partition(&self) -> f64 {
        self.chain.log_partition()
    }

    /// Supernode states of a block configuration (lattice orientation).
    pub fn states_of(&self, config: &Configuration) -> Result<Vec<usize>> {
        if config.shape() != self.block_shape() {
            return Err(RccError::InvalidConfiguration(format!(
                "configuration shape {:?} does not match chain block {:?}",
                config.shape(),
                self.block_shape()
            )));
        }
        let q = self.family.q();
        Ok((0..self.block.cols)
            .map(|t| {
                (0..self.block.rows).fold(0, |acc, d| {
                    let s = match self.orientation {
                        Orientation::Columns => config.get(d, t),
                        Orientation::Rows => config.get(t, d),
                    };
                    acc * q + s as usize
                })
            })
            .collect())
    }

    /// Block configuration (lattice orientation) of a state sequence.
    pub fn configuration_of(&self, states: &[usize]) -> Configuration {
        let layout = self.digit_layout();
        let mut config = Configuration::filled(self.block_shape(), 0);
        for (t, &s) in states.iter().enumerate() {
            for d in 0..self.block.rows {
                let v = layout.digit(s, d) as Symbol;
                match self.orientation {
                    Orientation::Columns => config.set(d, t, v),
                    Orientation::Rows => config.set(t, d, v),
                }
            }
        }
        config
    }

    /// Expected statistic of the block, in lattice orientation.
    pub fn moments(&self, posterior: &ChainPosterior<'_>) -> ComponentVector {
        let q = self.family.q();
        let b = self.block.rows;
        let t_len = self.block.cols;
        let layout = self.digit_layout();
        let node_stat = self.family.node_table();
        let vert_stat = self.family.vert_table();
        let horiz_stat = self.family.horiz_table();
        let mut out = ComponentVector::zeros(self.block);
        let mut digits = vec![0usize; b];
        for t in 0..t_len {
            let mut single = vec![0.0; b * q];
            let mut adjacent = vec![0.0; b.saturating_sub(1) * q * q];
            for (s, &p) in posterior.node_marginal(t).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let mut rest = s;
                for r in (0..b).rev() {
                    digits[r] = rest % q;
                    rest /= q;
                }
                for r in 0..b {
                    single[r * q + digits[r]] += p;
                    if r + 1 < b {
                        adjacent[r * q * q + digits[r] * q + digits[r + 1]] += p;
                    }
                }
            }
            for r in 0..b {
                *out.node_mut(r, t) = (0..q).map(|a| single[r * q + a] * node_stat[a]).sum();
                if r + 1 < b {
                    *out.vert_mut(r, t) = (0..q * q).map(|i| adjacent[r * q * q + i] * vert_stat[i]).sum();
                }
            }
            if t + 1 < t_len {
                for (r, table) in posterior.pair_digit_marginals(t).iter().enumerate() {
                    *out.horiz_mut(r, t) = table.iter().zip(horiz_stat).map(|(p, v)| p * v).sum();
                }
            }
        }
        debug_assert_eq!(layout.digits, b);
        match self.orientation {
            Orientation::Columns => out,
            Orientation::Rows => out.transpose(),
        }
    }
}

//! Lattices, pairwise exponential families, parameters, configurations and
//! the line/strip cutset layout.
//!
//! Every per-component vector uses one normative ordering: node components
//! in raster order, then horizontal edges in raster order (edge `(r, c)`
//! joins `(r, c)` and `(r, c + 1)`), then vertical edges in raster order
//! (edge `(r, c)` joins `(r, c)` and `(r + 1, c)`). Inner products,
//! gradients and serialization all follow it.

use std::ops::Range;

use crate::error::{RccError, Result};

pub type Symbol = u8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LatticeShape {
    pub rows: usize,
    pub cols: usize,
}

impl LatticeShape {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(RccError::InvalidModel(format!(
                "lattice must be at least 1x1, got {rows}x{cols}"
            )));
        }
        Ok(Self { rows, cols })
    }

    pub fn sites(&self) -> usize {
        self.rows * self.cols
    }

    pub fn horizontal_edges(&self) -> usize {
        self.rows * (self.cols - 1)
    }

    pub fn vertical_edges(&self) -> usize {
        (self.rows - 1) * self.cols
    }

    pub fn edges(&self) -> usize {
        self.horizontal_edges() + self.vertical_edges()
    }

    /// Length of a per-component vector on this lattice.
    pub fn components(&self) -> usize {
        self.sites() + self.edges()
    }

    pub fn node_index(&self, r: usize, c: usize) -> usize {
        r * self.cols + c
    }

    pub fn horiz_index(&self, r: usize, c: usize) -> usize {
        self.sites() + r * (self.cols - 1) + c
    }

    pub fn vert_index(&self, r: usize, c: usize) -> usize {
        self.sites() + self.horizontal_edges() + r * self.cols + c
    }

    pub fn transpose(&self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
        }
    }
}

/// Alphabet plus node and edge statistic tables. Edge tables are indexed
/// `[a * q + b]` where `a` is the left (top) endpoint and `b` the right
/// (bottom) endpoint of a horizontal (vertical) edge.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseFamily {
    q: usize,
    node_stat: Vec<f64>,
    edge_h: Vec<f64>,
    edge_v: Vec<f64>,
}

impl PairwiseFamily {
    pub fn new(q: usize, node_stat: Vec<f64>, edge_h: Vec<f64>, edge_v: Vec<f64>) -> Result<Self> {
        if !(2..=255).contains(&q) {
            return Err(RccError::InvalidModel(format!("alphabet size {q} not in 2..=255")));
        }
        if node_stat.len() != q || edge_h.len() != q * q || edge_v.len() != q * q {
            return Err(RccError::InvalidModel(format!(
                "statistic tables have sizes {}/{}/{}, expected {q}/{}/{}",
                node_stat.len(),
                edge_h.len(),
                edge_v.len(),
                q * q,
                q * q
            )));
        }
        if node_stat.iter().chain(&edge_h).chain(&edge_v).any(|v| !v.is_finite()) {
            return Err(RccError::InvalidModel("statistic tables must be finite".into()));
        }
        Ok(Self {
            q,
            node_stat,
            edge_h,
            edge_v,
        })
    }

    /// Binary alphabet with spins `{0 -> -1, 1 -> +1}`, `t_i(x) = x` and
    /// `t_ij(x, y) = x * y` on both edge orientations.
    pub fn ising() -> Self {
        let edge = vec![1.0, -1.0, -1.0, 1.0];
        Self {
            q: 2,
            node_stat: vec![-1.0, 1.0],
            edge_h: edge.clone(),
            edge_v: edge,
        }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    #[inline]
    pub fn node(&self, a: Symbol) -> f64 {
        self.node_stat[a as usize]
    }

    #[inline]
    pub fn horiz(&self, a: Symbol, b: Symbol) -> f64 {
        self.edge_h[a as usize * self.q + b as usize]
    }

    #[inline]
    pub fn vert(&self, a: Symbol, b: Symbol) -> f64 {
        self.edge_v[a as usize * self.q + b as usize]
    }

    pub fn node_table(&self) -> &[f64] {
        &self.node_stat
    }

    pub fn horiz_table(&self) -> &[f64] {
        &self.edge_h
    }

    pub fn vert_table(&self) -> &[f64] {
        &self.edge_v
    }

    /// Family on the transposed lattice: horizontal and vertical edge
    /// statistics trade places.
    pub fn transpose(&self) -> Self {
        Self {
            q: self.q,
            node_stat: self.node_stat.clone(),
            edge_h: self.edge_v.clone(),
            edge_v: self.edge_h.clone(),
        }
    }

    pub fn node_hull(&self) -> (f64, f64) {
        min_max(&self.node_stat)
    }

    pub fn horiz_hull(&self) -> (f64, f64) {
        min_max(&self.edge_h)
    }

    pub fn vert_hull(&self) -> (f64, f64) {
        min_max(&self.edge_v)
    }

    /// Affine independence of the local statistic components.
    ///
    /// For each edge orientation the design table has one row per symbol
    /// pair `(a, b)` and columns `[1, t_i(a), t_i(b), t_ij(a, b)]`; the
    /// family is minimal when both tables have full column rank.
    pub fn is_minimal(&self) -> bool {
        [&self.edge_h, &self.edge_v].iter().all(|edge| {
            let mut design = Vec::with_capacity(self.q * self.q);
            for a in 0..self.q {
                for b in 0..self.q {
                    design.push(vec![
                        1.0,
                        self.node_stat[a],
                        self.node_stat[b],
                        edge[a * self.q + b],
                    ]);
                }
            }
            matrix_rank(design, 1e-9) == 4
        })
    }
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn matrix_rank(mut rows: Vec<Vec<f64>>, tol: f64) -> usize {
    let cols = rows.first().map_or(0, Vec::len);
    let mut rank = 0;
    for col in 0..cols {
        let pivot = (rank..rows.len()).max_by(|&i, &j| rows[i][col].abs().total_cmp(&rows[j][col].abs()));
        let Some(pivot) = pivot else { break };
        if rows[pivot][col].abs() <= tol {
            continue;
        }
        rows.swap(rank, pivot);
        #[allow(clippy::needless_range_loop)]
        for i in 0..rows.len() {
            if i != rank {
                let factor = rows[i][col] / rows[rank][col];
                for j in col..cols {
                    rows[i][j] -= factor * rows[rank][j];
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Row-invariant exponential parameters of the global model: one value per
/// row index, shared by every column.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterField {
    node: Vec<f64>,
    horiz: Vec<f64>,
    vert: Vec<f64>,
}

impl ParameterField {
    pub fn new(node: Vec<f64>, horiz: Vec<f64>, vert: Vec<f64>) -> Result<Self> {
        let rows = node.len();
        if rows == 0 || horiz.len() != rows || vert.len() + 1 != rows {
            return Err(RccError::InvalidModel(format!(
                "per-row parameter lengths {}/{}/{} are inconsistent",
                node.len(),
                horiz.len(),
                vert.len()
            )));
        }
        if node.iter().chain(&horiz).chain(&vert).any(|v| !v.is_finite()) {
            return Err(RccError::InvalidModel("parameters must be finite".into()));
        }
        Ok(Self { node, horiz, vert })
    }

    pub fn homogeneous(rows: usize, node: f64, horiz: f64, vert: f64) -> Result<Self> {
        Self::new(
            vec![node; rows],
            vec![horiz; rows],
            vec![vert; rows.saturating_sub(1)],
        )
    }

    pub fn rows(&self) -> usize {
        self.node.len()
    }

    pub fn node(&self) -> &[f64] {
        &self.node
    }

    pub fn horiz(&self) -> &[f64] {
        &self.horiz
    }

    pub fn vert(&self) -> &[f64] {
        &self.vert
    }

    /// Per-component expansion onto a lattice with `cols` columns.
    pub fn expand(&self, cols: usize) -> Result<ComponentVector> {
        let shape = LatticeShape::new(self.rows(), cols)?;
        let mut out = ComponentVector::zeros(shape);
        for r in 0..shape.rows {
            for c in 0..cols {
                *out.node_mut(r, c) = self.node[r];
                if c + 1 < cols {
                    *out.horiz_mut(r, c) = self.horiz[r];
                }
                if r + 1 < shape.rows {
                    *out.vert_mut(r, c) = self.vert[r];
                }
            }
        }
        Ok(out)
    }
}

/// One real per node and per edge of a lattice, in normative order.
///
/// Used for per-component parameters of block (reduced) models, for
/// statistics `t(x)` and for moment vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentVector {
    shape: LatticeShape,
    values: Vec<f64>,
}

pub type MomentVector = ComponentVector;
pub type BlockParameter = ComponentVector;

impl ComponentVector {
    pub fn zeros(shape: LatticeShape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.components()],
        }
    }

    pub fn from_values(shape: LatticeShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.components() {
            return Err(RccError::InvalidModel(format!(
                "component vector has {} entries, lattice {}x{} needs {}",
                values.len(),
                shape.rows,
                shape.cols,
                shape.components()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> LatticeShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn node(&self, r: usize, c: usize) -> f64 {
        self.values[self.shape.node_index(r, c)]
    }

    #[inline]
    pub fn horiz(&self, r: usize, c: usize) -> f64 {
        self.values[self.shape.horiz_index(r, c)]
    }

    #[inline]
    pub fn vert(&self, r: usize, c: usize) -> f64 {
        self.values[self.shape.vert_index(r, c)]
    }

    #[inline]
    pub fn node_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        let i = self.shape.node_index(r, c);
        &mut self.values[i]
    }

    #[inline]
    pub fn horiz_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        let i = self.shape.horiz_index(r, c);
        &mut self.values[i]
    }

    #[inline]
    pub fn vert_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        let i = self.shape.vert_index(r, c);
        &mut self.values[i]
    }

    /// Inner product, summed in normative component order.
    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Components of the rows `rows`: their nodes, horizontal edges and the
    /// vertical edges interior to the block.
    pub fn restrict_rows(&self, rows: Range<usize>) -> Result<Self> {
        if rows.start >= rows.end || rows.end > self.shape.rows {
            return Err(RccError::InvalidModel(format!(
                "row block {rows:?} outside lattice of {} rows",
                self.shape.rows
            )));
        }
        let shape = LatticeShape::new(rows.len(), self.shape.cols)?;
        let mut out = Self::zeros(shape);
        for (br, r) in rows.clone().enumerate() {
            for c in 0..shape.cols {
                *out.node_mut(br, c) = self.node(r, c);
                if c + 1 < shape.cols {
                    *out.horiz_mut(br, c) = self.horiz(r, c);
                }
                if br + 1 < shape.rows {
                    *out.vert_mut(br, c) = self.vert(r, c);
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        let shape = self.shape.transpose();
        let mut out = Self::zeros(shape);
        for r in 0..self.shape.rows {
            for c in 0..self.shape.cols {
                *out.node_mut(c, r) = self.node(r, c);
                if c + 1 < self.shape.cols {
                    *out.vert_mut(c, r) = self.horiz(r, c);
                }
                if r + 1 < self.shape.rows {
                    *out.horiz_mut(c, r) = self.vert(r, c);
                }
            }
        }
        out
    }
}

/// An `M x N` image of symbols in raster order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Configuration {
    shape: LatticeShape,
    pixels: Vec<Symbol>,
}

impl Configuration {
    pub fn new(shape: LatticeShape, pixels: Vec<Symbol>) -> Result<Self> {
        if pixels.len() != shape.sites() {
            return Err(RccError::InvalidConfiguration(format!(
                "{} pixels for a {}x{} lattice",
                pixels.len(),
                shape.rows,
                shape.cols
            )));
        }
        Ok(Self { shape, pixels })
    }

    pub fn filled(shape: LatticeShape, symbol: Symbol) -> Self {
        Self {
            shape,
            pixels: vec![symbol; shape.sites()],
        }
    }

    pub fn shape(&self) -> LatticeShape {
        self.shape
    }

    pub fn pixels(&self) -> &[Symbol] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Symbol {
        self.pixels[r * self.shape.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: Symbol) {
        self.pixels[r * self.shape.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[Symbol] {
        &self.pixels[r * self.shape.cols..(r + 1) * self.shape.cols]
    }

    pub fn rows(&self, rows: Range<usize>) -> Result<Self> {
        if rows.start >= rows.end || rows.end > self.shape.rows {
            return Err(RccError::InvalidConfiguration(format!(
                "row block {rows:?} outside image of {} rows",
                self.shape.rows
            )));
        }
        let shape = LatticeShape::new(rows.len(), self.shape.cols)?;
        Ok(Self {
            shape,
            pixels: self.pixels[rows.start * self.shape.cols..rows.end * self.shape.cols].to_vec(),
        })
    }

    pub fn transpose(&self) -> Self {
        let shape = self.shape.transpose();
        let mut pixels = vec![0; shape.sites()];
        for r in 0..self.shape.rows {
            for c in 0..self.shape.cols {
                pixels[c * shape.cols + r] = self.get(r, c);
            }
        }
        Self { shape, pixels }
    }

    pub fn check_alphabet(&self, q: usize) -> Result<()> {
        match self.pixels.iter().position(|&p| p as usize >= q) {
            Some(i) => Err(RccError::InvalidConfiguration(format!(
                "pixel {i} has symbol {} outside alphabet of size {q}",
                self.pixels[i]
            ))),
            None => Ok(()),
        }
    }
}

/// `t(x)`: node entries `t_i(x_i)`, edge entries `t_ij(x_i, x_j)`.
pub fn statistic(config: &Configuration, family: &PairwiseFamily) -> ComponentVector {
    let shape = config.shape();
    let mut out = ComponentVector::zeros(shape);
    for r in 0..shape.rows {
        for c in 0..shape.cols {
            let x = config.get(r, c);
            *out.node_mut(r, c) = family.node(x);
            if c + 1 < shape.cols {
                *out.horiz_mut(r, c) = family.horiz(x, config.get(r, c + 1));
            }
            if r + 1 < shape.rows {
                *out.vert_mut(r, c) = family.vert(x, config.get(r + 1, c));
            }
        }
    }
    out
}

/// A pairwise MRF on a lattice: family plus per-component parameters.
///
/// The global model is built from a row-invariant [`ParameterField`];
/// reduced models on blocks carry free per-node/per-edge parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeModel {
    family: PairwiseFamily,
    params: ComponentVector,
}

impl LatticeModel {
    pub fn new(family: PairwiseFamily, params: ComponentVector) -> Result<Self> {
        if params.values().iter().any(|v| !v.is_finite()) {
            return Err(RccError::InvalidModel("parameters must be finite".into()));
        }
        Ok(Self { family, params })
    }

    pub fn from_field(family: PairwiseFamily, field: &ParameterField, cols: usize) -> Result<Self> {
        Self::new(family, field.expand(cols)?)
    }

    /// Homogeneous Ising model with the given edge and node parameters.
    pub fn ising(shape: LatticeShape, edge: f64, node: f64) -> Result<Self> {
        let field = ParameterField::homogeneous(shape.rows, node, edge, edge)?;
        Self::from_field(PairwiseFamily::ising(), &field, shape.cols)
    }

    pub fn family(&self) -> &PairwiseFamily {
        &self.family
    }

    pub fn params(&self) -> &ComponentVector {
        &self.params
    }

    pub fn shape(&self) -> LatticeShape {
        self.params.shape()
    }

    pub fn q(&self) -> usize {
        self.family.q()
    }

    /// Same family, different parameters on the same lattice.
    pub fn with_params(&self, params: ComponentVector) -> Result<Self> {
        if params.shape() != self.shape() {
            return Err(RccError::InvalidModel("parameter shape mismatch".into()));
        }
        Self::new(self.family.clone(), params)
    }

    /// Induced-subgraph model on a contiguous block of rows.
    pub fn restrict(&self, rows: Range<usize>) -> Result<Self> {
        Ok(Self {
            family: self.family.clone(),
            params: self.params.restrict_rows(rows)?,
        })
    }

    pub fn transpose(&self) -> Self {
        Self {
            family: self.family.transpose(),
            params: self.params.transpose(),
        }
    }

    pub fn statistic(&self, config: &Configuration) -> ComponentVector {
        statistic(config, &self.family)
    }

    /// `<theta, t(x)>` in normative summation order.
    pub fn energy(&self, config: &Configuration) -> f64 {
        self.params.dot(&self.statistic(config))
    }
}

/// Partition of `rows` into `k + 1` lines of height `line_height` and `k`
/// strips of height `strip_height`, alternating and starting and ending
/// with a line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CutsetLayout {
    rows: usize,
    line_height: usize,
    strip_height: usize,
    strips: usize,
}

impl CutsetLayout {
    pub fn new(rows: usize, line_height: usize, strip_height: usize) -> Result<Self> {
        let invalid = || RccError::NoValidTiling {
            rows,
            line: line_height,
            strip: strip_height,
        };
        if line_height == 0 || strip_height == 0 || rows < 2 * line_height + strip_height {
            return Err(invalid());
        }
        let period = line_height + strip_height;
        if !(rows - line_height).is_multiple_of(period) {
            return Err(invalid());
        }
        Ok(Self {
            rows,
            line_height,
            strip_height,
            strips: (rows - line_height) / period,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn line_height(&self) -> usize {
        self.line_height
    }

    pub fn strip_height(&self) -> usize {
        self.strip_height
    }

    /// Number of strips `k`.
    pub fn k(&self) -> usize {
        self.strips
    }

    pub fn line_count(&self) -> usize {
        self.strips + 1
    }

    pub fn line_rows(&self, i: usize) -> Range<usize> {
        let start = i * (self.line_height + self.strip_height);
        start..start + self.line_height
    }

    pub fn strip_rows(&self, i: usize) -> Range<usize> {
        let start = i * (self.line_height + self.strip_height) + self.line_height;
        start..start + self.strip_height
    }

    pub fn line_ranges(&self) -> Vec<Range<usize>> {
        (0..self.line_count()).map(|i| self.line_rows(i)).collect()
    }

    pub fn strip_ranges(&self) -> Vec<Range<usize>> {
        (0..self.k()).map(|i| self.strip_rows(i)).collect()
    }
}

/// Alternating line/strip tiling of `rows` rows.
pub fn build_layout(rows: usize, line_height: usize, strip_height: usize) -> Result<CutsetLayout> {
    CutsetLayout::new(rows, line_height, strip_height)
}

/// Largest row count `<= max_rows` admitting a layout with the given
/// heights, if any.
pub fn largest_tiling_rows(max_rows: usize, line_height: usize, strip_height: usize) -> Option<usize> {
    let period = line_height + strip_height;
    if line_height == 0 || strip_height == 0 || max_rows < line_height + period {
        return None;
    }
    let k = (max_rows - line_height) / period;
    Some(k * period + line_height)
}

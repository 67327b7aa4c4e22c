//! Brute-force reference computations by exhaustive enumeration.
#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;
use rcc_core::model::{ComponentVector, Configuration, LatticeModel, LatticeShape, PairwiseFamily, Symbol};

/// Every configuration with its unnormalised log-weight `θ·t(x)`.
pub struct Enumeration {
    pub shape: LatticeShape,
    pub q: usize,
    pub configs: Vec<Configuration>,
    pub log_weights: Vec<f64>,
    pub log_z: f64,
}

impl Enumeration {
    pub fn new(model: &LatticeModel) -> Self {
        let shape = model.shape();
        let q = model.q();
        let sites = shape.sites();
        let count = q.pow(sites as u32);
        assert!(count <= 1 << 22, "enumeration too large");
        let mut configs = Vec::with_capacity(count);
        let mut log_weights = Vec::with_capacity(count);
        let mut pixels = vec![0 as Symbol; sites];
        for _ in 0..count {
            let c = Configuration::new(shape, pixels.clone()).unwrap();
            log_weights.push(model.energy(&c));
            configs.push(c);
            for p in pixels.iter_mut().rev() {
                *p += 1;
                if (*p as usize) < q {
                    break;
                }
                *p = 0;
            }
        }
        let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + log_weights.iter().map(|w| (w - max).exp()).sum::<f64>().ln();
        Self {
            shape,
            q,
            configs,
            log_weights,
            log_z,
        }
    }

    pub fn prob(&self, i: usize) -> f64 {
        (self.log_weights[i] - self.log_z).exp()
    }

    pub fn probs(&self) -> Vec<f64> {
        (0..self.configs.len()).map(|i| self.prob(i)).collect()
    }

    /// Expected statistic of the model.
    pub fn moments(&self, family: &PairwiseFamily) -> ComponentVector {
        let mut out = vec![0.0; self.shape.components()];
        for (i, c) in self.configs.iter().enumerate() {
            let p = self.prob(i);
            let t = rcc_core::model::statistic(c, family);
            for (o, v) in out.iter_mut().zip(t.values()) {
                *o += p * v;
            }
        }
        ComponentVector::from_values(self.shape, out).unwrap()
    }

    pub fn node_marginal(&self, r: usize, c: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.q];
        for (i, x) in self.configs.iter().enumerate() {
            m[x.get(r, c) as usize] += self.prob(i);
        }
        m
    }

    /// `p(x_a, x_b)` flattened `a * q + b`.
    pub fn pair_marginal(&self, a: (usize, usize), b: (usize, usize)) -> Vec<f64> {
        let mut m = vec![0.0; self.q * self.q];
        for (i, x) in self.configs.iter().enumerate() {
            m[x.get(a.0, a.1) as usize * self.q + x.get(b.0, b.1) as usize] += self.prob(i);
        }
        m
    }

    pub fn entropy(&self) -> f64 {
        self.probs().iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum()
    }

    /// Marginal distribution of the rows listed, keyed by their pixels.
    pub fn rows_marginal(&self, rows: &[usize]) -> HashMap<Vec<Symbol>, f64> {
        let mut m = HashMap::new();
        for (i, x) in self.configs.iter().enumerate() {
            let key: Vec<Symbol> = rows.iter().flat_map(|&r| x.row(r).to_vec()).collect();
            *m.entry(key).or_insert(0.0) += self.prob(i);
        }
        m
    }

    /// Entropy (nats) of the joint marginal of the rows listed.
    pub fn rows_entropy(&self, rows: &[usize]) -> f64 {
        entropy_of(self.rows_marginal(rows).values())
    }
}

pub fn entropy_of<'a>(probs: impl IntoIterator<Item = &'a f64>) -> f64 {
    probs.into_iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum()
}

/// Random family with `q` symbols and random per-component parameters.
pub fn random_model<R: Rng>(rng: &mut R, shape: LatticeShape, q: usize, scale: f64) -> LatticeModel {
    let mut table = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let family = PairwiseFamily::new(q, table(q), table(q * q), table(q * q)).unwrap();
    let values = (0..shape.components()).map(|_| rng.random_range(-scale..scale)).collect();
    LatticeModel::new(family, ComponentVector::from_values(shape, values).unwrap()).unwrap()
}

pub fn ising(rows: usize, cols: usize, edge: f64) -> LatticeModel {
    LatticeModel::ising(LatticeShape::new(rows, cols).unwrap(), edge, 0.0).unwrap()
}

/// Log-partition plus every node and edge marginal of `model`, read off a
/// lattice chain. Edge marginals are listed horizontal first, then
/// vertical, each flattened `a * q + b`.
pub struct ChainMarginals {
    pub log_z: f64,
    pub nodes: Vec<Vec<f64>>,
    pub edges: Vec<Vec<f64>>,
}

impl ChainMarginals {
    pub fn from_chain(model: &LatticeModel, lc: &rcc_core::lattice::LatticeChain) -> Self {
        use rcc_core::lattice::Orientation;
        let shape = model.shape();
        let q = model.q();
        let post = lc.posterior();
        let layout = lc.digit_layout();
        // (supernode, digit) of lattice site (r, c)
        let locate = |r: usize, c: usize| match lc.orientation() {
            Orientation::Columns => (c, r),
            Orientation::Rows => (r, c),
        };
        let node = |r: usize, c: usize| {
            let (t, d) = locate(r, c);
            let mut m = vec![0.0; q];
            for (s, p) in post.node_marginal(t).iter().enumerate() {
                m[layout.digit(s, d)] += p;
            }
            m
        };
        let pair = |a: (usize, usize), b: (usize, usize)| {
            let (ta, da) = locate(a.0, a.1);
            let (tb, db) = locate(b.0, b.1);
            let mut m = vec![0.0; q * q];
            if ta == tb {
                for (s, p) in post.node_marginal(ta).iter().enumerate() {
                    m[layout.digit(s, da) * q + layout.digit(s, db)] += p;
                }
            } else {
                assert_eq!(tb, ta + 1);
                let joint = post.pair_marginal(ta);
                let to = lc.chain().state_size(tb);
                for (i, p) in joint.iter().enumerate() {
                    m[layout.digit(i / to, da) * q + layout.digit(i % to, db)] += p;
                }
            }
            m
        };
        let mut nodes = Vec::new();
        for r in 0..shape.rows {
            for c in 0..shape.cols {
                nodes.push(node(r, c));
            }
        }
        let mut edges = Vec::new();
        for r in 0..shape.rows {
            for c in 0..shape.cols - 1 {
                edges.push(pair((r, c), (r, c + 1)));
            }
        }
        for r in 0..shape.rows - 1 {
            for c in 0..shape.cols {
                edges.push(pair((r, c), (r + 1, c)));
            }
        }
        Self {
            log_z: post.log_partition(),
            nodes,
            edges,
        }
    }

    pub fn from_enumeration(e: &Enumeration) -> Self {
        let shape = e.shape;
        let mut nodes = Vec::new();
        for r in 0..shape.rows {
            for c in 0..shape.cols {
                nodes.push(e.node_marginal(r, c));
            }
        }
        let mut edges = Vec::new();
        for r in 0..shape.rows {
            for c in 0..shape.cols - 1 {
                edges.push(e.pair_marginal((r, c), (r, c + 1)));
            }
        }
        for r in 0..shape.rows - 1 {
            for c in 0..shape.cols {
                edges.push(e.pair_marginal((r, c), (r + 1, c)));
            }
        }
        Self {
            log_z: e.log_z,
            nodes,
            edges,
        }
    }

    /// Largest absolute difference over the log-partition and all marginals.
    pub fn max_diff(&self, other: &Self) -> f64 {
        let tables = |m: &Self| m.nodes.iter().chain(&m.edges).flatten().copied().collect::<Vec<f64>>();
        tables(self)
            .iter()
            .zip(tables(other))
            .map(|(a, b)| (a - b).abs())
            .fold((self.log_z - other.log_z).abs(), f64::max)
    }
}

/// Ising family with random per-component parameters.
pub fn random_ising<R: Rng>(rng: &mut R, shape: LatticeShape, scale: f64) -> LatticeModel {
    let values = (0..shape.components()).map(|_| rng.random_range(-scale..scale)).collect();
    LatticeModel::new(PairwiseFamily::ising(), ComponentVector::from_values(shape, values).unwrap()).unwrap()
}

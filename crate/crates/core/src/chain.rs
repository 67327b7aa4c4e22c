//! Exact inference on chains of superpixels.
//!
//! A chain has `T` nodes with finite state spaces, a log-potential table per
//! node and a log-potential between every pair of neighbouring nodes. When
//! the chain comes from clustering lattice sites, each supernode state is a
//! word of `b` digits over the pixel alphabet and the pair potential is a
//! sum of `q x q` tables over aligned digits ([`PairPotential::Separable`]).
//! Messages then pass one digit at a time in `O(b * S * q^2)` instead of
//! `O(S^2)`.
//!
//! All messages are kept in the natural-log domain. `log_forward[t]`
//! includes the node potential of `t`; `log_backward[t]` covers everything
//! strictly after `t`.

use rand::Rng;

use crate::error::{RccError, Result};
use crate::model::Symbol;
use crate::numeric::{logsumexp, plogp, sample_index, softmax};
use crate::par::Execution;

pub const DEFAULT_STATE_CAP: usize = 4096;

/// Supernode state cap, overridable through `RCC_STATE_CAP`.
pub fn state_cap_from_env() -> usize {
    std::env::var("RCC_STATE_CAP")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&cap| cap > 0)
        .unwrap_or(DEFAULT_STATE_CAP)
}

pub(crate) fn check_cap(q: usize, digits: usize, cap: usize) -> Result<usize> {
    let states = (q as u128).checked_pow(digits as u32).unwrap_or(u128::MAX);
    if states > cap as u128 {
        return Err(RccError::StateSpaceTooLarge { states, cap });
    }
    Ok(states as usize)
}

/// Mixed-radix encoding of a supernode state: `digits` symbols over an
/// alphabet of `q`, digit 0 most significant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DigitLayout {
    pub q: usize,
    pub digits: usize,
}

impl DigitLayout {
    pub fn states(&self) -> usize {
        self.q.pow(self.digits as u32)
    }

    #[inline]
    pub fn stride(&self, digit: usize) -> usize {
        self.q.pow((self.digits - 1 - digit) as u32)
    }

    #[inline]
    pub fn digit(&self, state: usize, digit: usize) -> usize {
        (state / self.stride(digit)) % self.q
    }

    pub fn decode(&self, state: usize) -> Vec<Symbol> {
        (0..self.digits).map(|r| self.digit(state, r) as Symbol).collect()
    }

    pub fn encode(&self, symbols: &[Symbol]) -> usize {
        symbols.iter().fold(0, |acc, &s| acc * self.q + s as usize)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PairPotential {
    /// Arbitrary `from x to` table, row-major.
    Dense { from: usize, to: usize, table: Vec<f64> },
    /// `P(x, y) = sum_r tables[r][x_r * q + y_r]`.
    Separable { layout: DigitLayout, tables: Vec<Vec<f64>> },
}

impl PairPotential {
    pub fn from_size(&self) -> usize {
        match self {
            PairPotential::Dense { from, .. } => *from,
            PairPotential::Separable { layout, .. } => layout.states(),
        }
    }

    pub fn to_size(&self) -> usize {
        match self {
            PairPotential::Dense { to, .. } => *to,
            PairPotential::Separable { layout, .. } => layout.states(),
        }
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize) -> f64 {
        match self {
            PairPotential::Dense { to, table, .. } => table[x * to + y],
            PairPotential::Separable { layout, tables } => {
                let q = layout.q;
                let (mut x, mut y) = (x, y);
                let mut total = 0.0;
                for table in tables.iter().rev() {
                    total += table[(x % q) * q + y % q];
                    x /= q;
                    y /= q;
                }
                total
            }
        }
    }

    /// `P(x, .)` over all target states.
    pub fn row(&self, x: usize) -> Vec<f64> {
        (0..self.to_size()).map(|y| self.value(x, y)).collect()
    }

    /// `P(., y)` over all source states.
    pub fn column(&self, y: usize) -> Vec<f64> {
        (0..self.from_size()).map(|x| self.value(x, y)).collect()
    }

    /// Upper bound on `|P(x, y)|`.
    pub fn max_abs(&self) -> f64 {
        match self {
            PairPotential::Dense { table, .. } => table.iter().fold(0.0, |m, v| m.max(v.abs())),
            PairPotential::Separable { tables, .. } => tables
                .iter()
                .map(|t| t.iter().fold(0.0f64, |m, v| m.max(v.abs())))
                .sum(),
        }
    }

    pub fn to_dense(&self) -> PairPotential {
        let (from, to) = (self.from_size(), self.to_size());
        let mut table = Vec::with_capacity(from * to);
        for x in 0..from {
            for y in 0..to {
                table.push(self.value(x, y));
            }
        }
        PairPotential::Dense { from, to, table }
    }

    /// `out(y) = logsumexp_x [input(x) + P(x, y)]`.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        match self {
            PairPotential::Dense { from, to, table } => {
                let mut scratch = vec![0.0; *from];
                (0..*to)
                    .map(|y| {
                        for x in 0..*from {
                            scratch[x] = input[x] + table[x * to + y];
                        }
                        logsumexp(&scratch)
                    })
                    .collect()
            }
            PairPotential::Separable { layout, tables } => {
                let mut cur = input.to_vec();
                let mut next = vec![0.0; cur.len()];
                for (r, table) in tables.iter().enumerate() {
                    log_digit_stage(&cur, &mut next, layout.q, layout.stride(r), table, false);
                    std::mem::swap(&mut cur, &mut next);
                }
                cur
            }
        }
    }

    /// `out(x) = logsumexp_y [P(x, y) + input(y)]`.
    pub fn backward(&self, input: &[f64]) -> Vec<f64> {
        match self {
            PairPotential::Dense { from, to, table } => {
                let mut scratch = vec![0.0; *to];
                (0..*from)
                    .map(|x| {
                        for y in 0..*to {
                            scratch[y] = table[x * to + y] + input[y];
                        }
                        logsumexp(&scratch)
                    })
                    .collect()
            }
            PairPotential::Separable { layout, tables } => {
                let mut cur = input.to_vec();
                let mut next = vec![0.0; cur.len()];
                for (r, table) in tables.iter().enumerate() {
                    log_digit_stage(&cur, &mut next, layout.q, layout.stride(r), table, true);
                    std::mem::swap(&mut cur, &mut next);
                }
                cur
            }
        }
    }
}

/// Replace one digit: `out[.., b, ..] = logsumexp_a in[.., a, ..] + T(a, b)`
/// (or `T(b, a)` when `transposed`).
fn log_digit_stage(input: &[f64], out: &mut [f64], q: usize, stride: usize, table: &[f64], transposed: bool) {
    let block = q * stride;
    let mut terms = vec![0.0; q];
    for outer in (0..input.len()).step_by(block) {
        for inner in 0..stride {
            let base = outer + inner;
            for b in 0..q {
                for a in 0..q {
                    let t = if transposed { table[b * q + a] } else { table[a * q + b] };
                    terms[a] = input[base + a * stride] + t;
                }
                out[base + b * stride] = logsumexp(&terms);
            }
        }
    }
}

/// Linear-domain counterpart of [`log_digit_stage`] with `table` already
/// exponentiated.
fn linear_digit_stage(input: &[f64], out: &mut [f64], q: usize, stride: usize, exp_table: &[f64]) {
    let block = q * stride;
    for outer in (0..input.len()).step_by(block) {
        for inner in 0..stride {
            let base = outer + inner;
            for b in 0..q {
                let mut acc = 0.0;
                for a in 0..q {
                    acc += input[base + a * stride] * exp_table[a * q + b];
                }
                out[base + b * stride] = acc;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelChain {
    node: Vec<Vec<f64>>,
    pair: Vec<PairPotential>,
    digits: Option<DigitLayout>,
}

impl SuperpixelChain {
    /// Chain with arbitrary state sizes and dense pair tables
    /// (`pair[t]` is `|s_t| x |s_{t+1}|`, row-major).
    pub fn new(node: Vec<Vec<f64>>, pair: Vec<Vec<f64>>) -> Result<Self> {
        if node.is_empty() || pair.len() + 1 != node.len() {
            return Err(RccError::InvalidModel(format!(
                "chain of {} nodes needs {} pair tables, got {}",
                node.len(),
                node.len().saturating_sub(1),
                pair.len()
            )));
        }
        let pair = pair
            .into_iter()
            .enumerate()
            .map(|(t, table)| PairPotential::Dense {
                from: node[t].len(),
                to: node[t + 1].len(),
                table,
            })
            .collect();
        Self::from_parts(node, pair, None)
    }

    pub fn from_parts(node: Vec<Vec<f64>>, pair: Vec<PairPotential>, digits: Option<DigitLayout>) -> Result<Self> {
        if node.is_empty() || pair.len() + 1 != node.len() {
            return Err(RccError::InvalidModel("inconsistent chain length".into()));
        }
        if node.iter().any(|n| n.is_empty()) {
            return Err(RccError::InvalidModel("empty supernode state space".into()));
        }
        for (t, p) in pair.iter().enumerate() {
            if p.from_size() != node[t].len() || p.to_size() != node[t + 1].len() {
                return Err(RccError::InvalidModel(format!("pair table {t} has inconsistent dimensions")));
            }
            if let PairPotential::Dense { from, to, table } = p {
                if table.len() != from * to {
                    return Err(RccError::InvalidModel(format!("pair table {t} has wrong size")));
                }
            }
        }
        if let Some(layout) = digits {
            if node.iter().any(|n| n.len() != layout.states()) {
                return Err(RccError::InvalidModel("digit layout does not match state sizes".into()));
            }
        }
        let finite = node.iter().flatten().all(|v| v.is_finite())
            && pair.iter().all(|p| match p {
                PairPotential::Dense { table, .. } => table.iter().all(|v| v.is_finite()),
                PairPotential::Separable { tables, .. } => tables.iter().flatten().all(|v| v.is_finite()),
            });
        if !finite {
            return Err(RccError::InvalidModel("chain potentials must be finite".into()));
        }
        Ok(Self { node, pair, digits })
    }

    pub fn len(&self) -> usize {
        self.node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node.is_empty()
    }

    pub fn state_size(&self, t: usize) -> usize {
        self.node[t].len()
    }

    pub fn state_sizes(&self) -> Vec<usize> {
        self.node.iter().map(Vec::len).collect()
    }

    pub fn node_potential(&self, t: usize) -> &[f64] {
        &self.node[t]
    }

    pub fn pair_potential(&self, t: usize) -> &PairPotential {
        &self.pair[t]
    }

    pub fn digits(&self) -> Option<DigitLayout> {
        self.digits
    }

    /// Same chain with every pair potential expanded to a dense table.
    pub fn to_dense(&self) -> Self {
        Self {
            node: self.node.clone(),
            pair: self.pair.iter().map(PairPotential::to_dense).collect(),
            digits: self.digits,
        }
    }

    /// Sum of log-potentials of a full state sequence (unnormalized).
    pub fn log_weight(&self, states: &[usize]) -> f64 {
        assert_eq!(states.len(), self.len());
        let mut total = 0.0;
        for (t, &s) in states.iter().enumerate() {
            total += self.node[t][s];
            if t + 1 < states.len() {
                total += self.pair[t].value(s, states[t + 1]);
            }
        }
        total
    }

    fn forward_messages(&self) -> Vec<Vec<f64>> {
        let mut alpha = Vec::with_capacity(self.len());
        alpha.push(self.node[0].clone());
        for t in 1..self.len() {
            let mut msg = self.pair[t - 1].forward(&alpha[t - 1]);
            for (m, n) in msg.iter_mut().zip(&self.node[t]) {
                *m += n;
            }
            alpha.push(msg);
        }
        alpha
    }

    fn backward_messages(&self) -> Vec<Vec<f64>> {
        let len = self.len();
        let mut beta = vec![Vec::new(); len];
        beta[len - 1] = vec![0.0; self.state_size(len - 1)];
        for t in (0..len - 1).rev() {
            let incoming: Vec<f64> = self.node[t + 1].iter().zip(&beta[t + 1]).map(|(n, b)| n + b).collect();
            beta[t] = self.pair[t].backward(&incoming);
        }
        beta
    }

    /// `log Z` by the forward recursion.
    pub fn log_partition(&self) -> f64 {
        let mut alpha = self.node[0].clone();
        for t in 1..self.len() {
            alpha = self.pair[t - 1].forward(&alpha);
            for (m, n) in alpha.iter_mut().zip(&self.node[t]) {
                *m += n;
            }
        }
        logsumexp(&alpha)
    }

    pub fn posterior(&self) -> ChainPosterior<'_> {
        let log_forward = self.forward_messages();
        let log_backward = self.backward_messages();
        let log_partition = logsumexp(&log_forward[self.len() - 1]);
        let node_marginals = log_forward
            .iter()
            .zip(&log_backward)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x + y - log_partition).exp()).collect())
            .collect();
        ChainPosterior {
            chain: self,
            log_forward,
            log_backward,
            log_partition,
            node_marginals,
            execution: Execution::default(),
        }
    }
}

/// Forward/backward messages, the log-partition function and node
/// marginals of a chain. Pair marginals are derived on demand.
#[derive(Clone, Debug)]
pub struct ChainPosterior<'c> {
    chain: &'c SuperpixelChain,
    log_forward: Vec<Vec<f64>>,
    log_backward: Vec<Vec<f64>>,
    log_partition: f64,
    node_marginals: Vec<Vec<f64>>,
    execution: Execution,
}

impl<'c> ChainPosterior<'c> {
    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn chain(&self) -> &'c SuperpixelChain {
        self.chain
    }

    pub fn log_partition(&self) -> f64 {
        self.log_partition
    }

    pub fn log_forward(&self, t: usize) -> &[f64] {
        &self.log_forward[t]
    }

    pub fn log_backward(&self, t: usize) -> &[f64] {
        &self.log_backward[t]
    }

    /// `log Z` read off node `t`: `logsumexp(alpha_t + beta_t)`.
    pub fn log_partition_at(&self, t: usize) -> f64 {
        let combined: Vec<f64> = self.log_forward[t].iter().zip(&self.log_backward[t]).map(|(a, b)| a + b).collect();
        logsumexp(&combined)
    }

    pub fn node_marginal(&self, t: usize) -> &[f64] {
        &self.node_marginals[t]
    }

    pub fn node_marginals(&self) -> &[Vec<f64>] {
        &self.node_marginals
    }

    /// Log-potential of node `t + 1` plus its backward message.
    fn incoming(&self, t: usize) -> Vec<f64> {
        self.chain.node[t + 1].iter().zip(&self.log_backward[t + 1]).map(|(n, b)| n + b).collect()
    }

    /// Joint marginal of `(s_t, s_{t+1})`, row-major.
    pub fn pair_marginal(&self, t: usize) -> Vec<f64> {
        let pair = &self.chain.pair[t];
        let incoming = self.incoming(t);
        let alpha = &self.log_forward[t];
        let to = pair.to_size();
        let mut out = Vec::with_capacity(alpha.len() * to);
        for (x, a) in alpha.iter().enumerate() {
            for (y, g) in incoming.iter().enumerate() {
                out.push((a + pair.value(x, y) + g - self.log_partition).exp());
            }
        }
        out
    }

    /// Per-digit joint marginals of `(digit_r(s_t), digit_r(s_{t+1}))`,
    /// each a `q x q` row-major table. Requires a digit layout.
    pub fn pair_digit_marginals(&self, t: usize) -> Vec<Vec<f64>> {
        let layout = self.chain.digits.expect("pair_digit_marginals needs a digit layout");
        let q = layout.q;
        let incoming = self.incoming(t);
        match &self.chain.pair[t] {
            PairPotential::Separable { tables, .. } => (0..layout.digits)
                .map(|c| {
                    // pass every digit except c, so digit c still indexes s_t
                    let mut cur = self.log_forward[t].clone();
                    let mut next = vec![0.0; cur.len()];
                    for (r, table) in tables.iter().enumerate() {
                        if r != c {
                            log_digit_stage(&cur, &mut next, q, layout.stride(r), table, false);
                            std::mem::swap(&mut cur, &mut next);
                        }
                    }
                    let stride = layout.stride(c);
                    let mut out = vec![0.0; q * q];
                    for (z, &v) in cur.iter().enumerate() {
                        let a = (z / stride) % q;
                        let base = z - a * stride;
                        for b in 0..q {
                            let w = v + tables[c][a * q + b] + incoming[base + b * stride] - self.log_partition;
                            out[a * q + b] += w.exp();
                        }
                    }
                    out
                })
                .collect(),
            PairPotential::Dense { .. } => {
                let joint = self.pair_marginal(t);
                let to = self.chain.state_size(t + 1);
                let mut out = vec![vec![0.0; q * q]; layout.digits];
                for (i, p) in joint.iter().enumerate() {
                    let (x, y) = (i / to, i % to);
                    for (r, table) in out.iter_mut().enumerate() {
                        table[layout.digit(x, r) * q + layout.digit(y, r)] += p;
                    }
                }
                out
            }
        }
    }

    /// `E[P_t(s_t, s_{t+1})]`.
    pub fn expected_pair_potential(&self, t: usize) -> f64 {
        match &self.chain.pair[t] {
            PairPotential::Separable { tables, .. } => self
                .pair_digit_marginals(t)
                .iter()
                .zip(tables)
                .map(|(m, tab)| m.iter().zip(tab).map(|(p, v)| p * v).sum::<f64>())
                .sum(),
            PairPotential::Dense { table, .. } => {
                self.pair_marginal(t).iter().zip(table).map(|(p, v)| if *p > 0.0 { p * v } else { 0.0 }).sum()
            }
        }
    }

    fn expected(&self, t: usize, values: &[f64]) -> f64 {
        self.node_marginals[t]
            .iter()
            .zip(values)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, v)| p * v)
            .sum()
    }

    /// Entropy of the chain distribution in nats: `log Z - E[log weight]`.
    pub fn entropy(&self) -> f64 {
        let mut h = self.log_partition;
        for t in 0..self.chain.len() {
            h -= self.expected(t, &self.chain.node[t]);
            if t + 1 < self.chain.len() {
                h -= self.expected_pair_potential(t);
            }
        }
        h
    }

    pub fn node_entropy(&self, t: usize) -> f64 {
        self.node_marginals[t].iter().map(|&p| plogp(p)).sum()
    }

    /// `H(s_t, s_{t+1})` in nats.
    pub fn pair_entropy(&self, t: usize) -> f64 {
        let incoming = self.incoming(t);
        self.log_partition
            - self.expected(t, &self.log_forward[t])
            - self.expected_pair_potential(t)
            - self.expected(t + 1, &incoming)
    }

    /// `H(s_{t+1} | s_t)`.
    pub fn conditional_entropy(&self, t: usize) -> f64 {
        self.pair_entropy(t) - self.node_entropy(t)
    }

    /// `H(s_a, ..., s_b)` for the inclusive node range, by the chain rule
    /// along the Markov chain.
    pub fn block_entropy(&self, a: usize, b: usize) -> f64 {
        assert!(a <= b && b < self.chain.len());
        let mut h = self.node_entropy(a);
        for t in a..b {
            h += self.conditional_entropy(t);
        }
        h
    }

    /// `p(s_t | s_{t-1} = prev)`; for `t = 0` pass `None`. Conditioning on
    /// the full prefix reduces to the previous node by the Markov property.
    pub fn conditional(&self, t: usize, prev: Option<usize>) -> Vec<f64> {
        let mut logits: Vec<f64> = self.chain.node[t].iter().zip(&self.log_backward[t]).map(|(n, b)| n + b).collect();
        if t > 0 {
            let prev = prev.expect("conditional at t > 0 needs the previous state");
            for (y, l) in logits.iter_mut().enumerate() {
                *l += self.chain.pair[t - 1].value(prev, y);
            }
        }
        softmax(&logits)
    }

    /// `log p(s_1..s_T)`.
    pub fn log_prob(&self, states: &[usize]) -> f64 {
        self.chain.log_weight(states) - self.log_partition
    }

    /// Exact draw: forward filter, backward sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let len = self.chain.len();
        let mut states = vec![0; len];
        states[len - 1] = sample_index(&softmax(&self.log_forward[len - 1]), rng.random::<f64>());
        for t in (0..len - 1).rev() {
            let next = states[t + 1];
            let logits: Vec<f64> = self.log_forward[t]
                .iter()
                .enumerate()
                .map(|(x, a)| a + self.chain.pair[t].value(x, next))
                .collect();
            states[t] = sample_index(&softmax(&logits), rng.random::<f64>());
        }
        states
    }

    /// Push a distribution over `s_t` through the transition kernel
    /// `p(s_{t+1} | s_t)`.
    pub fn transition(&self, t: usize, dist: &[f64]) -> Vec<f64> {
        self.kernel(t).apply(dist)
    }

    fn kernel(&self, t: usize) -> Kernel<'_> {
        let pair = &self.chain.pair[t];
        let beta = &self.log_backward[t];
        let incoming = self.incoming(t);
        let shift = beta.iter().copied().filter(|b| b.is_finite()).fold(f64::NEG_INFINITY, f64::max);
        let pre: Vec<f64> = beta.iter().map(|b| (shift - b).exp()).collect();
        let post: Vec<f64> = incoming.iter().map(|g| (g - shift).exp()).collect();
        let max_pre = pre.iter().copied().fold(0.0, f64::max);
        let linear_ok = max_pre.is_finite()
            && post.iter().all(|v| v.is_finite())
            && max_pre.ln() + pair.max_abs() < 600.0;
        let exp_tables = match (linear_ok, pair) {
            (true, PairPotential::Separable { tables, .. }) => {
                tables.iter().map(|tab| tab.iter().map(|v| v.exp()).collect()).collect()
            }
            (true, PairPotential::Dense { table, .. }) => vec![table.iter().map(|v| v.exp()).collect()],
            _ => Vec::new(),
        };
        Kernel {
            pair,
            beta,
            incoming,
            pre,
            post,
            exp_tables,
            linear: linear_ok,
        }
    }

    /// Joint marginal of `(s_i, s_j)`, `i <= j`, row-major.
    pub fn joint(&self, i: usize, j: usize) -> Vec<f64> {
        assert!(i <= j && j < self.chain.len());
        let from = self.chain.state_size(i);
        let to = self.chain.state_size(j);
        let kernels: Vec<Kernel<'_>> = (i..j).map(|t| self.kernel(t)).collect();
        let mut out = vec![0.0; from * to];
        for x in 0..from {
            let px = self.node_marginals[i][x];
            if px <= 0.0 {
                continue;
            }
            let row = propagate_delta(&kernels, from, x);
            for (y, r) in row.iter().enumerate() {
                out[x * to + y] = px * r;
            }
        }
        out
    }

    /// `H(s_i, s_j)` in nats without materializing the joint table.
    pub fn joint_entropy(&self, i: usize, j: usize) -> f64 {
        assert!(i <= j && j < self.chain.len());
        if i == j {
            return self.node_entropy(i);
        }
        if j == i + 1 {
            return self.pair_entropy(i);
        }
        let from = self.chain.state_size(i);
        let kernels: Vec<Kernel<'_>> = (i..j).map(|t| self.kernel(t)).collect();
        let marginal = &self.node_marginals[i];
        // H(s_i, s_j) = H(s_i) + sum_x p(x) H(s_j | s_i = x)
        let conditional = self.execution.sum_range(0..from, |x| {
            let px = marginal[x];
            if px <= 0.0 {
                return 0.0;
            }
            let row = propagate_delta(&kernels, from, x);
            px * row.iter().map(|&r| plogp(r)).sum::<f64>()
        });
        self.node_entropy(i) + conditional
    }

    /// `I(s_i; s_j)` in nats.
    pub fn mutual_information(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        if i == j {
            return self.node_entropy(i);
        }
        self.node_entropy(i) + self.node_entropy(j) - self.joint_entropy(i, j)
    }
}

fn propagate_delta(kernels: &[Kernel<'_>], from: usize, x: usize) -> Vec<f64> {
    let mut dist = vec![0.0; from];
    dist[x] = 1.0;
    for k in kernels {
        dist = k.apply(&dist);
    }
    dist
}

/// Transition kernel `K(x, y) = exp(P(x, y) + g(y) - beta(x))` of one chain
/// step, applied in the linear domain when the dynamic range allows.
struct Kernel<'a> {
    pair: &'a PairPotential,
    beta: &'a [f64],
    incoming: Vec<f64>,
    pre: Vec<f64>,
    post: Vec<f64>,
    exp_tables: Vec<Vec<f64>>,
    linear: bool,
}

impl Kernel<'_> {
    fn apply(&self, dist: &[f64]) -> Vec<f64> {
        if self.linear {
            self.apply_linear(dist)
        } else {
            self.apply_log(dist)
        }
    }

    fn apply_linear(&self, dist: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = dist.iter().zip(&self.pre).map(|(d, p)| d * p).collect();
        let mixed = match self.pair {
            PairPotential::Separable { layout, .. } => {
                let mut cur = scaled;
                let mut next = vec![0.0; cur.len()];
                for (r, table) in self.exp_tables.iter().enumerate() {
                    linear_digit_stage(&cur, &mut next, layout.q, layout.stride(r), table);
                    std::mem::swap(&mut cur, &mut next);
                }
                cur
            }
            PairPotential::Dense { from, to, .. } => {
                let table = &self.exp_tables[0];
                let mut out = vec![0.0; *to];
                for x in 0..*from {
                    let s = scaled[x];
                    if s == 0.0 {
                        continue;
                    }
                    for (y, o) in out.iter_mut().enumerate() {
                        *o += s * table[x * to + y];
                    }
                }
                out
            }
        };
        mixed.iter().zip(&self.post).map(|(m, p)| m * p).collect()
    }

    fn apply_log(&self, dist: &[f64]) -> Vec<f64> {
        let logs: Vec<f64> = dist.iter().zip(self.beta).map(|(d, b)| d.ln() - b).collect();
        self.pair
            .forward(&logs)
            .iter()
            .zip(&self.incoming)
            .map(|(m, g)| (m + g).exp())
            .collect()
    }
}

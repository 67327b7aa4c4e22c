//! Exact information quantities of a lattice model at desk scale.
//!
//! Everything is derived from the row chain of the model: rows form a
//! Markov chain, so block entropies follow from adjacent-row conditional
//! entropies and any two rows' joint law from composed row kernels.
//! Entropies are in nats internally; rates are reported in bits/pixel.

use std::f64::consts::LN_2;
use std::fmt::Write as _;
use std::ops::Range;
use std::sync::OnceLock;

use crate::chain::{ChainPosterior, SuperpixelChain};
use crate::error::{RccError, Result};
use crate::lattice::{block_chain, row_chain, LatticeChain};
use crate::model::{ComponentVector, CutsetLayout, LatticeModel};
use crate::moment::{fit, FitOptions, FitResult};
use crate::par::Execution;

/// Exact quantities of one lattice model, computed from its row chain.
pub struct RowOracle<'c> {
    model: &'c LatticeModel,
    post: ChainPosterior<'c>,
    rows: &'c LatticeChain,
    moments: OnceLock<ComponentVector>,
    execution: Execution,
}

impl<'c> RowOracle<'c> {
    /// `rows` must be the row chain of `model`.
    pub fn new(model: &'c LatticeModel, rows: &'c LatticeChain) -> Self {
        Self {
            model,
            post: rows.posterior(),
            rows,
            moments: OnceLock::new(),
            execution: Execution::default(),
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.post = self.post.with_execution(execution);
        self.execution = execution;
        self
    }

    pub fn model(&self) -> &LatticeModel {
        self.model
    }

    pub fn posterior(&self) -> &ChainPosterior<'c> {
        &self.post
    }

    pub fn execution(&self) -> Execution {
        self.execution
    }

    fn m(&self) -> usize {
        self.model.shape().rows
    }

    fn n(&self) -> usize {
        self.model.shape().cols
    }

    fn check_rows(&self, rows: &Range<usize>) -> Result<()> {
        if rows.start >= rows.end || rows.end > self.m() {
            return Err(RccError::InvalidModel(format!("row block {rows:?} outside lattice of {} rows", self.m())));
        }
        Ok(())
    }

    pub fn log_partition(&self) -> f64 {
        self.post.log_partition()
    }

    /// Entropy of the whole lattice.
    pub fn entropy(&self) -> f64 {
        self.post.entropy()
    }

    /// Expected statistic of the whole lattice.
    pub fn moments(&self) -> &ComponentVector {
        self.moments.get_or_init(|| self.rows.moments(&self.post))
    }

    pub fn block_moment(&self, rows: Range<usize>) -> Result<ComponentVector> {
        self.moments().restrict_rows(rows)
    }

    /// `H(X_rows)` by the chain rule along the rows.
    pub fn block_entropy(&self, rows: Range<usize>) -> Result<f64> {
        self.check_rows(&rows)?;
        Ok(self.post.block_entropy(rows.start, rows.end - 1))
    }

    pub fn row_entropy(&self, i: usize) -> f64 {
        self.post.node_entropy(i)
    }

    /// `H(r_{i+1} | r_i)`.
    pub fn conditional_row_entropy(&self, i: usize) -> f64 {
        self.post.conditional_entropy(i)
    }

    /// `H(r_i, r_j)`.
    pub fn two_row_entropy(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.post.joint_entropy(i, j)
    }

    /// `I(r_i; r_j)`.
    pub fn mutual_info_rows(&self, i: usize, j: usize) -> f64 {
        self.post.mutual_information(i, j)
    }

    /// `H(X_S | X_dS)` for a strip strictly inside the lattice.
    pub fn strip_conditional_entropy(&self, rows: Range<usize>) -> Result<f64> {
        self.check_rows(&rows)?;
        if rows.start == 0 || rows.end >= self.m() {
            return Err(RccError::InvalidModel(format!("strip {rows:?} needs a row above and below")));
        }
        let above = rows.start - 1;
        let below = rows.end;
        Ok(self.post.block_entropy(above, below) - self.post.joint_entropy(above, below))
    }

    /// Strip rate in bits/pixel.
    pub fn strip_rate(&self, rows: Range<usize>) -> Result<f64> {
        let height = rows.len();
        Ok(self.strip_conditional_entropy(rows)? / (height * self.n()) as f64 / LN_2)
    }

    /// Moment-matching reduced model of the line `rows`.
    pub fn fit_line(&self, rows: Range<usize>, options: &FitOptions) -> Result<LineFit> {
        let target = self.block_moment(rows.clone())?;
        let init = self.model.params().restrict_rows(rows.clone())?;
        let result = fit(self.model.family(), &target, &init, options)?;
        LineFit::from_fit(self.model, rows.clone(), result, self.block_entropy(rows)?, options)
    }

    /// `H(X_rows)` for an arbitrary ascending set of rows, computed as the
    /// entropy of the induced Markov chain over those rows with dense
    /// conditional tables.
    pub fn entropy_of_rows(&self, rows: &[usize]) -> Result<f64> {
        if rows.is_empty() || rows.windows(2).any(|w| w[0] >= w[1]) || *rows.last().unwrap() >= self.m() {
            return Err(RccError::InvalidModel("row set must be ascending and inside the lattice".into()));
        }
        let s = self.rows.chain().state_size(0);
        if s.saturating_mul(s) > 1 << 22 {
            return Err(RccError::StateSpaceTooLarge {
                states: (s as u128) * (s as u128),
                cap: 1 << 22,
            });
        }
        let mut node = vec![vec![0.0; s]; rows.len()];
        node[0] = self.post.node_marginal(rows[0]).iter().map(|p| p.ln()).collect();
        let pairs: Vec<Vec<f64>> = self.execution.map(&rows.windows(2).collect::<Vec<_>>(), |w| {
            let joint = self.post.joint(w[0], w[1]);
            let marginal = self.post.node_marginal(w[0]);
            joint
                .iter()
                .enumerate()
                .map(|(idx, p)| (p / marginal[idx / s]).ln())
                .collect()
        });
        let chain = SuperpixelChain::new(node, pairs)?;
        Ok(chain.posterior().entropy())
    }
}

/// Rows of a block of `height` rows centred in `rows` rows.
pub fn centered(rows: usize, height: usize) -> Range<usize> {
    let start = rows.saturating_sub(height) / 2;
    start..start + height
}

/// A line coded with its moment-matching reduced model.
#[derive(Clone, Debug)]
pub struct LineFit {
    pub rows: Range<usize>,
    pub fit: FitResult,
    /// `Phi_L(theta*) - <theta*, mu_L>` with `mu_L` the true line moment:
    /// the expected codelength of the line in nats.
    pub cross_entropy: f64,
    /// Entropy of the fitted reduced model.
    pub reduced_entropy: f64,
    /// `H(X_L)` under the true model.
    pub true_entropy: f64,
}

impl LineFit {
    fn from_fit(model: &LatticeModel, rows: Range<usize>, result: FitResult, true_entropy: f64, options: &FitOptions) -> Result<Self> {
        let deviation = result.achieved_moment.max_abs_diff(&result.target_moment);
        if deviation > options.tolerance {
            return Err(RccError::MomentMismatch {
                deviation,
                tolerance: options.tolerance,
            });
        }
        let reduced = LatticeModel::new(model.family().clone(), result.theta_hat.clone())?;
        let chain = block_chain(&reduced, options.cap)?;
        let post = chain.posterior();
        let cross_entropy = post.log_partition() - result.theta_hat.dot(&result.target_moment);
        Ok(Self {
            rows,
            cross_entropy,
            reduced_entropy: post.entropy(),
            true_entropy,
            fit: result,
        })
    }

    /// `D(X_L || X~_L)` in nats.
    pub fn divergence(&self) -> f64 {
        self.cross_entropy - self.true_entropy
    }

    /// Line rate in bits/pixel.
    pub fn rate(&self) -> f64 {
        self.cross_entropy / self.fit.theta_hat.shape().sites() as f64 / LN_2
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateReport {
    pub line_height: usize,
    pub strip_height: usize,
    pub line_rate: f64,
    pub strip_rate: f64,
    /// Weights `(k+1) n_L / M` and `k n_S / M`; absent without a layout.
    pub combined_exact: Option<f64>,
    /// Weights `n_L / (n_L + n_S)` and `n_S / (n_L + n_S)`.
    pub combined_approx: f64,
}

impl RateReport {
    pub fn new(line_height: usize, strip_height: usize, line_rate: f64, strip_rate: f64, k: Option<usize>) -> Self {
        let combined_exact = k.map(|k| {
            let lines = ((k + 1) * line_height) as f64;
            let strips = (k * strip_height) as f64;
            (lines * line_rate + strips * strip_rate) / (lines + strips)
        });
        let total = (line_height + strip_height) as f64;
        Self {
            line_height,
            strip_height,
            line_rate,
            strip_rate,
            combined_exact,
            combined_approx: (line_height as f64 * line_rate + strip_height as f64 * strip_rate) / total,
        }
    }
}

/// Exact rates of coding one image layout block by block.
#[derive(Clone, Debug)]
pub struct LayoutRates {
    pub report: RateReport,
    pub lines: Vec<LineFit>,
    /// `H(X_S | X_dS)` per strip, nats.
    pub strip_entropies: Vec<f64>,
}

impl LayoutRates {
    pub fn theta_star(&self) -> Vec<ComponentVector> {
        self.lines.iter().map(|l| l.fit.theta_hat.clone()).collect()
    }
}

/// Expected bits/pixel of the two-stage code on `layout`: every line under
/// its own moment-matching reduced model, every strip conditioned on its
/// boundary rows under the true model.
pub fn total_rate(oracle: &RowOracle<'_>, layout: &CutsetLayout, options: &FitOptions) -> Result<LayoutRates> {
    if layout.rows() != oracle.m() {
        return Err(RccError::LayoutMismatch(format!(
            "layout covers {} rows, lattice has {}",
            layout.rows(),
            oracle.m()
        )));
    }
    let n = oracle.n() as f64;
    let exec = oracle.execution();
    let lines: Vec<LineFit> = exec
        .map(&layout.line_ranges(), |r| oracle.fit_line(r.clone(), options))
        .into_iter()
        .collect::<Result<_>>()?;
    let strip_entropies: Vec<f64> = exec
        .map(&layout.strip_ranges(), |r| oracle.strip_conditional_entropy(r.clone()))
        .into_iter()
        .collect::<Result<_>>()?;
    let k = layout.k();
    let line_rate = lines.iter().map(|l| l.cross_entropy).sum::<f64>() / ((k + 1) * layout.line_height()) as f64 / n / LN_2;
    let strip_rate = strip_entropies.iter().sum::<f64>() / (k * layout.strip_height()) as f64 / n / LN_2;
    Ok(LayoutRates {
        report: RateReport::new(layout.line_height(), layout.strip_height(), line_rate, strip_rate, Some(k)),
        lines,
        strip_entropies,
    })
}

/// Line/strip rates of centred blocks (rows far from the lattice edge
/// stand in for the stationary middle rows).
pub fn centered_rates(
    oracle: &RowOracle<'_>,
    line_height: usize,
    strip_height: usize,
    options: &FitOptions,
) -> Result<RateReport> {
    let m = oracle.m();
    let line = oracle.fit_line(centered(m, line_height), options)?;
    let strip = oracle.strip_rate(centered(m, strip_height))?;
    let k = crate::model::build_layout(m, line_height, strip_height).ok().map(|l| l.k());
    Ok(RateReport::new(line_height, strip_height, line.rate(), strip, k))
}

/// Redundancy of coding the lines independently with reduced models, in
/// bits/pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct RedundancyReport {
    /// `(1/|V|) sum_i I(first row of L_i; last row of L_{i-1})`.
    pub correlation_term: f64,
    /// `(1/|V|) sum_i D(X_{L_i} || X~_{L_i})`.
    pub distribution_term: f64,
    pub total: f64,
    /// `(1/|V|) [sum_i (H(X_{L_i}) + D_i) - H(X_U)]` from the induced row
    /// chain on the lines.
    pub direct_total: f64,
    /// Mean information, weighted `n_S / (n_L + n_S)` per strip row.
    pub correlation_approx: f64,
    /// Mean divergence, weighted `n_L / (n_L + n_S)` per line row.
    pub distribution_approx: f64,
}

pub fn redundancy_decomposition(oracle: &RowOracle<'_>, layout: &CutsetLayout, lines: &[LineFit]) -> Result<RedundancyReport> {
    if lines.len() != layout.line_count() || layout.rows() != oracle.m() {
        return Err(RccError::LayoutMismatch("line fits do not match the layout".into()));
    }
    let pixels = (oracle.m() * oracle.n()) as f64;
    let ranges = layout.line_ranges();
    let infos: Vec<f64> = ranges
        .windows(2)
        .map(|w| oracle.mutual_info_rows(w[0].end - 1, w[1].start))
        .collect();
    let divergences: Vec<f64> = lines.iter().map(LineFit::divergence).collect();
    let info_sum: f64 = infos.iter().sum();
    let div_sum: f64 = divergences.iter().sum();
    let correlation_term = info_sum / pixels / LN_2;
    let distribution_term = div_sum / pixels / LN_2;

    let union: Vec<usize> = ranges.iter().flat_map(|r| r.clone()).collect();
    let h_union = oracle.entropy_of_rows(&union)?;
    let marginal_sum: f64 = lines.iter().map(|l| l.true_entropy + l.divergence()).sum();
    let direct_total = (marginal_sum - h_union) / pixels / LN_2;

    let per_row = (layout.line_height() + layout.strip_height()) as f64 * oracle.n() as f64;
    Ok(RedundancyReport {
        correlation_term,
        distribution_term,
        total: correlation_term + distribution_term,
        direct_total,
        correlation_approx: info_sum / infos.len().max(1) as f64 / per_row / LN_2,
        distribution_approx: div_sum / divergences.len() as f64 / per_row / LN_2,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    DegenerateEqual,
    /// Emitted data without an assertion.
    Reported,
}

impl CheckStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
            CheckStatus::DegenerateEqual => "degenerate-equal",
            CheckStatus::Reported => "reported",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LedgerEntry {
    pub check: String,
    pub status: CheckStatus,
    pub value_a: f64,
    pub value_b: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ledger {
    pub entries: Vec<LedgerEntry>,
}

impl Ledger {
    fn push(&mut self, check: impl Into<String>, status: CheckStatus, a: f64, b: f64, detail: impl Into<String>) {
        self.entries.push(LedgerEntry {
            check: check.into(),
            status,
            value_a: a,
            value_b: b,
            detail: detail.into(),
        });
    }

    /// `b > a` strictly (by more than `margin`); equality within `margin` is
    /// degenerate rather than a failure.
    fn ordered(&mut self, check: String, a: f64, b: f64, margin: f64, detail: &str) {
        let status = if (b - a).abs() <= margin {
            CheckStatus::DegenerateEqual
        } else if b > a {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        self.push(check, status, a, b, detail);
    }

    fn identity(&mut self, check: String, lhs: f64, rhs: f64, tolerance: f64, detail: &str) {
        let status = if (lhs - rhs).abs() <= tolerance {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        self.push(check, status, lhs, rhs, detail);
    }

    pub fn falsified(&self) -> bool {
        self.entries.iter().any(|e| e.status == CheckStatus::Fail)
    }

    pub fn get(&self, check: &str) -> Option<&LedgerEntry> {
        self.entries.iter().find(|e| e.check == check)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("check,status,value_a,value_b,detail\n");
        for e in &self.entries {
            writeln!(s, "{},{},{:?},{:?},{}", e.check, e.status.as_str(), e.value_a, e.value_b, e.detail).unwrap();
        }
        s
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    pub max_n: usize,
    /// Strict-ordering margin.
    pub margin: f64,
    /// Tolerance of the recursion identities.
    pub identity_tolerance: f64,
    /// Fit settings for the recursion checks, which need tight fits.
    pub fit: FitOptions,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            max_n: 4,
            margin: 1e-10,
            identity_tolerance: 1e-8,
            fit: FitOptions {
                tolerance: 1e-11,
                ..FitOptions::default()
            },
        }
    }
}

/// Reduced-model quantities on the nested blocks `start..start + n`.
struct Nested {
    start: usize,
    fits: Vec<LineFit>,
    models: Vec<LatticeModel>,
    chains: Vec<LatticeChain>,
}

impl Nested {
    fn new(oracle: &RowOracle<'_>, start: usize, max_n: usize, options: &FitOptions) -> Result<Self> {
        let fits: Vec<LineFit> = oracle
            .execution()
            .map_range(1..max_n + 1, |n| oracle.fit_line(start..start + n, options))
            .into_iter()
            .collect::<Result<_>>()?;
        let models: Vec<LatticeModel> = fits
            .iter()
            .map(|f| LatticeModel::new(oracle.model().family().clone(), f.fit.theta_hat.clone()))
            .collect::<Result<_>>()?;
        let chains = models.iter().map(|m| row_chain(m, options.cap)).collect::<Result<_>>()?;
        Ok(Self {
            start,
            fits,
            models,
            chains,
        })
    }

    fn fit(&self, n: usize) -> &LineFit {
        &self.fits[n - 1]
    }

    /// `D(X_{B_n} || X~_{B_n})` as cross-entropy minus entropy.
    fn divergence(&self, n: usize) -> f64 {
        self.fit(n).divergence()
    }

    /// KL divergence between the marginal on the first `j` rows of the
    /// reduced model on `B_m` and the reduced model on `B_j`.
    fn reduced_marginal_kl(&self, m: usize, j: usize) -> Result<f64> {
        let big = RowOracle::new(&self.models[m - 1], &self.chains[m - 1]);
        let marginal_moment = big.block_moment(0..j)?;
        let small = self.fit(j);
        let small_chain = block_chain(&self.models[j - 1], usize::MAX)?;
        let cross = small_chain.log_partition() - small.fit.theta_hat.dot(&marginal_moment);
        Ok(cross - big.block_entropy(0..j)?)
    }

    /// `H(r_i | r_{i-1})` (1-based rows of the block) under the reduced
    /// model on `B_m`.
    fn reduced_conditional(&self, m: usize, i: usize) -> f64 {
        self.chains[m - 1].posterior().conditional_entropy(i - 2)
    }
}

/// Numeric checks of the rate orderings, the information decay and the
/// divergence recursions. Failures are recorded, not raised.
pub fn verify_propositions(oracle: &RowOracle<'_>, options: &VerifyOptions) -> Result<Ledger> {
    let m = oracle.m();
    let max_n = options.max_n;
    let mut ledger = Ledger::default();
    if max_n < 1 || max_n + 2 > m {
        return Err(RccError::InvalidConfiguration(format!(
            "max_n = {max_n} needs between 1 and {} for a {m}-row lattice",
            m.saturating_sub(2)
        )));
    }
    let rate_fit = FitOptions {
        tolerance: options.fit.tolerance.max(1e-10),
        ..options.fit
    };
    let exec = oracle.execution();
    let strip: Vec<f64> = exec
        .map_range(1..max_n + 1, |n| oracle.strip_rate(centered(m, n)))
        .into_iter()
        .collect::<Result<_>>()?;
    let line: Vec<f64> = exec
        .map_range(1..max_n + 1, |n| oracle.fit_line(centered(m, n), &rate_fit).map(|f| f.rate()))
        .into_iter()
        .collect::<Result<_>>()?;
    for n in 1..max_n {
        ledger.ordered(
            format!("strip_rate_increasing_n{n}"),
            strip[n - 1],
            strip[n],
            options.margin,
            "strip rate bits/pixel at n and n+1",
        );
        ledger.ordered(
            format!("line_rate_decreasing_n{n}"),
            line[n],
            line[n - 1],
            options.margin,
            "line rate bits/pixel at n+1 and n",
        );
    }
    let min_line = line.iter().copied().fold(f64::INFINITY, f64::min);
    let max_strip = strip.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ledger.ordered(
        "min_line_rate_above_max_strip_rate".into(),
        max_strip,
        min_line,
        options.margin,
        "max strip rate and min line rate",
    );

    // information between a fixed row and rows further down
    let max_gap = 5.min(m - 1);
    let upper = m.saturating_sub(max_gap + 1) / 2;
    let info: Vec<f64> = (1..=max_gap).map(|g| oracle.mutual_info_rows(upper, upper + g)).collect();
    for g in 1..max_gap {
        ledger.ordered(
            format!("mutual_info_decreasing_gap{g}"),
            info[g],
            info[g - 1],
            options.margin,
            &format!("I(r_{upper}; r_{{{upper}+g}}) nats at gap g+1 and g"),
        );
    }

    // divergence recursions on nested blocks sharing their first row
    let start = centered(m, max_n).start;
    let nested = Nested::new(oracle, start, max_n, &options.fit)?;
    for n in 2..=max_n {
        let lhs = nested.divergence(n);
        let true_conditional = oracle.conditional_row_entropy(nested.start + n - 2);
        let rhs = nested.divergence(n - 1) - nested.reduced_marginal_kl(n, n - 1)? + nested.reduced_conditional(n, n)
            - true_conditional;
        ledger.identity(
            format!("line_divergence_recursion_n{n}"),
            lhs,
            rhs,
            options.identity_tolerance,
            "D(B_n) and its recursion in nats",
        );
    }
    for n in 3..=max_n {
        let lhs = nested.reduced_marginal_kl(n, n - 1)?;
        let rhs = nested.reduced_marginal_kl(n, n - 2)? - nested.reduced_marginal_kl(n - 1, n - 2)?
            + nested.reduced_conditional(n - 1, n - 1)
            - nested.reduced_conditional(n, n - 1);
        ledger.identity(
            format!("reduced_divergence_recursion_n{n}"),
            lhs,
            rhs,
            options.identity_tolerance,
            "marginal-vs-reduced divergence and its recursion in nats",
        );
    }
    for n in 1..=max_n {
        let d = nested.divergence(n);
        ledger.push(
            format!("line_divergence_n{n}"),
            CheckStatus::Reported,
            d,
            d / n as f64,
            "D(B_n) nats and per row; monotonicity not asserted",
        );
    }
    Ok(ledger)
}

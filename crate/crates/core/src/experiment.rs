//! Experiment specifications and the rate / redundancy / verification
//! sweeps driven by them.
//!
//! A spec is a `key=value` file:
//!
//! ```text
//! rows=24
//! cols=8
//! theta_edge=0.4
//! line_strip_sum=8      # or pairs=1:7,2:6 or line_heights=/strip_heights=
//! blocks=centered       # or layout
//! samples=200
//! ```

use std::collections::BTreeMap;
use std::f64::consts::LN_2;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::PathBuf;

use log::{info, warn};

use crate::chain::state_cap_from_env;
use crate::error::{RccError, Result};
use crate::gibbs::{gibbs_sample, SamplerConfig};
use crate::io::{parse_key_values, parse_list};
use crate::lattice::{block_chain, column_chain, row_chain, Clamp};
use crate::model::{build_layout, ComponentVector, Configuration, LatticeModel, PairwiseFamily, ParameterField};
use crate::moment::{fit, pooled_block_moment, FitOptions, FitResult};
use crate::oracle::{
    centered, redundancy_decomposition, total_rate, verify_propositions, Ledger, RateReport, RedundancyReport, RowOracle,
    VerifyOptions,
};
use crate::par::Execution;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockMode {
    /// One line and one strip in the middle of the lattice.
    Centered,
    /// Every line and strip of a tiling of the whole lattice.
    Layout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub family: PairwiseFamily,
    pub theta_node: f64,
    pub theta_h: f64,
    pub theta_v: f64,
    pub rows: usize,
    pub cols: usize,
    pub pairs: Vec<(usize, usize)>,
    pub blocks: BlockMode,
    /// `sample_count = 0` disables the empirical estimators.
    pub sampler: SamplerConfig,
    pub fit: FitOptions,
    pub max_n: usize,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            family: PairwiseFamily::ising(),
            theta_node: 0.0,
            theta_h: 0.4,
            theta_v: 0.4,
            rows: 24,
            cols: 8,
            pairs: vec![(1, 1)],
            blocks: BlockMode::Centered,
            sampler: SamplerConfig {
                sample_count: 0,
                ..SamplerConfig::default()
            },
            fit: FitOptions {
                cap: state_cap_from_env(),
                ..FitOptions::default()
            },
            max_n: 4,
            output: None,
        }
    }
}

pub const SPEC_KEYS: &[&str] = &[
    "q",
    "node_stat",
    "edge_stat_h",
    "edge_stat_v",
    "theta_node",
    "theta_edge",
    "theta_h",
    "theta_v",
    "rows",
    "cols",
    "pairs",
    "line_heights",
    "strip_heights",
    "line_strip_sum",
    "blocks",
    "burn_in",
    "thinning",
    "seed",
    "samples",
    "fit_tolerance",
    "max_iter",
    "max_n",
    "output",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e| RccError::Parse(format!("{key}: {e}")))
}

fn parse_sizes(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v)).collect()
}

impl ExperimentSpec {
    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_map(&parse_key_values(text)?)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        if let Some(k) = map.keys().find(|k| !SPEC_KEYS.contains(&k.as_str())) {
            return Err(RccError::Parse(format!("unknown spec key {k}")));
        }
        let mut spec = Self::default();
        let get = |k: &str| map.get(k).map(String::as_str);

        let stats = [get("node_stat"), get("edge_stat_h"), get("edge_stat_v")];
        if stats.iter().any(Option::is_some) || get("q").is_some() {
            let [Some(node), Some(h), Some(v)] = stats else {
                return Err(RccError::Parse("q, node_stat, edge_stat_h and edge_stat_v go together".into()));
            };
            let q = parse("q", get("q").ok_or_else(|| RccError::Parse("missing key q".into()))?)?;
            spec.family = PairwiseFamily::new(q, parse_list(node)?, parse_list(h)?, parse_list(v)?)?;
        }
        if let Some(v) = get("theta_node") {
            spec.theta_node = parse("theta_node", v)?;
        }
        if let Some(v) = get("theta_edge") {
            spec.theta_h = parse("theta_edge", v)?;
            spec.theta_v = spec.theta_h;
        }
        if let Some(v) = get("theta_h") {
            spec.theta_h = parse("theta_h", v)?;
        }
        if let Some(v) = get("theta_v") {
            spec.theta_v = parse("theta_v", v)?;
        }
        if let Some(v) = get("rows") {
            spec.rows = parse("rows", v)?;
        }
        if let Some(v) = get("cols") {
            spec.cols = parse("cols", v)?;
        }
        spec.pairs = if let Some(v) = get("pairs") {
            v.split(',')
                .map(|p| {
                    let (l, s) = p
                        .split_once(':')
                        .ok_or_else(|| RccError::Parse(format!("pair {p:?} must be n_L:n_S")))?;
                    Ok((parse("pairs", l)?, parse("pairs", s)?))
                })
                .collect::<Result<_>>()?
        } else if let Some(v) = get("line_strip_sum") {
            let sum: usize = parse("line_strip_sum", v)?;
            (1..sum).map(|l| (l, sum - l)).collect()
        } else {
            let lines = get("line_heights").map_or(Ok(vec![1]), |v| parse_sizes("line_heights", v))?;
            let strips = get("strip_heights").map_or(Ok(vec![1]), |v| parse_sizes("strip_heights", v))?;
            lines.iter().flat_map(|&l| strips.iter().map(move |&s| (l, s))).collect()
        };
        if spec.pairs.iter().any(|&(l, s)| l == 0 || s == 0) {
            return Err(RccError::Parse("line and strip heights must be positive".into()));
        }
        spec.blocks = match get("blocks") {
            None | Some("centered") => BlockMode::Centered,
            Some("layout") => BlockMode::Layout,
            Some(other) => return Err(RccError::Parse(format!("blocks must be centered or layout, not {other}"))),
        };
        if let Some(v) = get("burn_in") {
            spec.sampler.burn_in = parse("burn_in", v)?;
        }
        if let Some(v) = get("thinning") {
            spec.sampler.thinning = parse("thinning", v)?;
        }
        if let Some(v) = get("seed") {
            spec.sampler.seed = parse("seed", v)?;
        }
        if let Some(v) = get("samples") {
            spec.sampler.sample_count = parse("samples", v)?;
        }
        if let Some(v) = get("fit_tolerance") {
            spec.fit.tolerance = parse("fit_tolerance", v)?;
        }
        if let Some(v) = get("max_iter") {
            spec.fit.max_iter = parse("max_iter", v)?;
        }
        if let Some(v) = get("max_n") {
            spec.max_n = parse("max_n", v)?;
        }
        spec.output = get("output").map(PathBuf::from);
        spec.model()?;
        Ok(spec)
    }

    pub fn model(&self) -> Result<LatticeModel> {
        let field = ParameterField::homogeneous(self.rows, self.theta_node, self.theta_h, self.theta_v)?;
        LatticeModel::from_field(self.family.clone(), &field, self.cols)
    }

    pub fn cap(&self) -> usize {
        self.fit.cap
    }

    /// Samples for the empirical estimators (empty when disabled).
    pub fn samples(&self, model: &LatticeModel) -> Result<Vec<Configuration>> {
        if self.sampler.sample_count == 0 {
            return Ok(Vec::new());
        }
        gibbs_sample(model, &self.sampler)
    }

    pub fn verify_options(&self) -> VerifyOptions {
        VerifyOptions {
            max_n: self.max_n,
            ..VerifyOptions::default()
        }
    }
}

/// Line and strip rates estimated from samples as mean negative
/// log-likelihoods, bits/pixel.
#[derive(Clone, Debug)]
pub struct EmpiricalRates {
    pub line_rate: f64,
    pub strip_rate: f64,
    /// Reduced-model parameter fitted to the pooled line moment.
    pub line_fit: FitResult,
}

/// `-log p~(line)` averaged over every listed line of every sample, under
/// one reduced model fitted to the pooled moment.
pub fn empirical_line_rate(
    model: &LatticeModel,
    samples: &[Configuration],
    lines: &[Range<usize>],
    options: &FitOptions,
) -> Result<(f64, FitResult)> {
    let family = model.family();
    let target = pooled_block_moment(samples, lines, family)?;
    let init = ComponentVector::zeros(target.shape());
    let result = fit(family, &target, &init, options)?;
    let reduced = LatticeModel::new(family.clone(), result.theta_hat.clone())?;
    let log_z = block_chain(&reduced, options.cap)?.log_partition();
    // mean NLL = Phi(theta) - <theta, empirical moment>
    let nll = log_z - result.theta_hat.dot(&target);
    Ok((nll / target.shape().sites() as f64 / LN_2, result))
}

/// `-log p(strip | boundary rows)` averaged over every listed strip of
/// every sample.
pub fn empirical_strip_rate(
    model: &LatticeModel,
    samples: &[Configuration],
    strips: &[Range<usize>],
    cap: usize,
    execution: Execution,
) -> Result<f64> {
    let rows = model.shape().rows;
    if strips.iter().any(|r| r.start == 0 || r.end >= rows) {
        return Err(RccError::InvalidConfiguration("strips need a boundary row on both sides".into()));
    }
    let per_sample: Vec<f64> = execution
        .map(samples, |x| {
            strips
                .iter()
                .map(|r| {
                    let chain = column_chain(model, r.clone(), Clamp::both(x.row(r.start - 1), x.row(r.end)), cap)?;
                    let states = chain.states_of(&x.rows(r.clone())?)?;
                    Ok(-chain.posterior().log_prob(&states))
                })
                .sum::<Result<f64>>()
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let pixels = (samples.len() * strips.iter().map(|r| r.len()).sum::<usize>() * model.shape().cols) as f64;
    Ok(per_sample.iter().sum::<f64>() / pixels / LN_2)
}

/// One `(n_L, n_S)` point of a rates sweep. Rates are bits/pixel.
#[derive(Clone, Debug)]
pub struct RatesRow {
    pub exact: RateReport,
    pub k: Option<usize>,
    pub correlation_term: f64,
    pub distribution_term: f64,
    /// Direct divergence of the union of lines (layout mode only).
    pub direct_total: Option<f64>,
    pub empirical: Option<RateReport>,
}

pub const RATES_HEADER: &str = "n_L,n_S,k,line_rate,strip_rate,combined_exact,combined_approx,line_rate_per_row,strip_rate_per_row,correlation_term,distribution_term,redundancy_total,direct_total,empirical_line_rate,empirical_strip_rate,empirical_combined_exact,empirical_combined_approx";

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.12}")).unwrap_or_default()
}

impl RatesRow {
    pub fn csv(&self, cols: usize) -> String {
        let e = &self.exact;
        let n = cols as f64;
        let emp = self.empirical.as_ref();
        [
            e.line_height.to_string(),
            e.strip_height.to_string(),
            self.k.map(|k| k.to_string()).unwrap_or_default(),
            format!("{:.12}", e.line_rate),
            format!("{:.12}", e.strip_rate),
            opt(e.combined_exact),
            format!("{:.12}", e.combined_approx),
            format!("{:.12}", e.line_rate * n),
            format!("{:.12}", e.strip_rate * n),
            format!("{:.12}", self.correlation_term),
            format!("{:.12}", self.distribution_term),
            format!("{:.12}", self.correlation_term + self.distribution_term),
            opt(self.direct_total),
            opt(emp.map(|r| r.line_rate)),
            opt(emp.map(|r| r.strip_rate)),
            opt(emp.and_then(|r| r.combined_exact)),
            opt(emp.map(|r| r.combined_approx)),
        ]
        .join(",")
    }
}

#[derive(Clone, Debug, Default)]
pub struct Sweep {
    pub rows: Vec<RatesRow>,
    /// Pairs left out, with the reason.
    pub skipped: Vec<((usize, usize), String)>,
}

impl Sweep {
    pub fn to_csv(&self, cols: usize) -> String {
        let mut s = String::from(RATES_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.csv(cols));
            s.push('\n');
        }
        s
    }

    /// Orderings the rates are expected to follow, each line `OK` or
    /// `FLAG`. Flags are findings, not failures of the sweep itself.
    pub fn ordering_report(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut sums: BTreeMap<usize, Vec<&RatesRow>> = BTreeMap::new();
        for r in &self.rows {
            sums.entry(r.exact.line_height + r.exact.strip_height).or_default().push(r);
        }
        for (sum, rows) in sums {
            if rows.len() < 2 || !rows.iter().any(|r| r.exact.line_height == 1) {
                continue;
            }
            for (name, value) in [
                ("combined_approx", Box::new(|r: &RatesRow| Some(r.exact.combined_approx)) as Box<dyn Fn(&RatesRow) -> Option<f64>>),
                ("combined_exact", Box::new(|r: &RatesRow| r.exact.combined_exact)),
                ("empirical_combined_approx", Box::new(|r: &RatesRow| r.empirical.as_ref().map(|e| e.combined_approx))),
            ] {
                let vals: Vec<(usize, f64)> = rows
                    .iter()
                    .filter_map(|r| value(r).map(|v| (r.exact.line_height, v)))
                    .collect();
                if vals.len() < 2 {
                    continue;
                }
                let (best, best_v) = vals.iter().cloned().fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
                let at_one = vals.iter().find(|v| v.0 == 1).map_or(f64::NAN, |v| v.1);
                let status = if best == 1 { "OK" } else { "FLAG" };
                out.push(format!(
                    "{status} n_L+n_S={sum} {name}: minimised at n_L={best} ({best_v:.7}); n_L=1 gives {at_one:.7} (excess {:.3e})",
                    at_one - best_v
                ));
            }
        }
        out
    }
}

/// Exact (and, with samples, empirical) rates for every pair of the spec.
pub fn run_rates_sweep(spec: &ExperimentSpec, execution: Execution) -> Result<Sweep> {
    let model = spec.model()?;
    let chain = row_chain(&model, spec.cap())?;
    let oracle = RowOracle::new(&model, &chain).with_execution(execution);
    let samples = spec.samples(&model)?;
    let m = spec.rows;
    let n = spec.cols as f64;

    let mut sweep = Sweep::default();
    let mut todo = Vec::new();
    for &(nl, ns) in &spec.pairs {
        let reason = match spec.blocks {
            BlockMode::Layout => build_layout(m, nl, ns).err().map(|e| e.to_string()),
            BlockMode::Centered if nl.max(ns + 2) > m => Some(format!("{m} rows cannot hold the centred blocks")),
            BlockMode::Centered => None,
        };
        match reason {
            Some(r) => {
                warn!("skipping (n_L, n_S) = ({nl}, {ns}): {r}");
                sweep.skipped.push(((nl, ns), r));
            }
            None => todo.push((nl, ns)),
        }
    }

    let results: Vec<Result<RatesRow>> = execution.map(&todo, |&(nl, ns)| {
        info!("rates for (n_L, n_S) = ({nl}, {ns})");
        let (line_blocks, strip_blocks, row) = match spec.blocks {
            BlockMode::Layout => {
                let layout = build_layout(m, nl, ns)?;
                let rates = total_rate(&oracle, &layout, &spec.fit)?;
                let red: Option<RedundancyReport> = match redundancy_decomposition(&oracle, &layout, &rates.lines) {
                    Ok(r) => Some(r),
                    Err(RccError::StateSpaceTooLarge { .. }) => None,
                    Err(e) => return Err(e),
                };
                // without the direct check the decomposition terms come from
                // the per-line quantities alone
                let (corr, dist) = match &red {
                    Some(r) => (r.correlation_term, r.distribution_term),
                    None => {
                        let pixels = (m as f64) * n * LN_2;
                        let ranges = layout.line_ranges();
                        let info: f64 = ranges.windows(2).map(|w| oracle.mutual_info_rows(w[0].end - 1, w[1].start)).sum();
                        let div: f64 = rates.lines.iter().map(|l| l.divergence()).sum();
                        (info / pixels, div / pixels)
                    }
                };
                let row = RatesRow {
                    exact: rates.report,
                    k: Some(layout.k()),
                    correlation_term: corr,
                    distribution_term: dist,
                    direct_total: red.map(|r| r.direct_total),
                    empirical: None,
                };
                (layout.line_ranges(), layout.strip_ranges(), row)
            }
            BlockMode::Centered => {
                let line_rows = centered(m, nl);
                let line = oracle.fit_line(line_rows.clone(), &spec.fit)?;
                let strip_rows = centered(m, ns);
                let strip_rate = oracle.strip_rate(strip_rows.clone())?;
                // information between consecutive lines, `n_S + 1` rows apart
                let gap = centered(m, ns + 2);
                let info = oracle.mutual_info_rows(gap.start, gap.end - 1);
                let per = (nl + ns) as f64 * n * LN_2;
                let k = build_layout(m, nl, ns).ok().map(|l| l.k());
                let row = RatesRow {
                    exact: RateReport::new(nl, ns, line.rate(), strip_rate, k),
                    k,
                    correlation_term: info / per,
                    distribution_term: line.divergence() / per,
                    direct_total: None,
                    empirical: None,
                };
                (vec![line_rows], vec![strip_rows], row)
            }
        };
        let mut row = row;
        if !samples.is_empty() {
            // too few samples can put the pooled moment on the hull boundary;
            // that blanks the empirical columns rather than the whole sweep
            match empirical_line_rate(&model, &samples, &line_blocks, &spec.fit) {
                Ok((line_rate, _)) => {
                    let strip_rate = empirical_strip_rate(&model, &samples, &strip_blocks, spec.cap(), Execution::Sequential)?;
                    row.empirical = Some(RateReport::new(nl, ns, line_rate, strip_rate, row.k));
                }
                Err(e @ (RccError::HullBoundary { .. } | RccError::DidNotConverge { .. })) => {
                    warn!("no empirical rates for ({nl}, {ns}): {e}");
                }
                Err(e) => return Err(e),
            }
        }
        Ok(row)
    });
    sweep.rows = results.into_iter().collect::<Result<_>>()?;
    Ok(sweep)
}

pub const REDUNDANCY_HEADER: &str =
    "n_L,n_S,k,correlation_term,distribution_term,total,direct_total,correlation_approx,distribution_approx";

/// Layout pairs left out of a sweep, with the reason.
pub type Skipped = Vec<((usize, usize), String)>;

/// Exact redundancy decomposition for every pair that tiles the lattice.
pub fn run_redundancy(spec: &ExperimentSpec, execution: Execution) -> Result<(String, Skipped)> {
    let model = spec.model()?;
    let chain = row_chain(&model, spec.cap())?;
    let oracle = RowOracle::new(&model, &chain).with_execution(execution);
    let mut csv = String::from(REDUNDANCY_HEADER);
    csv.push('\n');
    let mut skipped = Vec::new();
    for &(nl, ns) in &spec.pairs {
        let layout = match build_layout(spec.rows, nl, ns) {
            Ok(l) => l,
            Err(e) => {
                warn!("skipping (n_L, n_S) = ({nl}, {ns}): {e}");
                skipped.push(((nl, ns), e.to_string()));
                continue;
            }
        };
        let rates = total_rate(&oracle, &layout, &spec.fit)?;
        let r = redundancy_decomposition(&oracle, &layout, &rates.lines)?;
        writeln!(
            csv,
            "{nl},{ns},{},{:.12},{:.12},{:.12},{:.12},{:.12},{:.12}",
            layout.k(),
            r.correlation_term,
            r.distribution_term,
            r.total,
            r.direct_total,
            r.correlation_approx,
            r.distribution_approx
        )
        .unwrap();
    }
    Ok((csv, skipped))
}

pub fn run_verify(spec: &ExperimentSpec, execution: Execution) -> Result<Ledger> {
    let model = spec.model()?;
    let chain = row_chain(&model, spec.cap())?;
    let oracle = RowOracle::new(&model, &chain).with_execution(execution);
    verify_propositions(&oracle, &spec.verify_options())
}

/// Reduced-model parameters of every line of `layout` under the exact
/// oracle, for the codec header.
pub fn exact_line_parameters(
    model: &LatticeModel,
    layout: &crate::model::CutsetLayout,
    options: &FitOptions,
    execution: Execution,
) -> Result<Vec<ComponentVector>> {
    let chain = row_chain(model, options.cap)?;
    let oracle = RowOracle::new(model, &chain).with_execution(execution);
    execution
        .map(&layout.line_ranges(), |r| Ok(oracle.fit_line(r.clone(), options)?.fit.theta_hat))
        .into_iter()
        .collect()
}

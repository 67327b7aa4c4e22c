//! Moment matching: empirical moments, the empirical cross-entropy
//! objective `Phi_U(theta) - <mu, theta>` of a reduced model on a block, its
//! gradient, and a backtracking gradient-descent fit.

use std::fmt::Write as _;
use std::ops::Range;

use crate::chain::DEFAULT_STATE_CAP;
use crate::error::{RccError, Result};
use crate::lattice::block_chain;
use crate::model::{statistic, ComponentVector, Configuration, LatticeModel, LatticeShape, PairwiseFamily};

/// Mean statistic over samples of one block shape.
pub fn empirical_moment(samples: &[Configuration], family: &PairwiseFamily) -> Result<ComponentVector> {
    let first = samples
        .first()
        .ok_or_else(|| RccError::InvalidConfiguration("empirical moment needs at least one sample".into()))?;
    let shape = first.shape();
    let mut acc = ComponentVector::zeros(shape);
    for sample in samples {
        if sample.shape() != shape {
            return Err(RccError::InvalidConfiguration("samples have different shapes".into()));
        }
        sample.check_alphabet(family.q())?;
        let t = statistic(sample, family);
        acc.values_mut().iter_mut().zip(t.values()).for_each(|(a, v)| *a += v);
    }
    let n = samples.len() as f64;
    acc.values_mut().iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Moment of a block pooled over several row ranges of several images:
/// every `(image, range)` pair counts as one observation of the block.
pub fn pooled_block_moment(
    images: &[Configuration],
    ranges: &[Range<usize>],
    family: &PairwiseFamily,
) -> Result<ComponentVector> {
    let mut blocks = Vec::with_capacity(images.len() * ranges.len());
    for image in images {
        for range in ranges {
            blocks.push(image.rows(range.clone())?);
        }
    }
    empirical_moment(&blocks, family)
}

/// Moment of the family at `theta = 0` (uniform distribution).
pub fn uniform_moment(shape: LatticeShape, family: &PairwiseFamily) -> ComponentVector {
    let mean = |t: &[f64]| t.iter().sum::<f64>() / t.len() as f64;
    let (node, h, v) = (mean(family.node_table()), mean(family.horiz_table()), mean(family.vert_table()));
    let mut out = ComponentVector::zeros(shape);
    for r in 0..shape.rows {
        for c in 0..shape.cols {
            *out.node_mut(r, c) = node;
            if c + 1 < shape.cols {
                *out.horiz_mut(r, c) = h;
            }
            if r + 1 < shape.rows {
                *out.vert_mut(r, c) = v;
            }
        }
    }
    out
}

/// `(1 - blend) * target + blend * uniform`, pulling a degenerate empirical
/// moment back inside the hull.
pub fn shrink_toward_uniform(target: &ComponentVector, family: &PairwiseFamily, blend: f64) -> ComponentVector {
    let uniform = uniform_moment(target.shape(), family);
    let values = target
        .values()
        .iter()
        .zip(uniform.values())
        .map(|(t, u)| (1.0 - blend) * t + blend * u)
        .collect();
    ComponentVector::from_values(target.shape(), values).expect("same shape")
}

/// Objective value and gradient of the reduced model at `theta`.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub objective: f64,
    pub gradient: ComponentVector,
    pub moment: ComponentVector,
}

fn reduced(family: &PairwiseFamily, theta: &ComponentVector) -> Result<LatticeModel> {
    LatticeModel::new(family.clone(), theta.clone())
}

pub fn evaluate(family: &PairwiseFamily, target: &ComponentVector, theta: &ComponentVector, cap: usize) -> Result<Evaluation> {
    if target.shape() != theta.shape() {
        return Err(RccError::InvalidModel("target and parameter shapes differ".into()));
    }
    let lc = block_chain(&reduced(family, theta)?, cap)?;
    let post = lc.posterior();
    let moment = lc.moments(&post);
    let objective = post.log_partition() - target.dot(theta);
    let values = moment.values().iter().zip(target.values()).map(|(m, t)| m - t).collect();
    Ok(Evaluation {
        objective,
        gradient: ComponentVector::from_values(theta.shape(), values)?,
        moment,
    })
}

/// `Phi_U(theta) - <target, theta>`.
pub fn objective(family: &PairwiseFamily, target: &ComponentVector, theta: &ComponentVector, cap: usize) -> Result<f64> {
    if target.shape() != theta.shape() {
        return Err(RccError::InvalidModel("target and parameter shapes differ".into()));
    }
    Ok(block_chain(&reduced(family, theta)?, cap)?.log_partition() - target.dot(theta))
}

/// `mu(theta) - target`.
pub fn objective_gradient(
    family: &PairwiseFamily,
    target: &ComponentVector,
    theta: &ComponentVector,
    cap: usize,
) -> Result<ComponentVector> {
    Ok(evaluate(family, target, theta, cap)?.gradient)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearch {
    pub sufficient_decrease: f64,
    pub shrink: f64,
    pub initial_step: f64,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self {
            sufficient_decrease: 1e-4,
            shrink: 0.5,
            initial_step: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub tolerance: f64,
    pub max_iter: usize,
    pub line_search: LineSearch,
    pub cap: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iter: 20_000,
            line_search: LineSearch::default(),
            cap: DEFAULT_STATE_CAP,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub theta_hat: ComponentVector,
    pub final_gradient_norm: f64,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    pub target_moment: ComponentVector,
    pub achieved_moment: ComponentVector,
    pub line_search: LineSearch,
    pub converged: bool,
}

/// Reject targets on or outside the per-component moment hull.
pub fn check_hull(family: &PairwiseFamily, target: &ComponentVector) -> Result<()> {
    let shape = target.shape();
    let bounds = |i: usize| {
        if i < shape.sites() {
            family.node_hull()
        } else if i < shape.sites() + shape.horizontal_edges() {
            family.horiz_hull()
        } else {
            family.vert_hull()
        }
    };
    for (i, &m) in target.values().iter().enumerate() {
        let (lo, hi) = bounds(i);
        if !m.is_finite() || m <= lo || m >= hi {
            return Err(RccError::HullBoundary { index: i });
        }
        if m - lo < 1e-9 || hi - m < 1e-9 {
            log::warn!("target moment component {i} = {m} lies within 1e-9 of the hull boundary");
        }
    }
    Ok(())
}

/// Relative rounding noise tolerated in objective comparisons.
pub const OBJECTIVE_NOISE: f64 = 1e-12;

/// Gradient descent with backtracking on `Phi_U(theta) - <target, theta>`.
///
/// A step is accepted on sufficient decrease. Close to the optimum the
/// objective decrease drops below the rounding noise of `Phi`, so a step
/// whose objective stays within [`OBJECTIVE_NOISE`] (relative) of the
/// current value is also accepted when it meets the derivative form of the
/// sufficient-decrease test, `phi'(a) <= (2c - 1) phi'(0)` (approximate
/// Armijo condition). The objective trace is therefore non-increasing up to
/// that noise level.
pub fn fit(
    family: &PairwiseFamily,
    target: &ComponentVector,
    theta_init: &ComponentVector,
    options: &FitOptions,
) -> Result<FitResult> {
    check_hull(family, target)?;
    let ls = options.line_search;
    let mut theta = theta_init.clone();
    let mut current = evaluate(family, target, &theta, options.cap)?;
    let mut trace = vec![current.objective];
    let mut iterations = 0;
    let result = |theta: ComponentVector, eval: Evaluation, trace: Vec<f64>, iterations, converged| FitResult {
        theta_hat: theta,
        final_gradient_norm: eval.gradient.max_abs(),
        iterations,
        objective_trace: trace,
        target_moment: target.clone(),
        achieved_moment: eval.moment,
        line_search: ls,
        converged,
    };
    loop {
        let grad_inf = current.gradient.max_abs();
        if grad_inf < options.tolerance {
            return Ok(result(theta, current, trace, iterations, true));
        }
        if iterations >= options.max_iter {
            break;
        }
        let g2: f64 = current.gradient.values().iter().map(|g| g * g).sum();
        let mut step = ls.initial_step;
        let mut accepted = None;
        while step > 1e-20 {
            let values = theta
                .values()
                .iter()
                .zip(current.gradient.values())
                .map(|(t, g)| t - step * g)
                .collect();
            let candidate = ComponentVector::from_values(theta.shape(), values)?;
            let eval = evaluate(family, target, &candidate, options.cap)?;
            let armijo = eval.objective <= current.objective - ls.sufficient_decrease * step * g2;
            // directional derivative at the trial point along -g
            let slope: f64 = -eval
                .gradient
                .values()
                .iter()
                .zip(current.gradient.values())
                .map(|(a, b)| a * b)
                .sum::<f64>();
            let noise = OBJECTIVE_NOISE * (1.0 + current.objective.abs());
            let roundoff =
                eval.objective <= current.objective + noise && slope <= -(1.0 - 2.0 * ls.sufficient_decrease) * g2;
            if armijo || roundoff {
                accepted = Some((candidate, eval));
                break;
            }
            step *= ls.shrink;
        }
        iterations += 1;
        match accepted {
            Some((candidate, eval)) => {
                theta = candidate;
                current = eval;
                trace.push(current.objective);
            }
            None => break,
        }
    }
    let gradient_norm = current.gradient.max_abs();
    Err(RccError::DidNotConverge {
        iterations,
        gradient_norm,
        best: Box::new(result(theta, current, trace, iterations, false)),
    })
}

fn join(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "{v:?}").unwrap();
    }
    s
}

fn split(value: &str) -> Result<Vec<f64>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| RccError::Parse(format!("bad number {v:?}: {e}"))))
        .collect()
}

impl FitResult {
    /// Plain-text `key=value` form; parameter tables in normative order.
    pub fn to_key_value(&self) -> String {
        let shape = self.theta_hat.shape();
        let mut s = String::new();
        writeln!(s, "rows={}", shape.rows).unwrap();
        writeln!(s, "cols={}", shape.cols).unwrap();
        writeln!(s, "iterations={}", self.iterations).unwrap();
        writeln!(s, "converged={}", self.converged).unwrap();
        writeln!(s, "final_gradient_norm={:?}", self.final_gradient_norm).unwrap();
        writeln!(s, "line_search_sufficient_decrease={:?}", self.line_search.sufficient_decrease).unwrap();
        writeln!(s, "line_search_shrink={:?}", self.line_search.shrink).unwrap();
        writeln!(s, "line_search_initial_step={:?}", self.line_search.initial_step).unwrap();
        writeln!(s, "theta={}", join(self.theta_hat.values())).unwrap();
        writeln!(s, "target_moment={}", join(self.target_moment.values())).unwrap();
        writeln!(s, "achieved_moment={}", join(self.achieved_moment.values())).unwrap();
        writeln!(s, "objective_trace={}", join(&self.objective_trace)).unwrap();
        s
    }

    pub fn from_key_value(text: &str) -> Result<Self> {
        let map = crate::io::parse_key_values(text)?;
        let get = |k: &str| map.get(k).ok_or_else(|| RccError::Parse(format!("missing key {k}")));
        let int = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|e| RccError::Parse(format!("{k}: {e}"))) };
        let real = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|e| RccError::Parse(format!("{k}: {e}"))) };
        let shape = LatticeShape::new(int("rows")?, int("cols")?)?;
        let vector = |k: &str| -> Result<ComponentVector> { ComponentVector::from_values(shape, split(get(k)?)?) };
        Ok(Self {
            theta_hat: vector("theta")?,
            final_gradient_norm: real("final_gradient_norm")?,
            iterations: int("iterations")?,
            objective_trace: split(get("objective_trace")?)?,
            target_moment: vector("target_moment")?,
            achieved_moment: vector("achieved_moment")?,
            line_search: LineSearch {
                sufficient_decrease: real("line_search_sufficient_decrease")?,
                shrink: real("line_search_shrink")?,
                initial_step: real("line_search_initial_step")?,
            },
            converged: get("converged")?
                .parse()
                .map_err(|e| RccError::Parse(format!("converged: {e}")))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ising_block(rows: usize, cols: usize) -> (PairwiseFamily, LatticeShape) {
        (PairwiseFamily::ising(), LatticeShape::new(rows, cols).unwrap())
    }

    #[test]
    fn objective_at_zero_is_pixel_entropy() {
        let (family, shape) = ising_block(2, 3);
        let target = ComponentVector::from_values(shape, vec![0.3; shape.components()]).unwrap();
        let f = objective(&family, &target, &ComponentVector::zeros(shape), DEFAULT_STATE_CAP).unwrap();
        assert!((f - 6.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_at_zero_for_all_plus_sample() {
        let (family, shape) = ising_block(2, 2);
        let target = statistic(&Configuration::filled(shape, 1), &family);
        let g = objective_gradient(&family, &target, &ComponentVector::zeros(shape), DEFAULT_STATE_CAP).unwrap();
        assert!(g.values().iter().all(|v| (v + 1.0).abs() < 1e-12));
    }

    #[test]
    fn symmetric_samples_cancel() {
        let (family, shape) = ising_block(1, 3);
        let x = Configuration::new(shape, vec![1, 0, 1]).unwrap();
        let y = Configuration::new(shape, vec![0, 1, 0]).unwrap();
        let m = empirical_moment(&[x.clone(), y], &family).unwrap();
        assert!((0..3).all(|c| m.node(0, c).abs() < 1e-15));
        let single = empirical_moment(std::slice::from_ref(&x), &family).unwrap();
        assert_eq!(single, statistic(&x, &family));
    }

    #[test]
    fn zero_target_fits_zero() {
        let (family, shape) = ising_block(2, 3);
        let target = ComponentVector::zeros(shape);
        let init = ComponentVector::from_values(shape, vec![0.2; shape.components()]).unwrap();
        let fit = fit(&family, &target, &init, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.theta_hat.max_abs() <= 1e-6);
        assert!(fit.objective_trace.windows(2).all(|w| w[1] <= w[0] + OBJECTIVE_NOISE * (1.0 + w[0].abs())));
    }

    #[test]
    fn hull_boundary_is_rejected() {
        let (family, shape) = ising_block(1, 2);
        let mut target = ComponentVector::zeros(shape);
        *target.horiz_mut(0, 0) = 1.0;
        let err = fit(&family, &target, &ComponentVector::zeros(shape), &FitOptions::default()).unwrap_err();
        assert!(matches!(err, RccError::HullBoundary { index: 2 }));
        let shrunk = shrink_toward_uniform(&target, &family, 1e-6);
        assert!(check_hull(&family, &shrunk).is_ok());
    }

    #[test]
    fn key_value_round_trip() {
        let (family, shape) = ising_block(1, 3);
        let mut target = ComponentVector::zeros(shape);
        *target.horiz_mut(0, 0) = 0.3;
        *target.horiz_mut(0, 1) = 0.25;
        let fit = fit(&family, &target, &ComponentVector::zeros(shape), &FitOptions::default()).unwrap();
        let text = fit.to_key_value();
        assert_eq!(FitResult::from_key_value(&text).unwrap(), fit);
    }
}

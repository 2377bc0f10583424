//! Monte-Carlo stability estimators for synchronously coupled ensembles.

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::PathEnsemble;
use crate::error::{Error, Result};
use crate::model::to_frame;
use crate::numeric::mean_and_se;
use crate::table::Table;

/// Values below this are treated as exact zeros of `|Y|`.
pub const UNDERFLOW_FLOOR: f64 = 1e-300;

/// Norm applied to `Y = X - X~`.
#[derive(Debug, Clone, PartialEq)]
pub enum DiffNorm {
    Euclidean,
    /// `sum_i |u_i'y|` for a row-major orthonormal `u`.
    UFrame(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentCurve {
    pub grid: Vec<f64>,
    pub estimates: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub n: usize,
}

fn check_pair(a: &PathEnsemble, b: &PathEnsemble) -> Result<()> {
    if a.grid() != b.grid() {
        return Err(Error::GridMismatch("coupled ensembles use different grids".into()));
    }
    if a.n_particles() != b.n_particles() || a.dim() != b.dim() {
        return Err(Error::ShapeMismatch("coupled ensembles differ in size".into()));
    }
    Ok(())
}

fn diff_norm(norm: &DiffNorm, m: usize, x: &[f64], y: &[f64], scratch: &mut [f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    match norm {
        DiffNorm::Euclidean => d.iter().map(|v| v * v).sum::<f64>().sqrt(),
        DiffNorm::UFrame(u) => {
            to_frame(u, m, &d, scratch);
            scratch.iter().map(|v| v.abs()).sum()
        }
    }
}

/// `|Y_t|` for every node and path, `[node][particle]`.
fn abs_differences(a: &PathEnsemble, b: &PathEnsemble, norm: &DiffNorm) -> Result<Vec<Vec<f64>>> {
    check_pair(a, b)?;
    let m = a.dim();
    if let DiffNorm::UFrame(u) = norm {
        if u.len() != m * m {
            return Err(Error::DimensionMismatch(u.len(), m * m));
        }
    }
    Ok((0..a.n_nodes())
        .into_par_iter()
        .map(|k| {
            let mut scratch = vec![0.0; m];
            (0..a.n_particles())
                .map(|p| diff_norm(norm, m, a.state(k, p), b.state(k, p), &mut scratch))
                .collect()
        })
        .collect())
}

/// Sample mean and SE of `|Y_t|` per node.
pub fn estimate_moment_curve(
    a: &PathEnsemble,
    b: &PathEnsemble,
    norm: &DiffNorm,
) -> Result<MomentCurve> {
    let diffs = abs_differences(a, b, norm)?;
    let (estimates, standard_errors) = diffs.iter().map(|d| mean_and_se(d)).unzip();
    Ok(MomentCurve {
        grid: a.grid().to_vec(),
        estimates,
        standard_errors,
        n: a.n_particles(),
    })
}

/// How much room an estimate gets before it counts as a violation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlackPolicy {
    /// Multiple of the standard error.
    pub k: f64,
    /// Relative enlargement of the bound.
    pub relative: f64,
    /// Factor on the bound; `sqrt(m)` when comparing Euclidean estimates to a u-frame bound.
    pub norm_factor: f64,
}

impl Default for SlackPolicy {
    fn default() -> Self {
        Self {
            k: 3.0,
            relative: 0.0,
            norm_factor: 1.0,
        }
    }
}

impl SlackPolicy {
    /// Default policy for a curve computed with `norm` in dimension `m`.
    pub fn for_norm(norm: &DiffNorm, m: usize) -> Self {
        Self {
            norm_factor: match norm {
                DiffNorm::Euclidean => (m as f64).sqrt(),
                DiffNorm::UFrame(_) => 1.0,
            },
            ..Self::default()
        }
    }

    pub fn with_relative(mut self, r: f64) -> Self {
        self.relative = r;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub grid: Vec<f64>,
    pub estimates: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// Bound after the norm factor and relative slack.
    pub bounds: Vec<f64>,
    pub flags: Vec<bool>,
    pub flagged: usize,
    pub worst_excess: f64,
    pub pass: bool,
    pub policy: SlackPolicy,
}

impl BoundReport {
    /// CSV rows `(t, estimate, se, bound, flag)`.
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["t", "estimate", "se", "bound", "flag"]);
        for i in 0..self.grid.len() {
            t.push(vec![
                self.grid[i],
                self.estimates[i],
                self.standard_errors[i],
                self.bounds[i],
                if self.flags[i] { 1.0 } else { 0.0 },
            ]);
        }
        t
    }
}

/// Flags nodes with `estimate - k SE > bound`.
pub fn check_moment_bound(curve: &MomentCurve, bound: &[f64], policy: SlackPolicy) -> Result<BoundReport> {
    if bound.len() != curve.grid.len() {
        return Err(Error::GridMismatch(format!(
            "{} bound values for {} nodes",
            bound.len(),
            curve.grid.len()
        )));
    }
    let bounds: Vec<f64> = bound
        .iter()
        .map(|b| b * policy.norm_factor * (1.0 + policy.relative))
        .collect();
    let excess: Vec<f64> = curve
        .estimates
        .iter()
        .zip(&curve.standard_errors)
        .zip(&bounds)
        .map(|((e, s), b)| e - policy.k * s - b)
        .collect();
    let flags: Vec<bool> = excess.iter().map(|&x| x > 0.0).collect();
    let flagged = flags.iter().filter(|&&f| f).count();
    Ok(BoundReport {
        grid: curve.grid.clone(),
        estimates: curve.estimates.clone(),
        standard_errors: curve.standard_errors.clone(),
        bounds,
        flags,
        flagged,
        worst_excess: excess.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        pass: flagged == 0,
        policy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovFit {
    pub alpha: f64,
    pub lambda_hat: f64,
    pub intercept: f64,
    pub fit_window: [f64; 2],
    /// Root mean square residual of the log fit.
    pub residual: f64,
    pub nodes_used: usize,
    /// Nodes in the window skipped because the estimate was zero.
    pub zero_nodes_excluded: usize,
}

/// Least squares of `log E|Y_t|` against `(t - t0)^alpha` on `window`
/// (the whole grid by default).
pub fn fit_moment_lyapunov(
    curve: &MomentCurve,
    alpha: f64,
    window: Option<(f64, f64)>,
) -> Result<LyapunovFit> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::param("alpha", "must be positive"));
    }
    let t0 = curve.grid[0];
    let (ta, tb) = window.unwrap_or((t0, *curve.grid.last().unwrap()));
    if !(tb > ta) || ta < t0 {
        return Err(Error::param("fit_window", "needs t0 <= t_a < t_b"));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut zeros = 0;
    for (&t, &e) in curve.grid.iter().zip(&curve.estimates) {
        if t < ta || t > tb {
            continue;
        }
        if e <= UNDERFLOW_FLOOR {
            zeros += 1;
            continue;
        }
        xs.push((t - t0).powf(alpha));
        ys.push(e.ln());
    }
    if xs.len() < 3 {
        return Err(Error::TooFewNodes(xs.len()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::TooFewNodes(1));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(LyapunovFit {
        alpha,
        lambda_hat: slope,
        intercept,
        fit_window: [ta, tb],
        residual: (ss / n).sqrt(),
        nodes_used: xs.len(),
        zero_nodes_excluded: zeros,
    })
}

/// Longest initial stretch `[t_a, t_b]` on which the curve is positive and
/// resolved, i.e. `SE / estimate <= max_rel_se` at every node.
pub fn resolved_window(curve: &MomentCurve, max_rel_se: f64) -> Option<(f64, f64)> {
    let ok = |k: usize| {
        let e = curve.estimates[k];
        e > UNDERFLOW_FLOOR && curve.standard_errors[k] <= max_rel_se * e
    };
    let first = (0..curve.grid.len()).find(|&k| ok(k))?;
    let mut last = first;
    while last + 1 < curve.grid.len() && ok(last + 1) {
        last += 1;
    }
    (last > first).then(|| (curve.grid[first], curve.grid[last]))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathwiseSummary {
    pub alpha: f64,
    pub tail_window: [f64; 2],
    /// Nearest-rank quantiles over all paths; degenerate paths count as `-inf`.
    pub median: f64,
    pub q90: f64,
    pub max: f64,
    pub degenerate: usize,
    pub n_paths: usize,
    pub values: Vec<f64>,
}

/// Per path, `sup (t - t0)^{-alpha} log|Y_t|` over the last `tail_fraction`
/// of the grid. Paths that stay below the underflow floor on the window are
/// degenerate and contribute `-inf`.
pub fn estimate_pathwise_exponent(
    a: &PathEnsemble,
    b: &PathEnsemble,
    alpha: f64,
    tail_fraction: f64,
    norm: &DiffNorm,
) -> Result<PathwiseSummary> {
    if !(tail_fraction > 0.0 && tail_fraction < 1.0) {
        return Err(Error::param("tail_fraction", "must lie in (0, 1)"));
    }
    if !(alpha > 0.0) {
        return Err(Error::param("alpha", "must be positive"));
    }
    let diffs = abs_differences(a, b, norm)?;
    let grid = a.grid();
    let (t0, t_end) = (grid[0], *grid.last().unwrap());
    let start = t_end - tail_fraction * (t_end - t0);
    let nodes: Vec<usize> = (0..grid.len())
        .filter(|&k| grid[k] >= start - 1e-12 && grid[k] > t0)
        .collect();
    if nodes.is_empty() {
        return Err(Error::TooFewNodes(0));
    }
    let values: Vec<f64> = (0..a.n_particles())
        .into_par_iter()
        .map(|p| {
            nodes
                .iter()
                .map(|&k| {
                    let y = diffs[k][p];
                    if y < UNDERFLOW_FLOOR {
                        f64::NEG_INFINITY
                    } else {
                        y.ln() / (grid[k] - t0).powf(alpha)
                    }
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let degenerate = values.iter().filter(|v| **v == f64::NEG_INFINITY).count();
    let mut sorted = values.clone();
    sorted.sort_by(|x, y| x.total_cmp(y));
    let q = |p: f64| sorted[((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1];
    Ok(PathwiseSummary {
        alpha,
        tail_window: [grid[nodes[0]], t_end],
        median: q(0.5),
        q90: q(0.9),
        max: *sorted.last().unwrap(),
        degenerate,
        n_paths: values.len(),
        values,
    })
}

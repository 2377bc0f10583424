//! Picard iteration `mu_n = Law(X^{xi, mu_{n-1}})` on empirical flows, with the
//! factorial error bound and the growth envelope.
//!
//! Distances are indexed from zero: `distances[n]` is the sup-grid w1 distance
//! between iterates `n` and `n + 1`, where iterate 0 is the supplied flow.

use rayon::prelude::*;
use serde::Serialize;

use crate::coeff::{f_g_p, gronwall_curve, GrowthTermSpec, PiecewisePoly, TimeFn};
use crate::engine::{simulate_frozen, InitialLaw, PathEnsemble, SimConfig};
pub use crate::engine::MeasureFlowGrid;
use crate::error::{Error, Result};
use crate::measure::{theta_eval, w1_distance, MeasureFunctionalSpec};
use crate::model::ModelSpec;
use crate::numeric::mean_and_se;
use crate::table::Table;

/// Coefficients entering the error bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub c_p: f64,
    pub gamma_p0: PiecewisePoly,
    pub lambda0: PiecewisePoly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Keep every iterate instead of only the final flow.
    pub retain_iterates: bool,
    /// Functional used for `Delta`.
    pub theta: MeasureFunctionalSpec,
    pub bound: Option<BoundInputs>,
}

impl PicardOptions {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self {
            tol,
            max_iter,
            retain_iterates: false,
            theta: MeasureFunctionalSpec::w1(),
            bound: None,
        }
    }

    pub fn with_bound(mut self, b: BoundInputs) -> Self {
        self.bound = Some(b);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardRun {
    /// Every iterate starting with the input flow when retained, else the final one.
    pub iterates: Vec<MeasureFlowGrid>,
    pub distances: Vec<f64>,
    /// Standard error of the index-coupled distance at the maximising node.
    pub distance_se: Vec<f64>,
    /// Bound value for each distance index; empty without bound inputs.
    pub theoretical_tail: Vec<f64>,
    pub converged: bool,
    pub iterations_used: usize,
    /// `sup_s c_P^{-1} theta(mu_1(s), mu_0(s))` over the grid.
    pub delta: f64,
    /// `sup_s E|X_s|` of the first sweep; only meaningful for a point mass at zero.
    pub delta_surrogate: f64,
    pub mu0_is_origin: bool,
    /// Ensemble of the last sweep.
    pub final_ensemble: PathEnsemble,
}

impl PicardRun {
    pub fn final_flow(&self) -> &MeasureFlowGrid {
        self.iterates.last().expect("at least one iterate")
    }

    /// CSV rows `(n, distance, se, theoretical_bound)`.
    pub fn distance_table(&self) -> Table {
        let mut t = Table::new(&["n", "distance", "se", "theoretical_bound"]);
        for (n, &d) in self.distances.iter().enumerate() {
            let b = self.theoretical_tail.get(n).copied().unwrap_or(f64::NAN);
            t.push(vec![n as f64, d, self.distance_se[n], b]);
        }
        t
    }

    /// Mean of the first coordinate of the final flow with its standard error.
    pub fn mean_curve(&self) -> Vec<(f64, f64, f64)> {
        let f = self.final_flow();
        f.grid
            .iter()
            .zip(&f.measures)
            .map(|(&t, mu)| {
                let xs: Vec<f64> = mu.iter().map(|p| p[0]).collect();
                let (m, se) = mean_and_se(&xs);
                (t, m, se)
            })
            .collect()
    }
}

/// Sup over nodes of w1 between two flows on the same grid, with the SE of
/// the index coupling at the maximiser.
pub fn flow_distance(a: &MeasureFlowGrid, b: &MeasureFlowGrid) -> Result<(f64, f64)> {
    if a.grid.len() != b.grid.len() {
        return Err(Error::GridMismatch(format!("{} vs {} nodes", a.grid.len(), b.grid.len())));
    }
    let d: Vec<f64> = a
        .measures
        .par_iter()
        .zip(&b.measures)
        .map(|(x, y)| w1_distance(x, y))
        .collect::<Result<_>>()?;
    let (k, &sup) = d
        .iter()
        .enumerate()
        .fold((0, &0.0), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
    let (x, y) = (&a.measures[k], &b.measures[k]);
    let se = if x.len() == y.len() {
        let diffs: Vec<f64> = x
            .iter()
            .zip(y.iter())
            .map(|(p, q)| p.iter().zip(q).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt())
            .collect();
        mean_and_se(&diffs).1
    } else {
        0.0
    };
    Ok((sup, se))
}

/// Runs the iteration with common random numbers across sweeps.
pub fn picard_solve(
    model: &ModelSpec,
    xi: &InitialLaw,
    cfg: &SimConfig,
    mu0: &MeasureFlowGrid,
    opts: &PicardOptions,
) -> Result<PicardRun> {
    model.validate()?;
    if !model.is_existence_mode() {
        return Err(Error::Precondition(
            "the Picard construction needs sigma(t, 0) = 0 (all eta0 identically zero)".into(),
        ));
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::param("picard", "tol must be positive and max_iter at least 1"));
    }
    opts.theta.validate()?;
    let grid = cfg.recorded_grid()?;
    if mu0.grid.len() != grid.len()
        || mu0.grid.iter().zip(&grid).any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + b.abs()))
    {
        return Err(Error::GridMismatch(
            "mu0 must live on the recorded simulation grid".into(),
        ));
    }
    let mu0_is_origin = mu0
        .measures
        .iter()
        .all(|m| m.points().iter().all(|&x| x == 0.0));

    let mut iterates = vec![mu0.clone()];
    let mut distances = Vec::new();
    let mut distance_se = Vec::new();
    let mut delta = 0.0;
    let mut delta_surrogate = 0.0;
    let mut converged = false;
    let mut last = None;
    for it in 0..opts.max_iter {
        let prev = iterates.last().unwrap();
        let ens = simulate_frozen(model, prev, xi, cfg)?;
        ens.require_complete()?;
        let next = ens.to_flow();
        let (d, se) = flow_distance(prev, &next)?;
        if it == 0 {
            let c = opts.bound.as_ref().map_or(1.0, |b| b.c_p);
            let thetas: Vec<f64> = next
                .measures
                .par_iter()
                .zip(&prev.measures)
                .map(|(a, b)| theta_eval(&opts.theta, a, b))
                .collect::<Result<_>>()?;
            delta = thetas.iter().fold(0.0f64, |a, &b| a.max(b)) / c;
            delta_surrogate = next.measures.iter().map(|m| m.moment(1.0)).fold(0.0, f64::max);
        }
        distances.push(d);
        distance_se.push(se);
        if opts.retain_iterates {
            iterates.push(next);
        } else {
            iterates = vec![next];
        }
        last = Some(ens);
        if d <= opts.tol {
            converged = true;
            break;
        }
    }
    let theoretical_tail = match &opts.bound {
        Some(b) => {
            let t = *grid.last().unwrap();
            (0..distances.len())
                .map(|n| picard_error_bound(n, grid[0], t, delta, b.c_p, &b.gamma_p0, &b.lambda0))
                .collect::<Result<_>>()?
        }
        None => Vec::new(),
    };
    Ok(PicardRun {
        iterates,
        iterations_used: distances.len(),
        distances,
        distance_se,
        theoretical_tail,
        converged,
        delta,
        delta_surrogate,
        mu0_is_origin,
        final_ensemble: last.expect("max_iter >= 1"),
    })
}

/// `x = int_{t0}^t e^{int_s^t gamma} lambda0(s) ds`.
pub fn contraction_integral(
    t0: f64,
    t: f64,
    gamma_p0: &dyn TimeFn,
    lambda0: &dyn TimeFn,
) -> Result<f64> {
    if t <= t0 {
        return Ok(0.0);
    }
    Ok(*gronwall_curve(gamma_p0, 0.0, lambda0, &[t0, t])?.last().unwrap())
}

/// `sum_{i >= n} y^i / i!`.
pub fn factorial_tail(n: usize, y: f64) -> f64 {
    if y == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    if (n as f64) > y {
        // terms decrease from the start; sum them directly
        let mut term = (n as f64 * y.ln() - ln_factorial(n)).exp();
        let mut sum = 0.0;
        let mut i = n;
        while term > 0.0 && term > 1e-18 * sum {
            sum += term;
            i += 1;
            term *= y / i as f64;
        }
        return sum;
    }
    // exp(y) minus the compensated partial sum
    let mut partial = Vec::with_capacity(n);
    let mut term = 1.0;
    for i in 0..n {
        partial.push(term);
        term *= y / (i + 1) as f64;
    }
    (y.exp() - kahan(&partial)).max(0.0)
}

/// `sum_{i >= max(n,1)} y^i / i`; infinite for `y >= 1`.
pub fn reciprocal_tail(n: usize, y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    if y >= 1.0 {
        return f64::INFINITY;
    }
    let n = n.max(1);
    let mut sum = 0.0;
    let mut pow = y.powi(n as i32);
    let mut i = n;
    while pow / i as f64 > 1e-18 * sum && i < 10_000_000 {
        sum += pow / i as f64;
        pow *= y;
        i += 1;
    }
    sum
}

fn ln_factorial(n: usize) -> f64 {
    statrs::function::gamma::ln_gamma(n as f64 + 1.0)
}

fn kahan(xs: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for &x in xs {
        let y = x - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s
}

/// `Delta(t) sum_{i >= n} (c_P x)^i / i!` with `x` the contraction integral on `[t0, t]`.
pub fn picard_error_bound(
    n: usize,
    t0: f64,
    t: f64,
    delta_t: f64,
    c_p: f64,
    gamma_p0: &dyn TimeFn,
    lambda0: &dyn TimeFn,
) -> Result<f64> {
    if !(delta_t >= 0.0) || !(c_p > 0.0) {
        return Err(Error::param("picard_error_bound", "need Delta >= 0 and c_P > 0"));
    }
    let x = contraction_integral(t0, t, gamma_p0, lambda0)?;
    if delta_t == 0.0 {
        return Ok(0.0);
    }
    Ok(delta_t * factorial_tail(n, c_p * x))
}

/// Comparison of observed successive distances with both series variants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesVariantNote {
    pub question: String,
    pub case: serde_json::Value,
    pub c_p_x: f64,
    pub delta: f64,
    pub observed: Vec<f64>,
    pub slack: Vec<f64>,
    pub factorial_bound: Vec<f64>,
    pub reciprocal_bound: Vec<f64>,
    pub factorial_holds: bool,
    pub reciprocal_holds: bool,
    pub first_factorial_violation: Option<usize>,
    /// "i!", "i", "both" or "neither".
    pub matched: String,
}

/// Checks `distances[n] <= Delta * tail_n + slack_n` for the `1/i!` tail and
/// the `1/i` tail (indices `n >= 1` for the latter).
pub fn series_variant_check(
    run: &PicardRun,
    inputs: &BoundInputs,
    t0: f64,
    t: f64,
    slack_k: f64,
    case: serde_json::Value,
) -> Result<SeriesVariantNote> {
    let y = inputs.c_p * contraction_integral(t0, t, &inputs.gamma_p0, &inputs.lambda0)?;
    let slack: Vec<f64> = run.distance_se.iter().map(|s| slack_k * s).collect();
    let fac: Vec<f64> = (0..run.distances.len())
        .map(|n| run.delta * factorial_tail(n, y))
        .collect();
    let rec: Vec<f64> = (0..run.distances.len())
        .map(|n| if n == 0 { f64::NAN } else { run.delta * reciprocal_tail(n, y) })
        .collect();
    let ok = |b: &[f64], skip0: bool| -> Vec<bool> {
        run.distances
            .iter()
            .enumerate()
            .map(|(n, &d)| (skip0 && n == 0) || d <= b[n] + slack[n])
            .collect()
    };
    let fac_ok = ok(&fac, false);
    let rec_ok = ok(&rec, true);
    let factorial_holds = fac_ok.iter().all(|&b| b);
    let reciprocal_holds = rec_ok.iter().all(|&b| b);
    let matched = match (factorial_holds, reciprocal_holds) {
        (true, true) => "both",
        (true, false) => "i!",
        (false, true) => "i",
        (false, false) => "neither",
    };
    Ok(SeriesVariantNote {
        question: "successive Picard distances against the 1/i! tail of the error estimate and the 1/i tail of the auxiliary estimate".into(),
        case,
        c_p_x: y,
        delta: run.delta,
        observed: run.distances.clone(),
        slack,
        factorial_bound: fac,
        reciprocal_bound: rec,
        factorial_holds,
        reciprocal_holds,
        first_factorial_violation: fac_ok.iter().position(|&b| !b),
        matched: matched.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthEnvelopeReport {
    pub grid: Vec<f64>,
    /// `theta_1(mu(t), delta_0)`.
    pub first_moment: Vec<f64>,
    pub se: Vec<f64>,
    pub bound: Vec<f64>,
    /// `bound - (first_moment - k se)`.
    pub margin: Vec<f64>,
    pub pass: bool,
    pub approximate: bool,
}

/// Checks `theta_1(mu(t), delta_0) - k SE <= e^{int f_P} E|xi|_u + int e^{int_s^t f_P}(kappa_0 + g_P)`.
pub fn growth_envelope_check(
    flow: &MeasureFlowGrid,
    spec: &GrowthTermSpec,
    xi_mean: f64,
    slack_k: f64,
) -> Result<GrowthEnvelopeReport> {
    let pair = f_g_p(spec)?;
    let (k0, approx_k) = spec.kappa0();
    let f = pair.exponential.as_scalar()?.clone();
    let forcing = PiecewisePoly::linear_combination(&[
        (1.0, k0.as_scalar()?),
        (1.0, pair.drift.as_scalar()?),
    ]);
    let bound = gronwall_curve(&f, xi_mean, &forcing, &flow.grid)?;
    let mut first_moment = Vec::with_capacity(flow.grid.len());
    let mut se = Vec::with_capacity(flow.grid.len());
    for mu in &flow.measures {
        let norms: Vec<f64> = mu
            .iter()
            .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let (m, s) = mean_and_se(&norms);
        first_moment.push(m);
        se.push(s);
    }
    let margin: Vec<f64> = bound
        .iter()
        .zip(first_moment.iter().zip(&se))
        .map(|(b, (m, s))| b - (m - slack_k * s))
        .collect();
    let pass = margin.iter().all(|&x| x >= 0.0);
    Ok(GrowthEnvelopeReport {
        grid: flow.grid.clone(),
        first_moment,
        se,
        bound,
        margin,
        pass,
        approximate: pair.approximate || approx_k,
    })
}

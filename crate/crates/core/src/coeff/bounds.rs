//! Gronwall-type comparison curves, the power-envelope check and the
//! summability check for exponential series.

use serde::Serialize;

use super::poly::TimeFn;
use crate::error::{Error, Result};
use crate::numeric::{check_grid, integrate, uniform_grid};

/// `t -> e^{int_{t0}^t gamma} initial + int_{t0}^t e^{int_s^t gamma} forcing(s) ds`.
///
/// Evaluated interval by interval: the exponent integrals come from
/// `gamma.integral` (exact for piecewise polynomials) and the outer integral
/// from adaptive Gauss-Kronrod quadrature.
pub fn gronwall_curve(
    gamma: &dyn TimeFn,
    initial: f64,
    forcing: &dyn TimeFn,
    grid: &[f64],
) -> Result<Vec<f64>> {
    check_grid(grid)?;
    let mut out = Vec::with_capacity(grid.len());
    let mut y = initial;
    out.push(y);
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        let g_ab = gamma.integral(a, b)?;
        let mut err = None;
        let inner = integrate(
            |s| match gamma.integral(s, b) {
                Ok(g) => g.exp() * forcing.eval(s),
                Err(e) => {
                    err = Some(e);
                    0.0
                }
            },
            a,
            b,
            1e-15,
            1e-13,
        )?;
        if let Some(e) = err {
            return Err(e);
        }
        y = g_ab.exp() * y + inner;
        if !y.is_finite() {
            return Err(Error::NonFinite(format!("Gronwall curve at t = {b}")));
        }
        out.push(y);
    }
    Ok(out)
}

/// Power-function upper bound for the stability coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerEnvelope {
    pub alpha: Vec<f64>,
    pub lambda_hat: Vec<f64>,
    pub s: Vec<f64>,
    pub t1: f64,
}

impl PowerEnvelope {
    pub fn validate(&self) -> Result<()> {
        let l = self.alpha.len();
        if l == 0 || self.lambda_hat.len() != l || self.s.len() != l {
            return Err(Error::param(
                "envelope",
                "alpha, lambda_hat and s must be non-empty and of equal length",
            ));
        }
        if self.alpha.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::param("envelope.alpha", "entries must be positive"));
        }
        if self.alpha.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param("envelope.alpha", "must be strictly increasing"));
        }
        if !(self.lambda_hat[l - 1] < 0.0) {
            return Err(Error::param("envelope.lambda_hat", "the last entry must be negative"));
        }
        if self.s.iter().any(|s| !(*s <= self.t1)) || !self.t1.is_finite() {
            return Err(Error::param("envelope.s", "every s_k must be <= t1"));
        }
        Ok(())
    }

    /// `sum_k lambda_hat_k alpha_k (t - s_k)^{alpha_k - 1}`, `None` where singular.
    pub fn eval(&self, t: f64) -> Option<f64> {
        let mut acc = 0.0;
        for k in 0..self.alpha.len() {
            let x = t - self.s[k];
            let a = self.alpha[k];
            if x <= 0.0 && a < 1.0 {
                return None;
            }
            let pw = if a == 1.0 { 1.0 } else { x.powf(a - 1.0) };
            acc += self.lambda_hat[k] * a * pw;
        }
        Some(acc)
    }
}

/// Result of [`check_power_envelope`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeReport {
    pub grid: Vec<f64>,
    /// `envelope - gamma`; NaN at skipped singular nodes.
    pub margin: Vec<f64>,
    pub pass: bool,
    pub skipped_nodes: usize,
    pub lyapunov_alpha: f64,
    pub lyapunov_lambda_hat: f64,
}

/// Checks `gamma_P(s) <= sum_k lambda_hat_k alpha_k (s - s_k)^{alpha_k - 1}` on
/// `n_points` uniform nodes of `[t1, horizon]`.
pub fn check_power_envelope(
    gamma_p: &dyn TimeFn,
    envelope: &PowerEnvelope,
    horizon: f64,
    n_points: usize,
) -> Result<EnvelopeReport> {
    envelope.validate()?;
    if !(horizon > envelope.t1) {
        return Err(Error::param("horizon", "must exceed t1"));
    }
    let grid = uniform_grid(envelope.t1, horizon, n_points.max(2) - 1);
    let mut margin = Vec::with_capacity(grid.len());
    let mut pass = true;
    let mut skipped = 0;
    for &t in &grid {
        let g = gamma_p.eval(t);
        match envelope.eval(t) {
            Some(rhs) if g.is_finite() => {
                let m = rhs - g;
                // relative round-off allowance
                if m < -1e-12 * rhs.abs().max(g.abs()).max(1e-300) {
                    pass = false;
                }
                margin.push(m);
            }
            _ => {
                skipped += 1;
                margin.push(f64::NAN);
            }
        }
    }
    let l = envelope.alpha.len() - 1;
    Ok(EnvelopeReport {
        grid,
        margin,
        pass,
        skipped_nodes: skipped,
        lyapunov_alpha: envelope.alpha[l],
        lyapunov_lambda_hat: envelope.lambda_hat[l],
    })
}

/// Per-epsilon outcome of [`c11_series_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesEntry {
    pub epsilon: f64,
    pub terms_used: usize,
    pub partial_sum: f64,
    pub last_term: f64,
    /// `int_{t1}^{horizon} exp((eps/2) int_{t1}^t gamma) dt / delta_tilde`.
    pub tail_surrogate: f64,
    pub converges: bool,
}

/// Result of [`c11_series_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesReport {
    pub t1: f64,
    pub delta_tilde: f64,
    pub horizon: f64,
    pub entries: Vec<SeriesEntry>,
}

/// Terms below this are treated as a numerically converged tail.
pub const SERIES_TERM_FLOOR: f64 = 1e-15;

/// Partial sums of `sum_n exp((eps/2) int_{t1}^{t_n} gamma)` with
/// `t_n = t1 + delta_tilde (n - 1)`, for each `eps`.
///
/// `delta_tilde` defaults to `delta_hat / 2`. The verdict is "converges" when
/// a term drops below [`SERIES_TERM_FLOOR`] before `horizon`.
pub fn c11_series_check(
    gamma_p: &dyn TimeFn,
    t1: f64,
    delta_hat: f64,
    epsilons: &[f64],
    horizon: f64,
    delta_tilde: Option<f64>,
) -> Result<SeriesReport> {
    if !(delta_hat > 0.0) {
        return Err(Error::param("delta_hat", "must be positive"));
    }
    let dt = delta_tilde.unwrap_or(0.5 * delta_hat);
    if !(dt > 0.0 && dt < delta_hat) {
        return Err(Error::param("delta_tilde", "must lie in (0, delta_hat)"));
    }
    if !(horizon > t1) {
        return Err(Error::param("horizon", "must exceed t1"));
    }
    if epsilons.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::param("epsilon", "entries must be positive"));
    }
    for &t in &uniform_grid(t1, horizon, 1000) {
        let g = gamma_p.eval(t);
        if g > 0.0 {
            return Err(Error::Precondition(format!(
                "gamma_P must be <= 0 on [t1, horizon]; gamma_P({t}) = {g}"
            )));
        }
    }
    let n_max = ((horizon - t1) / dt).floor() as usize + 1;
    let mut cum = Vec::with_capacity(n_max);
    let mut acc = 0.0;
    let mut prev = t1;
    for n in 1..=n_max {
        let tn = t1 + dt * (n - 1) as f64;
        acc += gamma_p.integral(prev, tn)?;
        prev = tn;
        cum.push(acc);
    }
    let mut entries = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let mut sum = 0.0;
        let mut last = 1.0;
        let mut used = 0usize;
        let mut converges = false;
        for &g in &cum {
            last = (0.5 * eps * g).exp();
            sum += last;
            used += 1;
            if last < SERIES_TERM_FLOOR {
                converges = true;
                break;
            }
        }
        let t_stop = t1 + dt * (used.saturating_sub(1)) as f64;
        let tail = if t_stop > t1 {
            let mut g_a = 0.0;
            let mut total = 0.0;
            // piece by piece so the exponent stays an exact integral
            for w in uniform_grid(t1, t_stop, used - 1).windows(2) {
                let (a, b) = (w[0], w[1]);
                total += integrate(
                    |s| (0.5 * eps * (g_a + gamma_p.integral(a, s).unwrap_or(f64::NAN))).exp(),
                    a,
                    b,
                    1e-16,
                    1e-11,
                )?;
                g_a += gamma_p.integral(a, b)?;
            }
            total / dt
        } else {
            0.0
        };
        entries.push(SeriesEntry {
            epsilon: eps,
            terms_used: used,
            partial_sum: sum,
            last_term: last,
            tail_surrogate: tail,
            converges,
        });
    }
    Ok(SeriesReport {
        t1,
        delta_tilde: dt,
        horizon,
        entries,
    })
}

/// Outcome of the closed-form check for `int_0^inf exp(-gamma (delta t)^alpha) dt`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaExponentNote {
    pub alpha: f64,
    pub gamma: f64,
    pub delta: f64,
    pub numeric: f64,
    /// `Gamma(1/alpha) / (alpha gamma^{1/alpha} delta)`
    pub variant_inverse_exponent: f64,
    /// `Gamma(1/alpha) / (alpha gamma^{alpha} delta)`
    pub variant_direct_exponent: f64,
    /// `"1/alpha"`, `"alpha"`, `"both"` or `"neither"`.
    pub matched: String,
}

/// Integrates `exp(-gamma (delta t)^alpha)` numerically and compares it with
/// both candidate closed forms at relative tolerance `1e-8`.
pub fn gamma_exponent_check(alpha: f64, gamma: f64, delta: f64) -> Result<GammaExponentNote> {
    if !(alpha > 0.0 && gamma > 0.0 && delta > 0.0) {
        return Err(Error::param("alpha/gamma/delta", "must all be positive"));
    }
    // beyond this point the integrand is below e^-745
    let cut = (745.0 / gamma).powf(1.0 / alpha) / delta;
    let f = |t: f64| (-gamma * (delta * t).powf(alpha)).exp();
    let numeric = integrate(f, 0.0, cut, 1e-15, 1e-13)?;
    let g = statrs::function::gamma::gamma(1.0 / alpha);
    let inv = g / (alpha * gamma.powf(1.0 / alpha) * delta);
    let dir = g / (alpha * gamma.powf(alpha) * delta);
    let close = |x: f64| ((numeric - x) / x).abs() <= 1e-8;
    let matched = match (close(inv), close(dir)) {
        (true, true) => "both",
        (true, false) => "1/alpha",
        (false, true) => "alpha",
        (false, false) => "neither",
    }
    .to_string();
    Ok(GammaExponentNote {
        alpha,
        gamma,
        delta,
        numeric,
        variant_inverse_exponent: inv,
        variant_direct_exponent: dir,
        matched,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{CoefficientFn, FnTime};

    #[test]
    fn gronwall_examples() {
        let grid = uniform_grid(0.0, 3.0, 30);
        let zero = CoefficientFn::constant(0.0);
        let c = gronwall_curve(&zero, 1.7, &zero, &grid).unwrap();
        assert!(c.iter().all(|&v| v == 1.7));
        let c = gronwall_curve(&CoefficientFn::constant(-1.0), 1.0, &zero, &grid).unwrap();
        assert!((c[10] - (-1f64).exp()).abs() < 1e-14);
        let c = gronwall_curve(&zero, 0.0, &CoefficientFn::constant(2.0), &grid).unwrap();
        assert!((c[30] - 6.0).abs() < 1e-13);
    }

    #[test]
    fn gronwall_variation_of_constants() {
        // y' = -0.5 y + t, y(0) = 2: y = 2 t - 4 + 6 e^{-t/2}
        let grid = uniform_grid(0.0, 5.0, 49);
        let c = gronwall_curve(
            &CoefficientFn::constant(-0.5),
            2.0,
            &CoefficientFn::polynomial(vec![0.0, 1.0]),
            &grid,
        )
        .unwrap();
        for (t, v) in grid.iter().zip(&c) {
            let exact = 2.0 * t - 4.0 + 6.0 * (-0.5 * t).exp();
            assert!((v - exact).abs() < 1e-10, "{t}: {v} vs {exact}");
        }
    }

    #[test]
    fn envelope_examples() {
        let env = PowerEnvelope {
            alpha: vec![1.0],
            lambda_hat: vec![-1.0],
            s: vec![0.0],
            t1: 0.0,
        };
        let r = check_power_envelope(&CoefficientFn::constant(-1.0), &env, 5.0, 50).unwrap();
        assert!(r.pass);
        assert!(r.margin.iter().all(|&m| m == 0.0));
        let r = check_power_envelope(&CoefficientFn::constant(-0.5), &env, 5.0, 50).unwrap();
        assert!(!r.pass);
        let env = PowerEnvelope {
            alpha: vec![0.5],
            lambda_hat: vec![-2.0],
            s: vec![0.0],
            t1: 0.0,
        };
        let g = FnTime(|s: f64| -1.0 / s.sqrt());
        let r = check_power_envelope(&g, &env, 4.0, 41).unwrap();
        assert!(r.pass);
        assert_eq!(r.skipped_nodes, 1);
        assert_eq!((r.lyapunov_alpha, r.lyapunov_lambda_hat), (0.5, -2.0));
    }

    #[test]
    fn envelope_validation() {
        let env = PowerEnvelope {
            alpha: vec![1.0, 0.5],
            lambda_hat: vec![0.0, -1.0],
            s: vec![0.0, 0.0],
            t1: 0.0,
        };
        assert!(env.validate().is_err());
        let env = PowerEnvelope {
            alpha: vec![1.0],
            lambda_hat: vec![1.0],
            s: vec![0.0],
            t1: 0.0,
        };
        assert!(env.validate().is_err());
    }

    #[test]
    fn series_examples() {
        let r = c11_series_check(&CoefficientFn::constant(-1.0), 0.0, 2.0, &[1.0], 200.0, Some(1.0))
            .unwrap();
        let e = &r.entries[0];
        assert!(e.converges);
        let q = (-0.5f64).exp();
        // geometric partial sum with ratio e^{-1/2}
        let exact = (1.0 - q.powi(e.terms_used as i32)) / (1.0 - q);
        assert!((e.partial_sum - exact).abs() < 1e-12);
        let r = c11_series_check(&CoefficientFn::constant(0.0), 0.0, 2.0, &[1.0], 50.0, Some(1.0))
            .unwrap();
        assert!(!r.entries[0].converges);
        assert_eq!(r.entries[0].partial_sum, r.entries[0].terms_used as f64);
        let r = c11_series_check(
            &CoefficientFn::polynomial(vec![0.0, -2.0]),
            0.0,
            2.0,
            &[1.0],
            50.0,
            None,
        )
        .unwrap();
        assert!(r.entries[0].converges);
        assert!(c11_series_check(&CoefficientFn::constant(1.0), 0.0, 2.0, &[1.0], 5.0, None).is_err());
    }

    #[test]
    fn gamma_exponent_distinguishes_variants() {
        let n = gamma_exponent_check(2.0, 4.0, 1.0).unwrap();
        assert_eq!(n.matched, "1/alpha");
        assert!((n.numeric - std::f64::consts::PI.sqrt() / 4.0).abs() < 1e-12);
        let n = gamma_exponent_check(1.0, 3.0, 2.0).unwrap();
        assert_eq!(n.matched, "both");
    }
}

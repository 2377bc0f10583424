//! Pseudonorm algebra and the explicit stability and growth coefficients.

use serde::{Deserialize, Serialize};

use super::poly::{CoefficientFn, PiecewisePoly, Shape};
use crate::error::{Error, Result};

/// `q_alpha = 1 / (1 - alpha)`, infinite at `alpha = 1`.
pub fn dual_exponent(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::param("alpha", format!("must lie in (0, 1], got {alpha}")));
    }
    Ok(if alpha == 1.0 {
        f64::INFINITY
    } else {
        1.0 / (1.0 - alpha)
    })
}

/// `[x]_p` of a deterministic constant: `x+` for finite `p`, `x` for `p = inf`.
pub fn bracket_norm(x: f64, p: f64) -> f64 {
    if p == f64::INFINITY {
        x
    } else {
        x.max(0.0)
    }
}

fn bracket_fn(x: &PiecewisePoly, alpha: f64) -> (PiecewisePoly, bool) {
    if alpha == 1.0 {
        (x.clone(), false)
    } else {
        x.positive_part()
    }
}

fn zero() -> CoefficientFn {
    CoefficientFn::constant(0.0)
}

/// Hoelder data: per term `k` an exponent pair, an `m x m` matrix `eta_k`
/// and an `m`-vector `lambda_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HolderTermSpec {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub eta: Vec<CoefficientFn>,
    pub lambda: Vec<CoefficientFn>,
    #[serde(default = "zero")]
    pub c0_zeta0: CoefficientFn,
    pub c_p: f64,
}

/// Growth data with the same layout: `upsilon_k` matrices, `chi_k` vectors
/// and the additive vector `kappa`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthTermSpec {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub upsilon: Vec<CoefficientFn>,
    pub chi: Vec<CoefficientFn>,
    pub kappa: CoefficientFn,
    #[serde(default = "zero")]
    pub c0_zeta0: CoefficientFn,
    pub c_p: f64,
}

/// An exponential coefficient and its drift companion.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPair {
    pub exponential: CoefficientFn,
    pub drift: CoefficientFn,
    /// Set when a maximum or positive part had crossing branches.
    pub approximate: bool,
}

fn matrix_dim(c: &CoefficientFn) -> Result<usize> {
    match c.shape() {
        Shape::Scalar => Ok(1),
        Shape::Matrix(r, cc) if r == cc => Ok(r),
        s => Err(Error::ShapeMismatch(format!("expected a square matrix, got {s:?}"))),
    }
}

fn vector_dim(c: &CoefficientFn) -> Result<usize> {
    match c.shape() {
        Shape::Scalar => Ok(1),
        Shape::Vector(n) => Ok(n),
        s => Err(Error::ShapeMismatch(format!("expected a vector, got {s:?}"))),
    }
}

fn entry(c: &CoefficientFn, i: usize, j: usize) -> &PiecewisePoly {
    match c.shape() {
        Shape::Scalar => c.entry(0),
        _ => c.at(i, j),
    }
}

fn validate_terms(
    alpha: &[f64],
    beta: &[f64],
    mats: &[CoefficientFn],
    vecs: &[CoefficientFn],
    c0: &CoefficientFn,
    c_p: f64,
    mat_name: &str,
    vec_name: &str,
) -> Result<usize> {
    let l = alpha.len();
    if beta.len() != l || mats.len() != l || vecs.len() != l {
        return Err(Error::ShapeMismatch(format!(
            "term counts differ: alpha {l}, beta {}, {mat_name} {}, {vec_name} {}",
            beta.len(),
            mats.len(),
            vecs.len()
        )));
    }
    for (k, a) in alpha.iter().enumerate() {
        if !(*a > 0.0 && *a <= 1.0) {
            return Err(Error::param(format!("alpha[{k}]"), format!("must lie in (0, 1], got {a}")));
        }
    }
    for (k, b) in beta.iter().enumerate() {
        if !(*b > 0.0 && *b <= 1.0) {
            return Err(Error::param(format!("beta[{k}]"), format!("must lie in (0, 1], got {b}")));
        }
    }
    if !(c_p >= 0.0) || !c_p.is_finite() {
        return Err(Error::param("c_p", format!("must be finite and >= 0, got {c_p}")));
    }
    if c0.shape() != Shape::Scalar {
        return Err(Error::ShapeMismatch("c0_zeta0 must be scalar".into()));
    }
    let mut m = None;
    for (k, e) in mats.iter().enumerate() {
        let d = matrix_dim(e)?;
        if *m.get_or_insert(d) != d {
            return Err(Error::ShapeMismatch(format!("{mat_name}[{k}] has dimension {d}")));
        }
        // off-diagonal entries must be nonnegative; sampled on every piece
        for i in 0..d {
            for j in 0..d {
                if i == j {
                    continue;
                }
                let p = entry(e, i, j);
                for t in sample_points(p) {
                    if p.eval(t) < 0.0 {
                        return Err(Error::param(
                            format!("{mat_name}[{k}][{i}][{j}]"),
                            format!("off-diagonal entries must be >= 0 (value {} at t = {t})", p.eval(t)),
                        ));
                    }
                }
            }
        }
    }
    for (k, v) in vecs.iter().enumerate() {
        let d = vector_dim(v)?;
        if *m.get_or_insert(d) != d {
            return Err(Error::ShapeMismatch(format!("{vec_name}[{k}] has dimension {d}")));
        }
    }
    Ok(m.unwrap_or(1))
}

fn sample_points(p: &PiecewisePoly) -> Vec<f64> {
    let b = p.breaks();
    let mut out = Vec::new();
    for j in 0..b.len() {
        let end = if j + 1 < b.len() { b[j + 1] } else { b[j] + 100.0 };
        out.extend([b[j], 0.5 * (b[j] + end), end]);
    }
    out
}

impl HolderTermSpec {
    /// Checks ranges and shapes; returns the dimension `m`.
    pub fn validate(&self) -> Result<usize> {
        validate_terms(
            &self.alpha,
            &self.beta,
            &self.eta,
            &self.lambda,
            &self.c0_zeta0,
            self.c_p,
            "eta",
            "lambda",
        )
    }
}

impl GrowthTermSpec {
    /// Checks ranges and shapes; returns the dimension `m`.
    pub fn validate(&self) -> Result<usize> {
        let m = validate_terms(
            &self.alpha,
            &self.beta,
            &self.upsilon,
            &self.chi,
            &self.c0_zeta0,
            self.c_p,
            "upsilon",
            "chi",
        )?;
        let mk = vector_dim(&self.kappa)?;
        if self.alpha.is_empty() {
            return Ok(mk);
        }
        if mk != m {
            return Err(Error::ShapeMismatch(format!("kappa has dimension {mk}, expected {m}")));
        }
        Ok(m)
    }

    /// `kappa_0 = sum_i (kappa_i)+`.
    pub fn kappa0(&self) -> (CoefficientFn, bool) {
        let (p, approx) = positive_sum(&self.kappa);
        (CoefficientFn::scalar(p), approx)
    }
}

/// `sum_i (v_i)+` for a vector function.
pub fn positive_sum(v: &CoefficientFn) -> (PiecewisePoly, bool) {
    let mut approx = false;
    let parts: Vec<PiecewisePoly> = v
        .entries()
        .iter()
        .map(|e| {
            let (p, a) = e.positive_part();
            approx |= a;
            p
        })
        .collect();
    let terms: Vec<(f64, &PiecewisePoly)> = parts.iter().map(|p| (1.0, p)).collect();
    (PiecewisePoly::linear_combination(&terms), approx)
}

fn combine(
    m: usize,
    alpha: &[f64],
    beta: &[f64],
    mats: &[CoefficientFn],
    vecs: &[CoefficientFn],
    c0: &CoefficientFn,
    c_p: f64,
) -> CoefficientPair {
    let mut approx = false;
    // brackets[k][j] = [sum_i M_k(i, j)]_{q_alpha_k}
    let mut brackets: Vec<Vec<PiecewisePoly>> = Vec::new();
    let mut measure: Vec<PiecewisePoly> = Vec::new();
    for k in 0..alpha.len() {
        let mut row = Vec::with_capacity(m);
        for j in 0..m {
            let col: Vec<(f64, &PiecewisePoly)> =
                (0..m).map(|i| (1.0, entry(&mats[k], i, j))).collect();
            let s = PiecewisePoly::linear_combination(&col);
            let (b, a) = bracket_fn(&s, alpha[k]);
            approx |= a;
            row.push(b);
        }
        brackets.push(row);
        let (l0, a) = positive_sum(&vecs[k]);
        approx |= a;
        measure.push(l0);
    }
    let cb: Vec<f64> = beta.iter().map(|&b| if c_p == 0.0 { 0.0 } else { c_p.powf(b) }).collect();
    let measure_part = {
        let t: Vec<(f64, &PiecewisePoly)> = measure
            .iter()
            .enumerate()
            .map(|(k, p)| (beta[k] * cb[k], p))
            .collect();
        PiecewisePoly::linear_combination(&t)
    };
    let per_j: Vec<PiecewisePoly> = (0..m)
        .map(|j| {
            let t: Vec<(f64, &PiecewisePoly)> = brackets
                .iter()
                .enumerate()
                .map(|(k, row)| (alpha[k], &row[j]))
                .collect();
            PiecewisePoly::linear_combination(&t)
        })
        .collect();
    let refs: Vec<&PiecewisePoly> = per_j.iter().collect();
    let (mx, a) = if refs.is_empty() {
        (PiecewisePoly::constant(0.0), false)
    } else {
        PiecewisePoly::max_of(&refs)
    };
    approx |= a;
    let exponential = PiecewisePoly::linear_combination(&[
        (1.0, c0.entry(0)),
        (1.0, &mx),
        (1.0, &measure_part),
    ]);
    let mut drift_terms: Vec<(f64, &PiecewisePoly)> = Vec::new();
    for (k, row) in brackets.iter().enumerate() {
        for b in row {
            drift_terms.push((1.0 - alpha[k], b));
        }
        drift_terms.push(((1.0 - beta[k]) * cb[k], &measure[k]));
    }
    let drift = PiecewisePoly::linear_combination(&drift_terms);
    CoefficientPair {
        exponential: CoefficientFn::scalar(exponential),
        drift: CoefficientFn::scalar(drift),
        approximate: approx,
    }
}

/// Stability coefficients `(gamma_P, delta_P)`.
pub fn gamma_delta_p(spec: &HolderTermSpec) -> Result<CoefficientPair> {
    let m = spec.validate()?;
    Ok(combine(
        m,
        &spec.alpha,
        &spec.beta,
        &spec.eta,
        &spec.lambda,
        &spec.c0_zeta0,
        spec.c_p,
    ))
}

/// Growth coefficients `(f_P, g_P)`.
pub fn f_g_p(spec: &GrowthTermSpec) -> Result<CoefficientPair> {
    let m = spec.validate()?;
    Ok(combine(
        m,
        &spec.alpha,
        &spec.beta,
        &spec.upsilon,
        &spec.chi,
        &spec.c0_zeta0,
        spec.c_p,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: f64) -> CoefficientFn {
        CoefficientFn::constant(v)
    }

    fn holder(alpha: f64, beta: f64, eta: f64, lambda: f64, c_p: f64) -> HolderTermSpec {
        HolderTermSpec {
            alpha: vec![alpha],
            beta: vec![beta],
            eta: vec![c(eta)],
            lambda: vec![c(lambda)],
            c0_zeta0: c(0.0),
            c_p,
        }
    }

    #[test]
    fn dual_exponent_examples() {
        assert_eq!(dual_exponent(0.5).unwrap(), 2.0);
        assert_eq!(dual_exponent(1.0).unwrap(), f64::INFINITY);
        assert_eq!(dual_exponent(0.75).unwrap(), 4.0);
        assert!(dual_exponent(0.0).is_err());
        assert!(dual_exponent(1.5).is_err());
    }

    #[test]
    fn bracket_examples() {
        assert_eq!(bracket_norm(-2.0, 2.0), 0.0);
        assert_eq!(bracket_norm(-2.0, f64::INFINITY), -2.0);
        for p in [1.0, 2.0, f64::INFINITY] {
            assert_eq!(bracket_norm(3.0, p), 3.0);
        }
    }

    #[test]
    fn gamma_delta_examples() {
        let r = gamma_delta_p(&holder(1.0, 1.0, -2.0, 0.5, 1.0)).unwrap();
        assert_eq!(r.exponential.scalar_at(3.0), -1.5);
        assert_eq!(r.drift.scalar_at(3.0), 0.0);
        let r = gamma_delta_p(&holder(1.0, 1.0, 0.0, 0.0, 1.0)).unwrap();
        assert_eq!((r.exponential.scalar_at(0.0), r.drift.scalar_at(0.0)), (0.0, 0.0));
        let r = gamma_delta_p(&holder(0.5, 1.0, 1.0, 0.0, 1.0)).unwrap();
        assert_eq!(r.exponential.scalar_at(1.0), 0.5);
        assert_eq!(r.drift.scalar_at(1.0), 0.5);
        assert!(!r.approximate);
    }

    #[test]
    fn f_g_examples() {
        let g = |alpha: f64, ups: f64, chi: f64| GrowthTermSpec {
            alpha: vec![alpha],
            beta: vec![1.0],
            upsilon: vec![c(ups)],
            chi: vec![c(chi)],
            kappa: c(0.0),
            c0_zeta0: c(0.0),
            c_p: 1.0,
        };
        let r = f_g_p(&g(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(r.exponential.scalar_at(0.0), 0.0);
        let r = f_g_p(&g(1.0, -3.0, 1.25)).unwrap();
        assert_eq!(r.exponential.scalar_at(0.0), -1.75);
        assert_eq!(r.drift.scalar_at(0.0), 0.0);
        let r = f_g_p(&g(0.5, 1.0, 0.0)).unwrap();
        assert_eq!((r.exponential.scalar_at(0.0), r.drift.scalar_at(0.0)), (0.5, 0.5));
    }

    #[test]
    fn max_over_columns() {
        // columns sums: j=0: -1 + 0.5, j=1: 0.2 - 3
        let eta = CoefficientFn::constant_matrix(2, 2, &[-1.0, 0.2, 0.5, -3.0]).unwrap();
        let spec = HolderTermSpec {
            alpha: vec![1.0],
            beta: vec![1.0],
            eta: vec![eta],
            lambda: vec![CoefficientFn::constant_vector(&[0.25, -1.0])],
            c0_zeta0: c(0.1),
            c_p: 2.0,
        };
        let r = gamma_delta_p(&spec).unwrap();
        assert!((r.exponential.scalar_at(0.0) - (0.1 - 0.5 + 2.0 * 0.25)).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(gamma_delta_p(&holder(1.5, 1.0, 1.0, 0.0, 1.0)).is_err());
        assert!(gamma_delta_p(&holder(1.0, 0.0, 1.0, 0.0, 1.0)).is_err());
        let eta = CoefficientFn::constant_matrix(2, 2, &[-1.0, -0.2, 0.5, -3.0]).unwrap();
        let spec = HolderTermSpec {
            alpha: vec![1.0],
            beta: vec![1.0],
            eta: vec![eta],
            lambda: vec![CoefficientFn::constant_vector(&[0.0, 0.0])],
            c0_zeta0: c(0.0),
            c_p: 1.0,
        };
        let err = gamma_delta_p(&spec).unwrap_err().to_string();
        assert!(err.contains("eta[0][0][1]"), "{err}");
        let mut bad = holder(1.0, 1.0, 1.0, 0.0, 1.0);
        bad.lambda = vec![CoefficientFn::constant_vector(&[0.0, 0.0])];
        assert!(gamma_delta_p(&bad).is_err());
    }
}

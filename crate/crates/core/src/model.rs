//! Structured drift and diffusion of a McKean-Vlasov model.
//!
//! Drift in the frame of an orthonormal matrix `u` (columns `u_i`):
//! `B = kappa + u diag(eta_lin) u'x + sum_n u diag(eta_n) f_n(u'x) + sum_k lambda_k g_k(mu)`.
//! Diffusion: `sigma = u S` where row `i` of `S` is
//! `eta0_i + sum_k eta_{k,i} |u_i'x|^{p_k}`, a `d`-vector.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coeff::{CoefficientFn, Shape};
use crate::error::{Error, Result};
use crate::measure::{EmpiricalMeasure, PsiFn};
use crate::numeric::sgn;

/// Tagged scalar nonlinearity applied coordinate-wise in the `u`-frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarForm {
    /// `a sgn(v) |v|^alpha`
    SignedPower { a: f64, alpha: f64 },
    /// `-v^degree`, odd degree
    OddPolyNeg { degree: u32 },
    /// Piecewise-linear non-increasing interpolation, flat outside the table.
    DecreasingTable { points: Vec<(f64, f64)> },
}

impl ScalarForm {
    pub fn eval(&self, v: f64) -> f64 {
        match self {
            ScalarForm::SignedPower { a, alpha } => a * sgn(v) * v.abs().powf(*alpha),
            ScalarForm::OddPolyNeg { degree } => -v.powi(*degree as i32),
            ScalarForm::DecreasingTable { points } => {
                let n = points.len();
                if v <= points[0].0 {
                    return points[0].1;
                }
                if v >= points[n - 1].0 {
                    return points[n - 1].1;
                }
                let k = points.partition_point(|p| p.0 <= v) - 1;
                let (x0, y0) = points[k];
                let (x1, y1) = points[k + 1];
                y0 + (y1 - y0) * (v - x0) / (x1 - x0)
            }
        }
    }

    fn validate(&self, path: &str) -> Result<()> {
        match self {
            ScalarForm::SignedPower { a, alpha } => {
                if !a.is_finite() || !(*alpha > 0.0) || !alpha.is_finite() {
                    return Err(Error::param(
                        path,
                        format!("signed_power needs finite a and alpha > 0 (a = {a}, alpha = {alpha})"),
                    ));
                }
            }
            ScalarForm::OddPolyNeg { degree } => {
                if degree % 2 == 0 {
                    return Err(Error::param(path, format!("degree {degree} is not odd")));
                }
            }
            ScalarForm::DecreasingTable { points } => {
                if points.len() < 2 {
                    return Err(Error::param(path, "a decreasing table needs two points"));
                }
                if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
                    return Err(Error::param(path, "table entries must be finite"));
                }
                if points.windows(2).any(|w| !(w[1].0 > w[0].0) || w[1].1 > w[0].1) {
                    return Err(Error::param(
                        path,
                        "abscissae must increase and values must not increase",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Measure functional `g_k` in a drift term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureFn {
    /// `int x dmu`, an `m`-vector.
    Mean,
    /// `(int |x| dmu)^beta`, a scalar.
    MomentPower { beta: f64 },
    /// `int psi dmu`, a scalar.
    PsiIntegral { psi: PsiFn },
}

impl MeasureFn {
    /// Output dimension for state dimension `m`.
    pub fn out_dim(&self, m: usize) -> usize {
        match self {
            MeasureFn::Mean => m,
            _ => 1,
        }
    }

    pub fn eval(&self, mu: &EmpiricalMeasure) -> Result<Vec<f64>> {
        match self {
            MeasureFn::Mean => Ok(mu.mean()),
            MeasureFn::MomentPower { beta } => Ok(vec![mu.moment(1.0).powf(*beta)]),
            MeasureFn::PsiIntegral { psi } => Ok(vec![psi.integrate(mu)?]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearTerm {
    /// Nonnegative `m`-vector.
    pub eta: CoefficientFn,
    /// One form per `u`-frame coordinate, or a single form for all.
    pub f: Vec<ScalarForm>,
}

impl NonlinearTerm {
    pub fn form(&self, i: usize) -> &ScalarForm {
        if self.f.len() == 1 {
            &self.f[0]
        } else {
            &self.f[i]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureTerm {
    /// `m x m_hat` matrix.
    pub lambda: CoefficientFn,
    pub g: MeasureFn,
}

fn zero_coef() -> CoefficientFn {
    CoefficientFn::constant(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Drift {
    #[serde(default = "zero_coef")]
    pub kappa: CoefficientFn,
    #[serde(default = "zero_coef")]
    pub linear_eta: CoefficientFn,
    #[serde(default)]
    pub nonlinear_terms: Vec<NonlinearTerm>,
    #[serde(default)]
    pub measure_terms: Vec<MeasureTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionTerm {
    /// `d`-vector.
    pub eta: CoefficientFn,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionRow {
    /// Additive `d`-vector.
    #[serde(default = "zero_coef")]
    pub eta0: CoefficientFn,
    #[serde(default)]
    pub terms: Vec<DiffusionTerm>,
}

/// A model in structured form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub m: usize,
    pub d: usize,
    /// Orthonormal `m x m` matrix, rows as given; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<Vec<f64>>>,
    pub drift: Drift,
    /// One row per `u`-frame coordinate.
    pub diffusion: Vec<DiffusionRow>,
}

fn vec_len(c: &CoefficientFn) -> Option<usize> {
    match c.shape() {
        Shape::Scalar => Some(1),
        Shape::Vector(n) => Some(n),
        Shape::Matrix(..) => None,
    }
}

fn is_zero_constant(c: &CoefficientFn) -> bool {
    c.entries()
        .iter()
        .all(|p| p.coeffs().iter().all(|cs| cs.iter().all(|&x| x == 0.0)))
}

fn sample_times(c: &CoefficientFn) -> Vec<f64> {
    let b = c.breakpoints();
    let mut out = Vec::new();
    for j in 0..b.len() {
        let end = if j + 1 < b.len() { b[j + 1] } else { b[j] + 100.0 };
        out.extend([b[j], 0.5 * (b[j] + end), end]);
    }
    out
}

/// All coefficient values at one time, laid out for fast per-particle use.
#[derive(Debug, Clone)]
pub struct Frame {
    pub kappa: Vec<f64>,
    pub linear: Vec<f64>,
    /// `[term][i]`
    pub nonlinear: Vec<Vec<f64>>,
    /// `[term]` row-major `m x m_hat`
    pub lambda: Vec<Vec<f64>>,
    /// `[row]` `d`-vector
    pub eta0: Vec<Vec<f64>>,
    /// `[row][term]` `d`-vector
    pub diff: Vec<Vec<Vec<f64>>>,
}

impl ModelSpec {
    /// Orthonormal frame as a row-major `m x m` buffer.
    pub fn u_matrix(&self) -> Vec<f64> {
        match &self.u {
            Some(rows) => rows.concat(),
            None => {
                let mut e = vec![0.0; self.m * self.m];
                for i in 0..self.m {
                    e[i * self.m + i] = 1.0;
                }
                e
            }
        }
    }

    /// Schema-level and semantic checks; messages name the offending field.
    pub fn validate(&self) -> Result<()> {
        let (m, d) = (self.m, self.d);
        if m == 0 || d == 0 {
            return Err(Error::param("model.m/d", "dimensions must be positive"));
        }
        if let Some(rows) = &self.u {
            if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                return Err(Error::param("model.u", format!("must be {m}x{m}")));
            }
            let u = self.u_matrix();
            for i in 0..m {
                for j in 0..m {
                    let dot: f64 = (0..m).map(|r| u[r * m + i] * u[r * m + j]).sum();
                    let target = if i == j { 1.0 } else { 0.0 };
                    if (dot - target).abs() > 1e-12 {
                        return Err(Error::param("model.u", "u'u must equal the identity within 1e-12"));
                    }
                }
            }
        }
        let want = |c: &CoefficientFn, n: usize, path: &str| -> Result<()> {
            match vec_len(c) {
                Some(k) if k == n || (k == 1 && c.shape() == Shape::Scalar && n == 1) => Ok(()),
                Some(1) if c.shape() == Shape::Scalar => Err(Error::param(
                    path,
                    format!("a scalar is only accepted for length 1, expected {n}"),
                )),
                _ => Err(Error::param(path, format!("expected a vector of length {n}"))),
            }
        };
        let dr = &self.drift;
        if !(dr.kappa.shape() == Shape::Scalar && is_zero_constant(&dr.kappa)) {
            want(&dr.kappa, m, "model.drift.kappa")?;
        }
        if !(dr.linear_eta.shape() == Shape::Scalar && is_zero_constant(&dr.linear_eta)) {
            want(&dr.linear_eta, m, "model.drift.linear_eta")?;
        }
        for (n, t) in dr.nonlinear_terms.iter().enumerate() {
            let p = format!("model.drift.nonlinear_terms[{n}]");
            want(&t.eta, m, &format!("{p}.eta"))?;
            for e in t.eta.entries() {
                for s in sample_times(&t.eta) {
                    if e.eval(s) < 0.0 {
                        return Err(Error::param(format!("{p}.eta"), "entries must be nonnegative"));
                    }
                }
            }
            if t.f.len() != 1 && t.f.len() != m {
                return Err(Error::param(format!("{p}.f"), format!("expected 1 or {m} forms")));
            }
            for (i, f) in t.f.iter().enumerate() {
                f.validate(&format!("{p}.f[{i}]"))?;
            }
        }
        for (k, t) in dr.measure_terms.iter().enumerate() {
            let p = format!("model.drift.measure_terms[{k}]");
            let mh = t.g.out_dim(m);
            let ok = match t.lambda.shape() {
                Shape::Scalar => m == 1 && mh == 1,
                Shape::Vector(n) => mh == 1 && n == m,
                Shape::Matrix(r, c) => r == m && c == mh,
            };
            if !ok {
                return Err(Error::param(format!("{p}.lambda"), format!("expected a {m}x{mh} matrix")));
            }
            match &t.g {
                MeasureFn::MomentPower { beta } if !(*beta > 0.0 && *beta <= 1.0) => {
                    return Err(Error::param(format!("{p}.g.beta"), format!("must lie in (0, 1], got {beta}")))
                }
                MeasureFn::PsiIntegral { psi } => psi
                    .check_dim(m)
                    .map_err(|_| Error::param(format!("{p}.g.psi"), format!("weights must have length {m}")))?,
                _ => {}
            }
        }
        if self.diffusion.len() != m {
            return Err(Error::param("model.diffusion", format!("expected {m} rows")));
        }
        for (i, row) in self.diffusion.iter().enumerate() {
            let p = format!("model.diffusion[{i}]");
            if !(row.eta0.shape() == Shape::Scalar && is_zero_constant(&row.eta0)) {
                want(&row.eta0, d, &format!("{p}.eta0"))?;
            }
            for (k, t) in row.terms.iter().enumerate() {
                want(&t.eta, d, &format!("{p}.terms[{k}].eta"))?;
                if !(t.power >= 0.5) || !t.power.is_finite() {
                    return Err(Error::param(
                        format!("{p}.terms[{k}].power"),
                        format!("must be >= 1/2, got {}", t.power),
                    ));
                }
            }
        }
        Ok(())
    }

    /// True when every additive diffusion part vanishes identically.
    pub fn is_existence_mode(&self) -> bool {
        self.diffusion.iter().all(|r| is_zero_constant(&r.eta0))
    }

    pub fn has_measure_terms(&self) -> bool {
        !self.drift.measure_terms.is_empty()
    }

    /// Rows eligible for zero absorption: no additive noise and a power below one.
    pub fn absorbing_rows(&self) -> Vec<bool> {
        self.diffusion
            .iter()
            .map(|r| is_zero_constant(&r.eta0) && r.terms.iter().any(|t| t.power < 1.0))
            .collect()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).unwrap_or_default();
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn fill(c: &CoefficientFn, t: f64, n: usize) -> Vec<f64> {
        if c.shape() == Shape::Scalar && n != 1 {
            // only the zero default reaches here
            return vec![c.scalar_at(t); n];
        }
        c.values_at(t)
    }

    /// Coefficient values at time `t`.
    pub fn frame(&self, t: f64) -> Frame {
        let (m, d) = (self.m, self.d);
        let dr = &self.drift;
        Frame {
            kappa: Self::fill(&dr.kappa, t, m),
            linear: Self::fill(&dr.linear_eta, t, m),
            nonlinear: dr.nonlinear_terms.iter().map(|n| Self::fill(&n.eta, t, m)).collect(),
            lambda: dr.measure_terms.iter().map(|k| k.lambda.values_at(t)).collect(),
            eta0: self.diffusion.iter().map(|r| Self::fill(&r.eta0, t, d)).collect(),
            diff: self
                .diffusion
                .iter()
                .map(|r| r.terms.iter().map(|k| Self::fill(&k.eta, t, d)).collect())
                .collect(),
        }
    }

    /// Evaluates every measure functional against `mu`.
    pub fn measure_values(&self, mu: &EmpiricalMeasure) -> Result<Vec<Vec<f64>>> {
        self.drift.measure_terms.iter().map(|k| k.g.eval(mu)).collect()
    }

    /// Drift at `x` given the frame and measure values; `z` is scratch of length `m`.
    pub fn drift_into(
        &self,
        frame: &Frame,
        u: &[f64],
        gvals: &[Vec<f64>],
        x: &[f64],
        z: &mut [f64],
        out: &mut [f64],
    ) {
        let m = self.m;
        to_frame(u, m, x, z);
        // accumulate the u-frame part in a small buffer, then rotate back
        let mut w = [0.0f64; 16];
        let mut heap;
        let wbuf: &mut [f64] = if m <= 16 {
            &mut w[..m]
        } else {
            heap = vec![0.0; m];
            &mut heap
        };
        for i in 0..m {
            let mut acc = frame.linear[i] * z[i];
            for (n, term) in self.drift.nonlinear_terms.iter().enumerate() {
                let e = frame.nonlinear[n][i];
                if e != 0.0 {
                    acc += e * term.form(i).eval(z[i]);
                }
            }
            wbuf[i] = acc;
        }
        for r in 0..m {
            let mut acc = frame.kappa[r];
            for i in 0..m {
                acc += u[r * m + i] * wbuf[i];
            }
            out[r] = acc;
        }
        for (k, g) in gvals.iter().enumerate() {
            let lam = &frame.lambda[k];
            let mh = g.len();
            for r in 0..m {
                let mut acc = 0.0;
                for j in 0..mh {
                    acc += lam[r * mh + j] * g[j];
                }
                out[r] += acc;
            }
        }
    }

    /// Diffusion matrix `m x d` (row-major) at `x`; `z` must hold `u'x`.
    pub fn diffusion_into(&self, frame: &Frame, u: &[f64], z: &[f64], out: &mut [f64]) {
        let (m, d) = (self.m, self.d);
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..m {
            let row = &self.diffusion[i];
            let a = z[i].abs();
            for c in 0..d {
                let mut s = frame.eta0[i][c];
                for (k, t) in row.terms.iter().enumerate() {
                    let e = frame.diff[i][k][c];
                    if e != 0.0 {
                        let pw = if t.power == 0.5 {
                            a.sqrt()
                        } else if t.power == 1.0 {
                            a
                        } else {
                            a.powf(t.power)
                        };
                        s += e * pw;
                    }
                }
                if s != 0.0 {
                    for r in 0..m {
                        out[r * d + c] += u[r * m + i] * s;
                    }
                }
            }
        }
    }
}

/// `z = u'x` for a row-major `u`.
pub fn to_frame(u: &[f64], m: usize, x: &[f64], z: &mut [f64]) {
    if m == 1 {
        z[0] = u[0] * x[0];
        return;
    }
    for i in 0..m {
        let mut acc = 0.0;
        for r in 0..m {
            acc += u[r * m + i] * x[r];
        }
        z[i] = acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn ou() -> ModelSpec {
        serde_json::from_str(
            r#"{"m":1,"d":1,
                "drift":{"linear_eta":-2,"measure_terms":[{"lambda":1,"g":{"kind":"mean"}}]},
                "diffusion":[{"terms":[{"eta":0.3,"power":0.5}]}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn parses_and_validates() {
        let m = ou();
        m.validate().unwrap();
        assert!(m.is_existence_mode());
        assert_eq!(m.absorbing_rows(), vec![true]);
        assert_eq!(m.fingerprint().len(), 64);
    }

    #[test]
    fn drift_and_diffusion_values() {
        let m = ou();
        let f = m.frame(0.0);
        let u = m.u_matrix();
        let mu = EmpiricalMeasure::from_scalars(&[1.0, 3.0]).unwrap();
        let g = m.measure_values(&mu).unwrap();
        let mut z = [0.0];
        let mut out = [0.0];
        m.drift_into(&f, &u, &g, &[0.5], &mut z, &mut out);
        assert_eq!(out[0], -1.0 + 2.0);
        let mut s = [0.0];
        m.diffusion_into(&f, &u, &[4.0], &mut s);
        assert!((s[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn rotated_frame() {
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let m: ModelSpec = serde_json::from_value(serde_json::json!({
            "m": 2, "d": 2, "u": [[c, -c], [c, c]],
            "drift": {"linear_eta": [-1.0, -2.0],
                      "nonlinear_terms": [{"eta": [1.0, 1.0], "f": [{"form": "odd_poly_neg", "degree": 3}]}]},
            "diffusion": [{"terms": [{"eta": [0.1, 0.0], "power": 0.5}]},
                          {"terms": [{"eta": [0.0, 0.1], "power": 0.5}]}]
        }))
        .unwrap();
        m.validate().unwrap();
        let u = m.u_matrix();
        let f = m.frame(0.0);
        let x = [0.3, -0.7];
        let mut z = [0.0; 2];
        let mut out = [0.0; 2];
        m.drift_into(&f, &u, &[], &x, &mut z, &mut out);
        // recompute in the frame by hand
        let z0 = c * x[0] + c * x[1];
        let z1 = -c * x[0] + c * x[1];
        let w0 = -z0 - z0.powi(3);
        let w1 = -2.0 * z1 - z1.powi(3);
        assert!((out[0] - (c * w0 - c * w1)).abs() < 1e-14);
        assert!((out[1] - (c * w0 + c * w1)).abs() < 1e-14);
    }

    #[test]
    fn validation_names_fields() {
        let bad = r#"{"m":1,"d":1,"drift":{},"diffusion":[{"terms":[{"eta":0.3,"power":0.25}]}]}"#;
        let m: ModelSpec = serde_json::from_str(bad).unwrap();
        let e = m.validate().unwrap_err().to_string();
        assert!(e.contains("model.diffusion[0].terms[0].power"), "{e}");
        let bad = r#"{"m":2,"d":1,"u":[[1,0],[0.5,1]],"drift":{},"diffusion":[{},{}]}"#;
        let m: ModelSpec = serde_json::from_str(bad).unwrap();
        assert!(m.validate().unwrap_err().to_string().contains("model.u"));
        let bad = r#"{"m":1,"d":1,"drift":{"nonlinear_terms":[{"eta":1,"f":[{"form":"odd_poly_neg","degree":2}]}]},"diffusion":[{}]}"#;
        let m: ModelSpec = serde_json::from_str(bad).unwrap();
        assert!(m.validate().unwrap_err().to_string().contains("f[0]"));
        assert!(serde_json::from_str::<ModelSpec>(r#"{"m":1,"d":1,"drift":{},"diffusion":[],"x":1}"#).is_err());
    }

    #[test]
    fn scalar_forms() {
        assert_eq!(ScalarForm::SignedPower { a: 2.0, alpha: 0.5 }.eval(-4.0), -4.0);
        assert_eq!(ScalarForm::OddPolyNeg { degree: 3 }.eval(-2.0), 8.0);
        let t = ScalarForm::DecreasingTable { points: vec![(0.0, 1.0), (1.0, -1.0)] };
        assert_eq!(t.eval(0.5), 0.0);
        assert_eq!(t.eval(5.0), -1.0);
        assert_eq!(ScalarForm::SignedPower { a: 1.0, alpha: 0.5 }.eval(0.0), 0.0);
    }
}

//! Moduli of continuity: continuous maps on `[0, inf)`, zero at zero and
//! positive elsewhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Concrete shape of a modulus.
#[derive(Debug, Clone, PartialEq)]
pub enum ModulusForm {
    /// `v^alpha`
    Power(f64),
    /// `c v`
    LinearCap(f64),
    /// `a v (|ln v| + 1)`
    LogModulus(f64),
    /// Pointwise maximum of the members.
    MaxOf(Vec<Modulus>),
    /// Log-log linear interpolation of samples with power-law tails.
    Tabulated(Table),
}

/// Samples `(v_k, rho_k)` with `v` strictly increasing and `rho > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    ln_v: Vec<f64>,
    ln_r: Vec<f64>,
}

impl Table {
    pub fn new(points: &[(f64, f64)]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::param("points", "a table needs at least two samples"));
        }
        for (k, &(v, r)) in points.iter().enumerate() {
            if !(v > 0.0 && v.is_finite() && r > 0.0 && r.is_finite()) {
                return Err(Error::param(
                    format!("points[{k}]"),
                    "samples must be finite and strictly positive",
                ));
            }
        }
        if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::param("points", "abscissae must be strictly increasing"));
        }
        let t = Self {
            ln_v: points.iter().map(|p| p.0.ln()).collect(),
            ln_r: points.iter().map(|p| p.1.ln()).collect(),
        };
        if !(t.left_slope() > 0.0) {
            return Err(Error::param(
                "points",
                "the first segment must increase so the extrapolated tail vanishes at 0",
            ));
        }
        Ok(t)
    }

    fn slope(&self, k: usize) -> f64 {
        (self.ln_r[k + 1] - self.ln_r[k]) / (self.ln_v[k + 1] - self.ln_v[k])
    }

    /// Power-law exponent of the extrapolated tail at 0.
    pub fn left_slope(&self) -> f64 {
        self.slope(0)
    }

    /// Power-law exponent of the extrapolated tail at infinity.
    pub fn right_slope(&self) -> f64 {
        self.slope(self.ln_v.len() - 2)
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.ln_v
            .iter()
            .zip(&self.ln_r)
            .map(|(a, b)| (a.exp(), b.exp()))
            .collect()
    }

    fn eval_ln(&self, lv: f64) -> f64 {
        let n = self.ln_v.len();
        let k = if lv <= self.ln_v[0] {
            0
        } else if lv >= self.ln_v[n - 1] {
            n - 2
        } else {
            self.ln_v.partition_point(|&x| x <= lv).saturating_sub(1).min(n - 2)
        };
        self.ln_r[k] + self.slope(k) * (lv - self.ln_v[k])
    }
}

/// A modulus with its declared shape flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModulusRepr", into = "ModulusRepr")]
pub struct Modulus {
    form: ModulusForm,
    is_increasing: Option<bool>,
    power_concavity_exponent: Option<f64>,
}

/// Abscissae of the shape checks: 64 log-spaced points on `[1e-8, 1e8]`.
pub fn check_grid() -> Vec<f64> {
    (0..64)
        .map(|k| 10f64.powf(-8.0 + 16.0 * k as f64 / 63.0))
        .collect()
}

impl Modulus {
    /// Wraps a form, declares no flags and runs the positivity check.
    pub fn from_form(form: ModulusForm) -> Result<Self> {
        Self::with_flags(form, None, None)
    }

    /// Wraps a form with declared flags; declared flags are verified numerically.
    pub fn with_flags(
        form: ModulusForm,
        is_increasing: Option<bool>,
        power_concavity_exponent: Option<f64>,
    ) -> Result<Self> {
        match &form {
            ModulusForm::Power(a) if !(*a > 0.0 && a.is_finite()) => {
                return Err(Error::param("alpha", format!("must be positive, got {a}")))
            }
            ModulusForm::LinearCap(c) if !(*c >= 0.0 && c.is_finite()) => {
                return Err(Error::param("c", format!("must be >= 0, got {c}")))
            }
            ModulusForm::LogModulus(a) if !(*a > 0.0 && a.is_finite()) => {
                return Err(Error::param("a", format!("must be positive, got {a}")))
            }
            ModulusForm::MaxOf(ms) if ms.is_empty() => {
                return Err(Error::param("members", "max_of needs at least one member"))
            }
            _ => {}
        }
        let m = Self {
            form,
            is_increasing,
            power_concavity_exponent,
        };
        m.verify()?;
        Ok(m)
    }

    pub fn power(alpha: f64) -> Result<Self> {
        Self::with_flags(ModulusForm::Power(alpha), Some(true), Some(alpha))
    }

    pub fn linear(c: f64) -> Result<Self> {
        Self::with_flags(ModulusForm::LinearCap(c), Some(true), Some(1.0))
    }

    pub fn log(a: f64) -> Result<Self> {
        Self::with_flags(ModulusForm::LogModulus(a), Some(true), None)
    }

    pub fn max_of(members: Vec<Modulus>) -> Result<Self> {
        let inc = members.iter().all(|m| m.is_increasing == Some(true));
        Self::with_flags(ModulusForm::MaxOf(members), inc.then_some(true), None)
    }

    pub fn tabulated(points: &[(f64, f64)]) -> Result<Self> {
        Self::from_form(ModulusForm::Tabulated(Table::new(points)?))
    }

    pub fn form(&self) -> &ModulusForm {
        &self.form
    }

    pub fn is_increasing(&self) -> Option<bool> {
        self.is_increasing
    }

    pub fn power_concavity_exponent(&self) -> Option<f64> {
        self.power_concavity_exponent
    }

    /// `rho(v)`; zero for `v <= 0`.
    pub fn eval(&self, v: f64) -> f64 {
        if !(v > 0.0) {
            return 0.0;
        }
        match &self.form {
            ModulusForm::Power(a) => {
                if *a == 1.0 {
                    v
                } else if *a == 0.5 {
                    v.sqrt()
                } else {
                    v.powf(*a)
                }
            }
            ModulusForm::LinearCap(c) => c * v,
            ModulusForm::LogModulus(a) => a * v * (v.ln().abs() + 1.0),
            ModulusForm::MaxOf(ms) => ms.iter().map(|m| m.eval(v)).fold(0.0, f64::max),
            ModulusForm::Tabulated(t) => {
                if v.is_infinite() {
                    return f64::INFINITY;
                }
                t.eval_ln(v.ln()).exp()
            }
        }
    }

    /// `rho` scaled by a positive constant in the argument: `v -> rho(c v)`.
    pub fn eval_scaled(&self, c: f64, v: f64) -> f64 {
        self.eval(c * v)
    }

    /// True for the identically zero `LinearCap(0)`.
    pub fn is_degenerate(&self) -> bool {
        matches!(self.form, ModulusForm::LinearCap(c) if c == 0.0)
    }

    fn verify(&self) -> Result<()> {
        if self.is_degenerate() {
            // c = 0 is admitted as a building block for maxima only
            return Ok(());
        }
        let grid = check_grid();
        let vals: Vec<f64> = grid.iter().map(|&v| self.eval(v)).collect();
        if let Some(k) = vals.iter().position(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::param(
                "modulus",
                format!("not positive and finite at v = {:e}", grid[k]),
            ));
        }
        if self.eval(0.0) != 0.0 {
            return Err(Error::param("modulus", "must vanish at 0"));
        }
        if self.is_increasing == Some(true) && vals.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::param(
                "is_increasing",
                "declared increasing but the grid check fails",
            ));
        }
        if let Some(alpha) = self.power_concavity_exponent {
            if !(alpha > 0.0) {
                return Err(Error::param(
                    "power_concavity_exponent",
                    "must be positive",
                ));
            }
            let f = |v: f64| self.eval(v).powf(1.0 / alpha);
            let mut pts = vec![0.0];
            pts.extend(&grid);
            for w in pts.windows(2) {
                let (a, b) = (w[0], w[1]);
                let mid = f(0.5 * (a + b));
                let chord = 0.5 * (f(a) + f(b));
                if mid < chord - 1e-12 * chord.abs().max(1e-300) {
                    return Err(Error::param(
                        "power_concavity_exponent",
                        format!("rho^(1/{alpha}) is not concave near v = {b:e}"),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModulusRepr {
    form: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    members: Option<Vec<Modulus>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    points: Option<Vec<(f64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    is_increasing: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    power_concavity_exponent: Option<f64>,
}

fn need<T>(v: Option<T>, name: &str, form: &str) -> Result<T> {
    v.ok_or_else(|| Error::param(name, format!("required for form `{form}`")))
}

impl TryFrom<ModulusRepr> for Modulus {
    type Error = Error;

    fn try_from(r: ModulusRepr) -> Result<Self> {
        let extra = |fields: &[(&str, bool)]| -> Result<()> {
            for (name, present) in fields {
                if *present {
                    return Err(Error::param(
                        *name,
                        format!("not accepted for form `{}`", r.form),
                    ));
                }
            }
            Ok(())
        };
        let (form, default_inc, default_conc) = match r.form.as_str() {
            "power" => {
                extra(&[("c", r.c.is_some()), ("a", r.a.is_some()), ("members", r.members.is_some()), ("points", r.points.is_some())])?;
                let a = need(r.alpha, "alpha", "power")?;
                (ModulusForm::Power(a), Some(true), Some(a))
            }
            "linear" => {
                extra(&[("alpha", r.alpha.is_some()), ("a", r.a.is_some()), ("members", r.members.is_some()), ("points", r.points.is_some())])?;
                (ModulusForm::LinearCap(need(r.c, "c", "linear")?), Some(true), Some(1.0))
            }
            "log" => {
                extra(&[("alpha", r.alpha.is_some()), ("c", r.c.is_some()), ("members", r.members.is_some()), ("points", r.points.is_some())])?;
                (ModulusForm::LogModulus(need(r.a, "a", "log")?), Some(true), None)
            }
            "max_of" => {
                extra(&[("alpha", r.alpha.is_some()), ("c", r.c.is_some()), ("a", r.a.is_some()), ("points", r.points.is_some())])?;
                let ms = need(r.members.clone(), "members", "max_of")?;
                let inc = ms.iter().all(|m| m.is_increasing == Some(true));
                (ModulusForm::MaxOf(ms), inc.then_some(true), None)
            }
            "tabulated" => {
                extra(&[("alpha", r.alpha.is_some()), ("c", r.c.is_some()), ("a", r.a.is_some()), ("members", r.members.is_some())])?;
                let pts = need(r.points.clone(), "points", "tabulated")?;
                (ModulusForm::Tabulated(Table::new(&pts)?), None, None)
            }
            other => {
                return Err(Error::param(
                    "form",
                    format!("unknown modulus form `{other}` (expected power, linear, log, max_of, tabulated)"),
                ))
            }
        };
        Modulus::with_flags(
            form,
            r.is_increasing.or(default_inc),
            r.power_concavity_exponent.or(default_conc),
        )
    }
}

impl From<Modulus> for ModulusRepr {
    fn from(m: Modulus) -> Self {
        let mut r = ModulusRepr {
            form: String::new(),
            alpha: None,
            c: None,
            a: None,
            members: None,
            points: None,
            is_increasing: m.is_increasing,
            power_concavity_exponent: m.power_concavity_exponent,
        };
        match m.form {
            ModulusForm::Power(a) => {
                r.form = "power".into();
                r.alpha = Some(a);
            }
            ModulusForm::LinearCap(c) => {
                r.form = "linear".into();
                r.c = Some(c);
            }
            ModulusForm::LogModulus(a) => {
                r.form = "log".into();
                r.a = Some(a);
            }
            ModulusForm::MaxOf(ms) => {
                r.form = "max_of".into();
                r.members = Some(ms);
            }
            ModulusForm::Tabulated(t) => {
                r.form = "tabulated".into();
                r.points = Some(t.points());
            }
        }
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluation() {
        assert_eq!(Modulus::power(0.5).unwrap().eval(4.0), 2.0);
        assert_eq!(Modulus::linear(3.0).unwrap().eval(2.0), 6.0);
        let l = Modulus::log(2.0).unwrap();
        assert_eq!(l.eval(1.0), 2.0);
        assert_eq!(l.eval(0.0), 0.0);
        let mx = Modulus::max_of(vec![Modulus::power(0.5).unwrap(), Modulus::power(2.0).unwrap()])
            .unwrap();
        assert_eq!(mx.eval(4.0), 16.0);
        assert_eq!(mx.eval(0.25), 0.5);
    }

    #[test]
    fn tabulated_power_law_is_exact() {
        let t = Modulus::tabulated(&[(0.01, 0.1), (1.0, 1.0), (100.0, 10.0)]).unwrap();
        for v in [1e-6, 0.5, 3.0, 1e5] {
            assert!((t.eval(v) - v.sqrt()).abs() < 1e-12 * v.sqrt().max(1.0));
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Modulus::power(0.0).is_err());
        assert!(Modulus::linear(0.0).unwrap().is_degenerate());
        assert!(Modulus::linear(-1.0).is_err());
        assert!(Modulus::tabulated(&[(1.0, 2.0), (2.0, 1.0)]).is_err());
        // v^2 is not concave
        assert!(Modulus::with_flags(ModulusForm::Power(2.0), None, Some(1.0)).is_err());
        assert!(Modulus::with_flags(ModulusForm::Power(0.5), None, Some(0.5)).is_ok());
    }

    #[test]
    fn json_forms() {
        let m: Modulus = serde_json::from_str(r#"{"form":"power","alpha":0.5}"#).unwrap();
        assert_eq!(m, Modulus::power(0.5).unwrap());
        let back: Modulus = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<Modulus>(r#"{"form":"power"}"#).is_err());
        assert!(serde_json::from_str::<Modulus>(r#"{"form":"power","alpha":1,"c":2}"#).is_err());
        assert!(serde_json::from_str::<Modulus>(r#"{"form":"cubic"}"#).is_err());
        assert!(serde_json::from_str::<Modulus>(r#"{"form":"power","alpha":1,"zz":2}"#).is_err());
        let mx: Modulus = serde_json::from_str(
            r#"{"form":"max_of","members":[{"form":"linear","c":0},{"form":"power","alpha":0.5}]}"#,
        )
        .unwrap();
        assert_eq!(mx.eval(4.0), 2.0);
    }
}

//! The maps `Phi_rho`, `Psi_rho`, the Bihari domain and Osgood tests.

use serde::Serialize;

use crate::coeff::CoefficientFn;
use crate::error::{Error, Result};
use crate::modulus::{Modulus, ModulusForm};
use crate::numeric::{check_grid, integrate};

/// Values beyond this magnitude are classified as infinite.
pub const INFINITY_CUTOFF: f64 = 1e12;

const PHI_ABS_TOL: f64 = 1e-10;
const PHI_REL_TOL: f64 = 1e-13;

/// Outcome of a divergence test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Diverges,
    Converges,
    Unknown,
}

/// A limit that may be infinite or could not be determined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Limit {
    Known(f64),
    Unknown,
}

impl Limit {
    pub fn value(self) -> Option<f64> {
        match self {
            Limit::Known(v) => Some(v),
            Limit::Unknown => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Zero,
    Infinity,
}

fn non_degenerate(rho: &Modulus) -> Result<()> {
    if rho.is_degenerate() {
        Err(Error::Precondition("the modulus is identically zero".into()))
    } else {
        Ok(())
    }
}

/// `int_a^b e^u / rho(e^u) du`, i.e. `int_{e^a}^{e^b} dv / rho(v)`.
fn log_integral(rho: &Modulus, a: f64, b: f64) -> Result<f64> {
    integrate(
        |u| {
            let v = u.exp();
            v / rho.eval(v)
        },
        a,
        b,
        PHI_ABS_TOL,
        PHI_REL_TOL,
    )
}

fn phi_impl(rho: &Modulus, w: f64, closed: bool) -> Result<f64> {
    non_degenerate(rho)?;
    if !(w > 0.0) || !w.is_finite() {
        return Err(Error::param("w", format!("must be positive and finite, got {w}")));
    }
    if w == 1.0 {
        return Ok(0.0);
    }
    let lw = w.ln();
    if closed {
        match rho.form() {
            ModulusForm::Power(a) => {
                return Ok(if *a == 1.0 {
                    lw
                } else {
                    ((1.0 - a) * lw).exp_m1() / (1.0 - a)
                })
            }
            ModulusForm::LinearCap(c) => return Ok(lw / c),
            ModulusForm::LogModulus(a) => return Ok(lw.signum() * lw.abs().ln_1p() / a),
            _ => {}
        }
    }
    log_integral(rho, 0.0, lw)
}

/// `Phi_rho(w) = int_1^w dv / rho(v)`; negative for `w < 1`.
///
/// Closed forms are used for power, linear and logarithmic moduli, adaptive
/// quadrature in `ln v` otherwise.
pub fn phi_rho(rho: &Modulus, w: f64) -> Result<f64> {
    phi_impl(rho, w, true)
}

/// [`phi_rho`] forced through the quadrature route.
pub fn phi_rho_numeric(rho: &Modulus, w: f64) -> Result<f64> {
    phi_impl(rho, w, false)
}

fn tail(rho: &Modulus, side: Side, exponent: f64) -> Verdict {
    let power_rule = |s: f64| {
        let p = s * exponent;
        match side {
            Side::Zero if p >= 1.0 => Verdict::Diverges,
            Side::Zero => Verdict::Converges,
            Side::Infinity if p <= 1.0 => Verdict::Diverges,
            Side::Infinity => Verdict::Converges,
        }
    };
    match rho.form() {
        ModulusForm::Power(a) => power_rule(*a),
        ModulusForm::LinearCap(c) if *c == 0.0 => Verdict::Diverges,
        ModulusForm::LinearCap(_) => power_rule(1.0),
        ModulusForm::LogModulus(_) => {
            // v |ln v| behaves like exponent 1 with a logarithmic correction
            match side {
                Side::Zero if exponent >= 1.0 => Verdict::Diverges,
                Side::Zero => Verdict::Converges,
                Side::Infinity if exponent <= 1.0 => Verdict::Diverges,
                Side::Infinity => Verdict::Converges,
            }
        }
        ModulusForm::MaxOf(ms) => {
            let live: Vec<&Modulus> = ms.iter().filter(|m| !m.is_degenerate()).collect();
            if live.is_empty() {
                return Verdict::Diverges;
            }
            let vs: Vec<Verdict> = live.iter().map(|m| tail(m, side, exponent)).collect();
            if vs.contains(&Verdict::Converges) {
                Verdict::Converges
            } else if vs.iter().all(|v| *v == Verdict::Diverges) {
                Verdict::Diverges
            } else {
                Verdict::Unknown
            }
        }
        ModulusForm::Tabulated(t) => {
            let s = match side {
                Side::Zero => t.left_slope(),
                Side::Infinity => t.right_slope(),
            };
            if (s * exponent - 1.0).abs() < 1e-9 {
                Verdict::Unknown
            } else {
                power_rule(s)
            }
        }
    }
}

/// Numerical extrapolation of `int_0^{+-L} e^u / rho(e^u) du` as `L` doubles.
fn extrapolate(rho: &Modulus, side: Side) -> Limit {
    let sign = match side {
        Side::Zero => -1.0,
        Side::Infinity => 1.0,
    };
    let mut total = match log_integral(rho, 0.0, sign) {
        Ok(v) => v.abs(),
        Err(_) => return Limit::Unknown,
    };
    let mut prev: Option<f64> = None;
    let mut l = 1.0f64;
    for _ in 0..24 {
        let seg = match log_integral(rho, sign * l, sign * 2.0 * l) {
            Ok(v) => v.abs(),
            Err(_) => return Limit::Known(sign * f64::INFINITY),
        };
        total += seg;
        if total > INFINITY_CUTOFF {
            return Limit::Known(sign * f64::INFINITY);
        }
        if seg <= 1e-15 * total {
            return Limit::Known(sign * total);
        }
        if let Some(p) = prev {
            let r = seg / p;
            if r >= 0.9 && l >= 8.0 {
                return Limit::Known(sign * f64::INFINITY);
            }
            if r > 0.75 && l >= 1024.0 {
                return Limit::Unknown;
            }
        }
        prev = Some(seg);
        l *= 2.0;
    }
    Limit::Unknown
}

fn endpoint(rho: &Modulus, side: Side) -> Limit {
    let sign = if side == Side::Zero { -1.0 } else { 1.0 };
    match tail(rho, side, 1.0) {
        Verdict::Diverges => Limit::Known(sign * f64::INFINITY),
        Verdict::Converges => match rho.form() {
            ModulusForm::Power(a) => Limit::Known(sign / (1.0 - a).abs()),
            _ => match extrapolate(rho, side) {
                Limit::Known(v) if v.is_finite() => Limit::Known(v),
                _ => Limit::Unknown,
            },
        },
        Verdict::Unknown => extrapolate(rho, side),
    }
}

/// `(Phi_rho(0), Phi_rho(inf))`; either may be infinite or undetermined.
pub fn phi_rho_endpoints(rho: &Modulus) -> (Limit, Limit) {
    if rho.is_degenerate() {
        return (Limit::Unknown, Limit::Unknown);
    }
    (endpoint(rho, Side::Zero), endpoint(rho, Side::Infinity))
}

fn phi_at(rho: &Modulus, v: f64, zero: Limit) -> Option<f64> {
    if v == 0.0 {
        zero.value()
    } else {
        phi_rho(rho, v).ok()
    }
}

/// Membership in `D_rho = {(v, w) : Phi(v) + w < Phi(inf)}`.
///
/// Undetermined endpoints make the answer `false`.
pub fn in_domain(rho: &Modulus, v: f64, w: f64) -> bool {
    if rho.is_degenerate() || !(v >= 0.0) || !(w >= 0.0) || !v.is_finite() || !w.is_finite() {
        return false;
    }
    let (zero, inf) = phi_rho_endpoints(rho);
    match (phi_at(rho, v, zero), inf.value()) {
        (Some(p), Some(top)) => top == f64::INFINITY || p + w < top,
        _ => false,
    }
}

fn inverse_closed(rho: &Modulus, y: f64) -> Option<f64> {
    match rho.form() {
        ModulusForm::Power(a) => Some(if *a == 1.0 {
            y.exp()
        } else {
            let base = (1.0 - a) * y;
            if base <= -1.0 {
                0.0
            } else {
                (base.ln_1p() / (1.0 - a)).exp()
            }
        }),
        ModulusForm::LinearCap(c) => Some((c * y).exp()),
        ModulusForm::LogModulus(a) => Some((y.signum() * (a * y.abs()).exp_m1()).exp()),
        _ => None,
    }
}

/// Bisection in `ln v` with incremental quadrature, to relative 1e-12 in `v`.
fn inverse_numeric(rho: &Modulus, y: f64) -> Result<f64> {
    if y == 0.0 {
        return Ok(1.0);
    }
    let dir = y.signum();
    let (mut lo, mut phi_lo) = (0.0f64, 0.0f64);
    let mut step = 1.0f64;
    let (mut hi, mut phi_hi);
    loop {
        hi = lo + dir * step;
        if hi.abs() > 700.0 {
            return Err(Error::NoBracket(format!("Phi^-1({y})")));
        }
        phi_hi = phi_lo + log_integral(rho, lo, hi)?;
        if (phi_hi - y) * dir >= 0.0 {
            break;
        }
        lo = hi;
        phi_lo = phi_hi;
        step *= 2.0;
    }
    for _ in 0..200 {
        if (hi - lo).abs() <= 1e-12 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let phi_mid = phi_lo + log_integral(rho, lo, mid)?;
        if (phi_mid - y) * dir >= 0.0 {
            hi = mid;
            phi_hi = phi_mid;
        } else {
            lo = mid;
            phi_lo = phi_mid;
        }
    }
    // linear interpolation inside the final bracket
    let span = phi_hi - phi_lo;
    let x = if span > 0.0 || span < 0.0 {
        lo + (hi - lo) * ((y - phi_lo) / span).clamp(0.0, 1.0)
    } else {
        0.5 * (lo + hi)
    };
    Ok(x.exp())
}

fn psi_impl(rho: &Modulus, v: f64, w: f64, closed: bool) -> Result<f64> {
    non_degenerate(rho)?;
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::param("v", format!("must be finite and >= 0, got {v}")));
    }
    if !(w >= 0.0) || !w.is_finite() {
        return Err(Error::param("w", format!("must be finite and >= 0, got {w}")));
    }
    if w == 0.0 {
        return Ok(v);
    }
    if !in_domain(rho, v, w) {
        return Err(Error::OutsideDomain { v, w });
    }
    let y = if v == 0.0 {
        match phi_rho_endpoints(rho).0 {
            Limit::Known(z) if z == f64::NEG_INFINITY => return Ok(0.0),
            Limit::Known(z) => z + w,
            Limit::Unknown => return Err(Error::OutsideDomain { v, w }),
        }
    } else {
        phi_impl(rho, v, closed)? + w
    };
    if closed {
        if let Some(x) = inverse_closed(rho, y) {
            return Ok(x);
        }
    }
    if v == 0.0 {
        // Phi(0) is finite here; the inverse lies above 0
        return inverse_numeric(rho, y);
    }
    inverse_numeric(rho, y)
}

/// `Psi_rho(v, w) = Phi^-1(Phi(v) + w)` on the Bihari domain.
pub fn psi_rho(rho: &Modulus, v: f64, w: f64) -> Result<f64> {
    psi_impl(rho, v, w, true)
}

/// [`psi_rho`] forced through quadrature and bisection.
pub fn psi_rho_numeric(rho: &Modulus, v: f64, w: f64) -> Result<f64> {
    psi_impl(rho, v, w, false)
}

/// Tests `int_0^1 rho(v)^-exponent dv = inf`.
pub fn osgood_diverges_at_zero(rho: &Modulus, exponent: u32) -> Verdict {
    tail(rho, Side::Zero, exponent as f64)
}

/// Bihari bound on a grid together with the blow-up time.
#[derive(Debug, Clone, PartialEq)]
pub struct BihariCurve {
    pub grid: Vec<f64>,
    /// Bound values on the leading grid points that lie in the domain.
    pub values: Vec<f64>,
    /// First grid point outside the domain, `+inf` when there is none.
    pub t0_plus: f64,
}

/// `t -> Psi_rho0(initial + int add, int mult)` until the domain is left.
pub fn bihari_bound_curve(
    rho0: &Modulus,
    initial: f64,
    additive: &CoefficientFn,
    multiplicative: &CoefficientFn,
    grid: &[f64],
) -> Result<BihariCurve> {
    check_grid(grid)?;
    if !(initial >= 0.0) {
        return Err(Error::param("initial", format!("must be >= 0, got {initial}")));
    }
    let t0 = grid[0];
    let mut values = Vec::with_capacity(grid.len());
    let mut t0_plus = f64::INFINITY;
    for &t in grid {
        let v = initial + additive.integral(t0, t)?;
        let w = multiplicative.integral(t0, t)?;
        if v < 0.0 || w < 0.0 {
            return Err(Error::Precondition(format!(
                "integrated coefficients must stay nonnegative (at t = {t})"
            )));
        }
        if !in_domain(rho0, v, w) {
            t0_plus = t;
            break;
        }
        values.push(psi_rho(rho0, v, w)?);
    }
    Ok(BihariCurve {
        grid: grid.to_vec(),
        values,
        t0_plus,
    })
}

//! Yamada-Watanabe approximations of the identity.
//!
//! For a modulus `rho` with `int_0^1 rho^-2 = inf`, the cutoffs solve
//! `int_{a_n}^{a_{n-1}} rho^-2 = n` and `psi_n'' = kappa rho^-2 h(M / n) / n`
//! where `M(x) = int_{a_n}^x rho^-2` and `h` is a C1 piecewise-quadratic hat
//! with plateau `[1/4, 3/4]`. Since `int h = 3/4`, `kappa = 4/3` gives unit
//! mass and `psi'' <= (2/3) (2/n) rho^-2`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::modulus::{Modulus, ModulusForm};
use crate::numeric::integrate;
use crate::osgood::{osgood_diverges_at_zero, Verdict};

const KAPPA: f64 = 4.0 / 3.0;
const RAMP: f64 = 0.25;

/// Hat `h` on `[0, 1]`.
fn hat(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        return 0.0;
    }
    let x = s.min(1.0 - s) / RAMP;
    if x >= 1.0 {
        1.0
    } else if x <= 0.5 {
        2.0 * x * x
    } else {
        1.0 - 2.0 * (1.0 - x) * (1.0 - x)
    }
}

/// `H(s) = int_0^s h`, using symmetry `H(s) = 3/4 - H(1 - s)`.
fn hat_integral(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return 0.75;
    }
    if s > 0.5 {
        return 0.75 - hat_integral(1.0 - s);
    }
    // rising ramp over [0, RAMP], then the plateau
    let ramp = |x: f64| {
        // int_0^x of the ramp in units of RAMP
        if x <= 0.5 {
            2.0 * x * x * x / 3.0
        } else {
            let y = 1.0 - x;
            // total ramp area 1/2 minus the part beyond x
            0.5 - (y - 2.0 * y * y * y / 3.0)
        }
    };
    let x = s / RAMP;
    if x <= 1.0 {
        RAMP * ramp(x)
    } else {
        RAMP * 0.5 + (s - RAMP)
    }
}

/// `int_a^b rho^-2`.
fn inv_sq_integral(rho: &Modulus, a: f64, b: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    match rho.form() {
        ModulusForm::Power(al) => {
            let e = 1.0 - 2.0 * al;
            Ok(if e == 0.0 {
                (b / a).ln()
            } else {
                (b.powf(e) - a.powf(e)) / e
            })
        }
        ModulusForm::LinearCap(c) if *c > 0.0 => Ok((1.0 / a - 1.0 / b) / (c * c)),
        _ => integrate(
            |u| {
                let v = u.exp();
                let r = rho.eval(v);
                v / (r * r)
            },
            a.ln(),
            b.ln(),
            1e-12,
            1e-13,
        ),
    }
}

/// One element of the approximation sequence.
#[derive(Debug, Clone)]
pub struct YWApprox {
    rho: Modulus,
    n: usize,
    a_prev: f64,
    a_n: f64,
    psi_at_prev: f64,
    curvature_scale: f64,
}

impl YWApprox {
    /// Builds `psi_n` on `(a_n, a_prev)`; `a_n` is found by bisection in `ln c`.
    pub fn build(rho: &Modulus, n: usize, a_prev: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("n", "must be positive"));
        }
        if !(a_prev > 0.0 && a_prev <= 1.0) {
            return Err(Error::param("a_prev", format!("must lie in (0, 1], got {a_prev}")));
        }
        if osgood_diverges_at_zero(rho, 2) != Verdict::Diverges {
            return Err(Error::Precondition(
                "int_0^1 rho^-2 must diverge for a Yamada-Watanabe sequence".into(),
            ));
        }
        let target = n as f64;
        let la = a_prev.ln();
        let f = |lc: f64| inv_sq_integral(rho, lc.exp(), a_prev).map(|v| v - target);
        let mut hi = la;
        let mut step = 1.0;
        let mut lo = la - step;
        while f(lo)? < 0.0 {
            hi = lo;
            step *= 2.0;
            lo = la - step;
            if lo < -690.0 {
                return Err(Error::NoBracket(format!(
                    "cutoff for n = {n} lies below 1e-300"
                )));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid)? >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // the two bracket ends differ by one ulp; take the closer one
        let a_n = if f(lo)?.abs() <= f(hi)?.abs() { lo } else { hi }.exp();
        let mut out = Self {
            rho: rho.clone(),
            n,
            a_prev,
            a_n,
            psi_at_prev: 0.0,
            curvature_scale: 1.0,
        };
        out.psi_at_prev = out.psi_inner(a_prev)?;
        Ok(out)
    }

    /// Chained sequence `n = 1..=count` starting from `a_0 = 1`.
    pub fn sequence(rho: &Modulus, count: usize) -> Result<Vec<Self>> {
        let mut out: Vec<Self> = Vec::with_capacity(count);
        let mut a_prev = 1.0;
        for n in 1..=count {
            let y = Self::build(rho, n, a_prev)?;
            a_prev = y.a_n;
            out.push(y);
        }
        Ok(out)
    }

    /// Copy whose `psi''` is multiplied by `factor`, for fault-injection tests.
    pub fn scaled_curvature(&self, factor: f64) -> Self {
        let mut c = self.clone();
        c.curvature_scale = factor;
        c
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn a_prev(&self) -> f64 {
        self.a_prev
    }

    pub fn a_n(&self) -> f64 {
        self.a_n
    }

    pub fn rho(&self) -> &Modulus {
        &self.rho
    }

    fn m_of(&self, x: f64) -> f64 {
        inv_sq_integral(&self.rho, self.a_n, x).unwrap_or(f64::NAN)
    }

    fn inv_sq(&self, x: f64) -> f64 {
        let r = self.rho.eval(x);
        1.0 / (r * r)
    }

    /// `psi''(x)`.
    pub fn psi_second(&self, x: f64) -> f64 {
        if x <= self.a_n || x >= self.a_prev {
            return 0.0;
        }
        let nf = self.n as f64;
        self.curvature_scale * KAPPA * self.inv_sq(x) * hat(self.m_of(x) / nf) / nf
    }

    /// `psi'(x)`.
    pub fn psi_prime(&self, x: f64) -> f64 {
        if x <= self.a_n {
            0.0
        } else if x >= self.a_prev {
            1.0
        } else {
            (KAPPA * hat_integral(self.m_of(x) / self.n as f64)).min(1.0)
        }
    }

    fn psi_inner(&self, x: f64) -> Result<f64> {
        if x <= self.a_n {
            return Ok(0.0);
        }
        integrate(
            |u| {
                let v = u.exp();
                self.psi_prime(v) * v
            },
            self.a_n.ln(),
            x.ln(),
            1e-16,
            1e-12,
        )
    }

    /// `psi(x)`; linear with slope one above `a_prev`.
    pub fn psi(&self, x: f64) -> f64 {
        if x <= self.a_n {
            0.0
        } else if x >= self.a_prev {
            self.psi_at_prev + (x - self.a_prev)
        } else {
            self.psi_inner(x).unwrap_or(f64::NAN)
        }
    }

    /// Grid check of every construction property.
    pub fn verify(&self, grid_size: usize) -> YWReport {
        let n = grid_size.max(8);
        let lo = (self.a_n * 1e-2).ln();
        let hi = (self.a_prev * 4.0).ln();
        let mut grid: Vec<f64> = (0..n)
            .map(|k| (lo + (hi - lo) * k as f64 / (n - 1) as f64).exp())
            .collect();
        grid.push(0.0);
        let nf = self.n as f64;
        let mut r = YWReport {
            n: self.n,
            a_n: self.a_n,
            a_prev: self.a_prev,
            cutoff_integral_error: (self.m_of(self.a_prev) - nf).abs() / nf,
            origin: self.psi(0.0).abs().max(self.psi_prime(0.0).abs()).max(self.psi_second(0.0).abs()),
            prime_range: 0.0,
            prime_plateau: 0.0,
            second_sign: 0.0,
            second_ceiling: 0.0,
            second_support: 0.0,
            psi_sandwich: 0.0,
            unit_mass_error: (self.psi_prime(self.a_prev * (1.0 - 1e-15)) - 1.0).abs(),
            pass: false,
        };
        for &x in &grid {
            let p1 = self.psi_prime(x);
            let p2 = self.psi_second(x);
            let p0 = self.psi(x);
            r.prime_range = r.prime_range.max(-p1).max(p1 - 1.0);
            if x >= self.a_prev {
                r.prime_plateau = r.prime_plateau.max((p1 - 1.0).abs());
            }
            r.second_sign = r.second_sign.max(-p2);
            if x > 0.0 {
                let ceiling = 2.0 / nf * self.inv_sq(x);
                r.second_ceiling = r.second_ceiling.max((p2 - ceiling) / ceiling);
            }
            if x <= self.a_n || x >= self.a_prev {
                r.second_support = r.second_support.max(p2.abs());
            }
            let scale = x.max(1e-300);
            r.psi_sandwich = r
                .psi_sandwich
                .max((p0 - x) / scale)
                .max((x - self.a_prev - p0) / scale.max(self.a_prev));
        }
        r.pass = r.max_violation() <= YW_TOLERANCE;
        r
    }

    /// `(x, psi, psi', psi'')` rows on a log grid around the transition.
    pub fn table(&self, points: usize) -> Vec<[f64; 4]> {
        let n = points.max(2);
        let lo = (self.a_n * 0.5).ln();
        let hi = (self.a_prev * 2.0).ln();
        (0..n)
            .map(|k| {
                let x = (lo + (hi - lo) * k as f64 / (n - 1) as f64).exp();
                [x, self.psi(x), self.psi_prime(x), self.psi_second(x)]
            })
            .collect()
    }
}

/// Tolerance applied to every grid violation.
pub const YW_TOLERANCE: f64 = 1e-8;

/// Maximal violations found by [`YWApprox::verify`]; relative where noted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YWReport {
    pub n: usize,
    pub a_n: f64,
    pub a_prev: f64,
    /// relative
    pub cutoff_integral_error: f64,
    pub origin: f64,
    pub prime_range: f64,
    pub prime_plateau: f64,
    pub second_sign: f64,
    /// relative to `(2/n) rho^-2`
    pub second_ceiling: f64,
    pub second_support: f64,
    /// relative to `x`
    pub psi_sandwich: f64,
    pub unit_mass_error: f64,
    pub pass: bool,
}

impl YWReport {
    pub fn max_violation(&self) -> f64 {
        [
            self.cutoff_integral_error,
            self.origin,
            self.prime_range,
            self.prime_plateau,
            self.second_sign,
            self.second_ceiling,
            self.second_support,
            self.psi_sandwich,
            self.unit_mass_error,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hat_mass_and_continuity() {
        let v = integrate(hat, 0.0, 1.0, 1e-14, 1e-14).unwrap();
        assert!((v - 0.75).abs() < 1e-12);
        for s in [0.05, 0.125, 0.2, 0.25, 0.5, 0.8, 0.9, 1.0] {
            let num = integrate(hat, 0.0, s, 1e-15, 1e-14).unwrap();
            assert!((hat_integral(s) - num).abs() < 1e-12, "{s}");
        }
        assert!((hat(0.125 - 1e-12) - hat(0.125 + 1e-12)).abs() < 1e-9);
    }

    #[test]
    fn first_cutoffs() {
        let rho = Modulus::power(0.5).unwrap();
        let y = YWApprox::build(&rho, 1, 1.0).unwrap();
        assert!((y.a_n() - (-1f64).exp()).abs() < 1e-14);
        let y2 = YWApprox::build(&rho, 2, y.a_n()).unwrap();
        assert!((y2.a_n() - (-3f64).exp()).abs() < 1e-14);
        assert_eq!(y2.psi(0.0), 0.0);
        assert_eq!(y2.psi_prime(2.0 * y2.a_prev()), 1.0);
    }

    #[test]
    fn sequence_cutoffs_and_limit() {
        let rho = Modulus::power(0.5).unwrap();
        let seq = YWApprox::sequence(&rho, 3).unwrap();
        for (k, e) in [1.0, 3.0, 6.0].iter().enumerate() {
            assert!((seq[k].a_n() / (-e as f64).exp() - 1.0).abs() < 1e-12);
        }
        let seq = YWApprox::sequence(&rho, 12).unwrap();
        let last = &seq[11];
        assert!(0.5 - last.psi(0.5) <= last.a_prev());
        assert!(YWApprox::sequence(&rho, 1).unwrap()[0].a_prev() == 1.0);
    }

    #[test]
    fn verify_fresh_and_tampered() {
        let rho = Modulus::power(0.5).unwrap();
        let y = YWApprox::build(&rho, 3, 0.5).unwrap();
        let r = y.verify(400);
        assert!(r.pass, "{r:?}");
        let bad = y.scaled_curvature(3.0).verify(400);
        assert!(!bad.pass);
        assert!(bad.second_ceiling > 0.5);
    }

    #[test]
    fn rejects_convergent_modulus() {
        assert!(YWApprox::build(&Modulus::power(0.25).unwrap(), 1, 1.0).is_err());
    }

    #[test]
    fn generic_modulus_uses_quadrature() {
        let rho = Modulus::max_of(vec![Modulus::power(0.5).unwrap(), Modulus::power(1.0).unwrap()])
            .unwrap();
        let y = YWApprox::build(&rho, 1, 1.0).unwrap();
        // on (0, 1] the max is v^(1/2)
        assert!((y.a_n() - (-1f64).exp()).abs() < 1e-10);
        assert!(y.verify(200).pass);
    }
}

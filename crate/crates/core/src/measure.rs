//! Finitely supported probability measures with uniform weights, Wasserstein
//! distances, moments and the measure functionals built on them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::coeff::CoefficientFn;
use crate::error::{Error, Result};
use crate::modulus::Modulus;
use crate::numeric::{check_grid, pairwise_sum, trapezoid};

/// Uniform probability measure on `n` points of `R^m`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
}

impl EmpiricalMeasure {
    /// Builds a measure from a flat row-major buffer of `n * dim` coordinates.
    pub fn new(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("dimension must be positive".into()));
        }
        if points.is_empty() {
            return Err(Error::InvalidMeasure("a measure needs at least one point".into()));
        }
        if points.len() % dim != 0 {
            return Err(Error::InvalidMeasure(format!(
                "{} coordinates do not split into points of dimension {dim}",
                points.len()
            )));
        }
        if let Some(k) = points.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "coordinate {} of point {}",
                k % dim,
                k / dim
            )));
        }
        Ok(Self { dim, points })
    }

    /// Builds a measure from a list of points.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch(dim, r.len()));
        }
        Self::new(dim, rows.concat())
    }

    /// One-dimensional measure on the given values.
    pub fn from_scalars(xs: &[f64]) -> Result<Self> {
        Self::new(1, xs.to_vec())
    }

    /// `n` copies of the origin: the stand-in for the point mass at zero.
    pub fn origin_cloud(dim: usize, n: usize) -> Self {
        Self {
            dim: dim.max(1),
            points: vec![0.0; dim.max(1) * n.max(1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    /// Coordinate-wise mean.
    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|c| {
                let col: Vec<f64> = self.iter().map(|p| p[c]).collect();
                pairwise_sum(&col) / self.len() as f64
            })
            .collect()
    }

    /// `(1/n) sum |x_i|^p`.
    pub fn moment(&self, p: f64) -> f64 {
        let vals: Vec<f64> = self.iter().map(|x| norm(x).powf(p)).collect();
        pairwise_sum(&vals) / self.len() as f64
    }

    /// Reads a measure from CSV text: one point per row, optional header.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            if rec.iter().all(|f| f.is_empty()) {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> =
                rec.iter().map(|f| f.parse::<f64>()).collect();
            match parsed {
                Ok(r) => rows.push(r),
                Err(e) if line == 0 && rows.is_empty() => {
                    // a header row is allowed, but only x1..xm
                    if !rec.iter().all(|f| f.starts_with('x')) {
                        return Err(Error::Parse(format!("row 1: {e}")));
                    }
                }
                Err(e) => return Err(Error::Parse(format!("row {}: {e}", line + 1))),
            }
        }
        if rows.is_empty() {
            return Err(Error::Parse("no data rows".into()));
        }
        Self::from_rows(&rows)
    }

    /// Writes the measure as CSV with header `x1,...,xm`.
    pub fn to_csv(&self) -> String {
        let mut s = (1..=self.dim)
            .map(|k| format!("x{k}"))
            .collect::<Vec<_>>()
            .join(",");
        s.push('\n');
        for p in self.iter() {
            let row: Vec<String> = p.iter().map(|x| format!("{x:.16e}")).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    if x.len() == 1 {
        x[0].abs()
    } else {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == 1 {
        (a[0] - b[0]).abs()
    } else {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// `int_0^1 |F^{-1}(u) - G^{-1}(u)|^p du` for sorted samples of any sizes.
fn quantile_cost(x: &[f64], y: &[f64], p: f64) -> f64 {
    let (n, m) = (x.len(), y.len());
    if n == m {
        let terms: Vec<f64> = x
            .iter()
            .zip(y)
            .map(|(a, b)| {
                let d = (a - b).abs();
                if p == 1.0 {
                    d
                } else {
                    d.powf(p)
                }
            })
            .collect();
        return pairwise_sum(&terms) / n as f64;
    }
    let (nf, mf) = (n as f64, m as f64);
    let mut terms = Vec::with_capacity(n + m);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = 0.0f64;
    while i < n && j < m {
        // compare (i+1)/n with (j+1)/m exactly in integers
        let lhs = (i + 1) * m;
        let rhs = (j + 1) * n;
        let next = if lhs <= rhs {
            (i + 1) as f64 / nf
        } else {
            (j + 1) as f64 / mf
        };
        let w = next - prev;
        terms.push(w * (x[i] - y[j]).abs().powf(p));
        prev = next;
        if lhs <= rhs {
            i += 1;
        }
        if rhs <= lhs {
            j += 1;
        }
    }
    pairwise_sum(&terms)
}

fn check_pair(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<()> {
    if mu.dim != nu.dim {
        return Err(Error::DimensionMismatch(mu.dim, nu.dim));
    }
    if mu.dim > 1 && mu.len() != nu.len() {
        return Err(Error::SupportSizeMismatch(mu.len(), nu.len()));
    }
    Ok(())
}

fn transport_cost(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> Result<f64> {
    check_pair(mu, nu)?;
    if mu.dim == 1 {
        return Ok(quantile_cost(&sorted(&mu.points), &sorted(&nu.points), p));
    }
    let n = mu.len();
    if n > assignment::MAX_ASSIGNMENT_SIZE {
        return Err(Error::SupportTooLarge(n, assignment::MAX_ASSIGNMENT_SIZE));
    }
    let mut cost = vec![0.0; n * n];
    cost.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let a = mu.point(i);
        for (j, c) in row.iter_mut().enumerate() {
            let d = dist(a, nu.point(j));
            *c = if p == 1.0 { d } else { d.powf(p) };
        }
    });
    let (_, perm) = assignment::solve(&cost, n)?;
    let terms: Vec<f64> = perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).collect();
    Ok(pairwise_sum(&terms) / n as f64)
}

/// Exact Wasserstein-1 distance.
///
/// In one dimension both supports are sorted and coupled by quantiles, which
/// also handles unequal sizes. In higher dimension an exact assignment is
/// solved; supports must then have equal size.
pub fn w1_distance(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    transport_cost(mu, nu, 1.0)
}

/// Exact Wasserstein-p distance, `p >= 1`. Equals [`w1_distance`] at `p = 1`.
pub fn wp_distance(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> Result<f64> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::param("p", format!("must be a finite real >= 1, got {p}")));
    }
    if p == 1.0 {
        return w1_distance(mu, nu);
    }
    Ok(transport_cost(mu, nu, p)?.powf(1.0 / p))
}

/// `(1/n) sum |x_i|^p`.
pub fn moment(mu: &EmpiricalMeasure, p: f64) -> Result<f64> {
    if !(p > 0.0) {
        return Err(Error::param("p", format!("must be positive, got {p}")));
    }
    Ok(mu.moment(p))
}

/// Test function integrated against a measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum PsiFn {
    /// `x -> w . x`
    Linear { weights: Vec<f64> },
    /// `x -> |x|`
    Norm,
    /// `x -> tanh(w . x)`
    Tanh { weights: Vec<f64> },
}

impl PsiFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            PsiFn::Linear { weights } => weights.iter().zip(x).map(|(w, v)| w * v).sum(),
            PsiFn::Norm => norm(x),
            PsiFn::Tanh { weights } => weights
                .iter()
                .zip(x)
                .map(|(w, v)| w * v)
                .sum::<f64>()
                .tanh(),
        }
    }

    /// A Lipschitz constant with respect to the Euclidean norm.
    pub fn lipschitz(&self) -> f64 {
        match self {
            PsiFn::Linear { weights } | PsiFn::Tanh { weights } => {
                weights.iter().map(|w| w * w).sum::<f64>().sqrt()
            }
            PsiFn::Norm => 1.0,
        }
    }

    pub fn check_dim(&self, m: usize) -> Result<()> {
        match self {
            PsiFn::Linear { weights } | PsiFn::Tanh { weights } if weights.len() != m => {
                Err(Error::DimensionMismatch(weights.len(), m))
            }
            _ => Ok(()),
        }
    }

    /// `int psi dmu`.
    pub fn integrate(&self, mu: &EmpiricalMeasure) -> Result<f64> {
        let vals: Vec<f64> = mu.iter().map(|x| self.eval(x)).collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("psi value".into()));
        }
        Ok(pairwise_sum(&vals) / mu.len() as f64)
    }
}

/// Post-map applied to the difference of integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PostMap {
    #[default]
    Abs,
    PositivePart,
}

impl PostMap {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            PostMap::Abs => v.abs(),
            PostMap::PositivePart => v.max(0.0),
        }
    }
}

/// Variant of the measure functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThetaKind {
    WassersteinP { p: f64 },
    PsiIntegralDifference {
        psi: PsiFn,
        #[serde(default)]
        phi: PostMap,
    },
    PowerOfW1 { beta: f64 },
}

/// A measure functional together with its domination constant `c_P`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureFunctionalSpec {
    pub kind: ThetaKind,
    pub domination_constant: f64,
}

impl MeasureFunctionalSpec {
    pub fn new(kind: ThetaKind, domination_constant: f64) -> Result<Self> {
        let s = Self {
            kind,
            domination_constant,
        };
        s.validate()?;
        Ok(s)
    }

    /// Plain W1 with `c_P = 1`.
    pub fn w1() -> Self {
        Self {
            kind: ThetaKind::WassersteinP { p: 1.0 },
            domination_constant: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.domination_constant >= 0.0) || !self.domination_constant.is_finite() {
            return Err(Error::param(
                "domination_constant",
                format!("must be finite and >= 0, got {}", self.domination_constant),
            ));
        }
        match &self.kind {
            ThetaKind::WassersteinP { p } if !(*p >= 1.0) || !p.is_finite() => {
                Err(Error::param("p", format!("must be >= 1, got {p}")))
            }
            ThetaKind::PowerOfW1 { beta } if !(*beta > 0.0 && *beta <= 1.0) => {
                Err(Error::param("beta", format!("must lie in (0, 1], got {beta}")))
            }
            _ => Ok(()),
        }
    }
}

/// Evaluates `theta(mu, nu)` for the configured variant.
pub fn theta_eval(
    spec: &MeasureFunctionalSpec,
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
) -> Result<f64> {
    spec.validate()?;
    match &spec.kind {
        ThetaKind::WassersteinP { p } => wp_distance(mu, nu, *p),
        ThetaKind::PsiIntegralDifference { psi, phi } => {
            if mu.dim != nu.dim {
                return Err(Error::DimensionMismatch(mu.dim, nu.dim));
            }
            let a = psi.integrate(mu)?;
            let b = psi.integrate(nu)?;
            Ok(phi.apply(a - b))
        }
        ThetaKind::PowerOfW1 { beta } => {
            let w = w1_distance(mu, nu)?;
            Ok(if *beta == 1.0 { w } else { w.powf(*beta) })
        }
    }
}

/// One line of a domination report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominationEntry {
    pub theta: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Checks `theta(mu, nu) <= c_P * mean |x_i - y_i|` for index-coupled samples.
///
/// Pairs whose distance cannot be evaluated are reported as failures with a
/// non-finite `theta`.
pub fn check_domination(
    spec: &MeasureFunctionalSpec,
    pairs: &[(EmpiricalMeasure, EmpiricalMeasure)],
) -> Vec<DominationEntry> {
    pairs
        .iter()
        .map(|(mu, nu)| {
            let coupled = if mu.len() == nu.len() && mu.dim == nu.dim {
                let d: Vec<f64> = mu.iter().zip(nu.iter()).map(|(a, b)| dist(a, b)).collect();
                pairwise_sum(&d) / mu.len() as f64
            } else {
                f64::NAN
            };
            let bound = spec.domination_constant * coupled;
            let theta = theta_eval(spec, mu, nu).unwrap_or(f64::NAN);
            // small relative tolerance for round-off in the two summations
            let pass = theta.is_finite()
                && bound.is_finite()
                && theta <= bound + 1e-12 * bound.abs().max(theta.abs());
            DominationEntry { theta, bound, pass }
        })
        .collect()
}

/// Result of [`theta_integrability_curve`].
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrabilityCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub integral: f64,
    pub locally_integrable: bool,
}

/// Optional growth part `eta(s) * E rho(|Y_s|)` of the integrability functional.
pub struct GrowthPart<'a> {
    pub eta: &'a CoefficientFn,
    pub rho: &'a Modulus,
    pub abs_moment_path: &'a [f64],
}

/// Evaluates `Theta(s) = lambda(s) varrho(theta(s)) [+ eta(s) rho(E|Y_s|)]` on a grid.
pub fn theta_integrability_curve(
    lambda0: &CoefficientFn,
    varrho: &Modulus,
    grid: &[f64],
    theta_path: &[f64],
    growth: Option<GrowthPart<'_>>,
) -> Result<IntegrabilityCurve> {
    check_grid(grid)?;
    if theta_path.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "theta path has {} values for {} grid points",
            theta_path.len(),
            grid.len()
        )));
    }
    if let Some(g) = &growth {
        if g.abs_moment_path.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "moment path has {} values for {} grid points",
                g.abs_moment_path.len(),
                grid.len()
            )));
        }
    }
    let values: Vec<f64> = grid
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let mut v = lambda0.scalar_at(t) * varrho.eval(theta_path[k]);
            if let Some(g) = &growth {
                v += g.eta.scalar_at(t) * g.rho.eval(g.abs_moment_path[k]);
            }
            v
        })
        .collect();
    let locally_integrable = values.iter().all(|v| v.is_finite());
    let integral = trapezoid(grid, &values);
    Ok(IntegrabilityCurve {
        grid: grid.to_vec(),
        values,
        integral,
        locally_integrable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1(xs: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::from_scalars(xs).unwrap()
    }

    #[test]
    fn w1_examples() {
        let a = m1(&[0.0, 1.0]);
        assert_eq!(w1_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(w1_distance(&a, &m1(&[0.0, 0.0])).unwrap(), 0.5);
        let b = EmpiricalMeasure::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let z = EmpiricalMeasure::origin_cloud(2, 2);
        assert_eq!(w1_distance(&b, &z).unwrap(), 0.5);
    }

    #[test]
    fn wp_examples() {
        let v = wp_distance(&m1(&[0.0, 2.0]), &m1(&[0.0, 0.0]), 2.0).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-15);
        let a = m1(&[0.0, 1.0]);
        let z = m1(&[0.0, 0.0]);
        assert_eq!(
            wp_distance(&a, &z, 1.0).unwrap().to_bits(),
            w1_distance(&a, &z).unwrap().to_bits()
        );
    }

    #[test]
    fn unequal_sizes_in_one_dimension() {
        // {0,1} vs {0.5}: every point moves 0.5
        assert_eq!(w1_distance(&m1(&[0.0, 1.0]), &m1(&[0.5])).unwrap(), 0.5);
        // {0,0,3} vs {0,3}: mass 1/6 moves from 0 to 3
        let v = w1_distance(&m1(&[0.0, 0.0, 3.0]), &m1(&[0.0, 3.0])).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn multi_dim_size_mismatch_is_an_error() {
        let a = EmpiricalMeasure::origin_cloud(2, 2);
        let b = EmpiricalMeasure::origin_cloud(2, 3);
        assert!(matches!(
            w1_distance(&a, &b),
            Err(Error::SupportSizeMismatch(2, 3))
        ));
        let c = EmpiricalMeasure::origin_cloud(3, 2);
        assert!(matches!(w1_distance(&a, &c), Err(Error::DimensionMismatch(2, 3))));
    }

    #[test]
    fn moment_examples() {
        assert_eq!(moment(&m1(&[0.0, 0.0]), 1.0).unwrap(), 0.0);
        assert_eq!(moment(&m1(&[-1.0, 3.0]), 1.0).unwrap(), 2.0);
        let a = m1(&[0.0, 1.0]);
        assert_eq!(moment(&a, 1.0).unwrap(), 0.5);
        assert_eq!(
            moment(&a, 1.0).unwrap(),
            w1_distance(&a, &EmpiricalMeasure::origin_cloud(1, 2)).unwrap()
        );
    }

    #[test]
    fn theta_examples() {
        let a = m1(&[2.0, 2.0]);
        let b = m1(&[1.0, 1.0]);
        let psi = MeasureFunctionalSpec::new(
            ThetaKind::PsiIntegralDifference {
                psi: PsiFn::Linear { weights: vec![1.0] },
                phi: PostMap::PositivePart,
            },
            1.0,
        )
        .unwrap();
        assert_eq!(theta_eval(&psi, &a, &b).unwrap(), 1.0);
        assert_eq!(theta_eval(&psi, &a, &a).unwrap(), 0.0);
        let pw = MeasureFunctionalSpec::new(ThetaKind::PowerOfW1 { beta: 1.0 }, 1.0).unwrap();
        assert_eq!(
            theta_eval(&pw, &a, &b).unwrap(),
            w1_distance(&a, &b).unwrap()
        );
        assert!(MeasureFunctionalSpec::new(ThetaKind::PowerOfW1 { beta: 1.5 }, 1.0).is_err());
        assert!(MeasureFunctionalSpec::new(ThetaKind::WassersteinP { p: 0.5 }, 1.0).is_err());
    }

    #[test]
    fn domination_examples() {
        let a = m1(&[0.0, 1.0]);
        let b = m1(&[1.0, 3.0]);
        let rep = check_domination(&MeasureFunctionalSpec::w1(), &[(a.clone(), a.clone())]);
        assert_eq!(rep[0].theta, 0.0);
        assert_eq!(rep[0].bound, 0.0);
        assert!(rep[0].pass);
        let rep = check_domination(&MeasureFunctionalSpec::w1(), &[(a.clone(), b.clone())]);
        assert!(rep[0].pass);
        let zero = MeasureFunctionalSpec::new(ThetaKind::PowerOfW1 { beta: 1.0 }, 0.0).unwrap();
        assert!(!check_domination(&zero, &[(a, b)])[0].pass);
    }

    #[test]
    fn csv_round_trip() {
        let a = EmpiricalMeasure::from_rows(&[vec![0.1, -2.0], vec![3.5, 1e-300]]).unwrap();
        let back = EmpiricalMeasure::from_csv(&a.to_csv()).unwrap();
        assert_eq!(a, back);
        assert!(EmpiricalMeasure::from_csv("1,2\n3\n").is_err());
        assert!(EmpiricalMeasure::from_csv("nan\n").is_err());
        assert!(EmpiricalMeasure::from_csv("").is_err());
        assert!(EmpiricalMeasure::from_csv("a,b\n1,2\n").is_err());
    }

    #[test]
    fn integrability_examples() {
        let grid = crate::numeric::uniform_grid(0.0, 1.0, 100);
        let zero = CoefficientFn::constant(0.0);
        let id = Modulus::power(1.0).unwrap();
        let c = theta_integrability_curve(&zero, &id, &grid, &vec![1.0; 101], None).unwrap();
        assert!(c.values.iter().all(|&v| v == 0.0));
        let one = CoefficientFn::constant(1.0);
        let c = theta_integrability_curve(&one, &id, &grid, &vec![2.0; 101], None).unwrap();
        assert!((c.integral - 2.0).abs() < 1e-12);
        let lin = CoefficientFn::polynomial(vec![0.0, 1.0]);
        let c = theta_integrability_curve(&lin, &id, &grid, &vec![1.0; 101], None).unwrap();
        assert!((c.integral - 0.5).abs() < 1e-12);
        assert!(c.locally_integrable);
        assert!(theta_integrability_curve(&lin, &id, &grid, &[1.0], None).is_err());
    }
}

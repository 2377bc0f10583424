//! Piecewise-polynomial functions of time and their algebra.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::integrate;

/// A scalar function of time that can be evaluated and integrated.
pub trait TimeFn {
    fn eval(&self, t: f64) -> f64;

    /// `int_a^b f`; adaptive quadrature unless overridden.
    fn integral(&self, a: f64, b: f64) -> Result<f64> {
        integrate(|t| self.eval(t), a, b, 1e-13, 1e-12)
    }
}

/// Adapter turning a closure into a [`TimeFn`].
pub struct FnTime<F>(pub F);

impl<F: Fn(f64) -> f64> TimeFn for FnTime<F> {
    fn eval(&self, t: f64) -> f64 {
        (self.0)(t)
    }
}

/// Scalar piecewise polynomial. Piece `j` covers `[b_j, b_{j+1})` and is a
/// polynomial in `t - b_j`; the first piece also covers `t < b_0` and the last
/// one extends to infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePoly {
    breaks: Vec<f64>,
    coeffs: Vec<Vec<f64>>,
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

/// Coefficients of `q(s) = p(s + h)`.
fn taylor_shift(c: &[f64], h: f64) -> Vec<f64> {
    let mut q = c.to_vec();
    if h == 0.0 {
        return q;
    }
    let n = q.len();
    for i in 0..n {
        for k in (i..n.saturating_sub(1)).rev() {
            q[k] += h * q[k + 1];
        }
    }
    q
}

fn antiderivative_at(c: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for (k, a) in c.iter().enumerate().rev() {
        acc = acc * x + a / (k + 1) as f64;
    }
    acc * x
}

impl PiecewisePoly {
    pub fn new(breaks: Vec<f64>, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        if breaks.is_empty() {
            return Err(Error::param("breaks", "at least one breakpoint is required"));
        }
        if breaks.len() != coeffs.len() {
            return Err(Error::param(
                "coeffs",
                format!("{} pieces for {} breakpoints", coeffs.len(), breaks.len()),
            ));
        }
        if breaks.iter().any(|b| !b.is_finite()) {
            return Err(Error::param("breaks", "breakpoints must be finite"));
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param("breaks", "breakpoints must be strictly increasing"));
        }
        for (j, c) in coeffs.iter().enumerate() {
            if c.is_empty() {
                return Err(Error::param(format!("coeffs[{j}]"), "empty polynomial"));
            }
            if c.iter().any(|x| !x.is_finite()) {
                return Err(Error::param(format!("coeffs[{j}]"), "coefficients must be finite"));
            }
        }
        Ok(Self { breaks, coeffs })
    }

    pub fn constant(c: f64) -> Self {
        Self {
            breaks: vec![0.0],
            coeffs: vec![vec![c]],
        }
    }

    /// `sum_k c_k t^k` for all t.
    pub fn polynomial(c: Vec<f64>) -> Self {
        Self {
            breaks: vec![0.0],
            coeffs: vec![if c.is_empty() { vec![0.0] } else { c }],
        }
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn coeffs(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.len() == 1 && self.coeffs[0].iter().skip(1).all(|&c| c == 0.0)
    }

    fn piece(&self, t: f64) -> usize {
        self.breaks.partition_point(|&b| b <= t).saturating_sub(1)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let j = self.piece(t);
        horner(&self.coeffs[j], t - self.breaks[j])
    }

    /// Exact `int_a^b`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if a == b {
            return 0.0;
        }
        if a > b {
            return -self.integral(b, a);
        }
        let (ja, jb) = (self.piece(a), self.piece(b));
        let mut total = 0.0;
        for j in ja..=jb {
            let lo = if j == ja { a } else { self.breaks[j] };
            let hi = if j == jb { b } else { self.breaks[j + 1] };
            let c = &self.coeffs[j];
            let base = self.breaks[j];
            total += antiderivative_at(c, hi - base) - antiderivative_at(c, lo - base);
        }
        total
    }

    /// The same function re-expressed on a refined set of breakpoints.
    fn refine(&self, breaks: &[f64]) -> Vec<Vec<f64>> {
        breaks
            .iter()
            .map(|&b| {
                let j = self.piece(b);
                taylor_shift(&self.coeffs[j], b - self.breaks[j])
            })
            .collect()
    }

    fn merged_breaks(fs: &[&PiecewisePoly]) -> Vec<f64> {
        let mut all: Vec<f64> = fs.iter().flat_map(|f| f.breaks.iter().copied()).collect();
        all.sort_by(|a, b| a.total_cmp(b));
        all.dedup();
        all
    }

    /// Linear combination `sum_i w_i f_i`, exact.
    pub fn linear_combination(terms: &[(f64, &PiecewisePoly)]) -> PiecewisePoly {
        if terms.is_empty() {
            return Self::constant(0.0);
        }
        let fs: Vec<&PiecewisePoly> = terms.iter().map(|t| t.1).collect();
        let breaks = Self::merged_breaks(&fs);
        let mut coeffs: Vec<Vec<f64>> = vec![Vec::new(); breaks.len()];
        for (w, f) in terms {
            for (j, c) in f.refine(&breaks).into_iter().enumerate() {
                let dst = &mut coeffs[j];
                if dst.len() < c.len() {
                    dst.resize(c.len(), 0.0);
                }
                for (k, a) in c.iter().enumerate() {
                    dst[k] += w * a;
                }
            }
        }
        for c in &mut coeffs {
            if c.is_empty() {
                c.push(0.0);
            }
        }
        PiecewisePoly { breaks, coeffs }
    }

    pub fn scale(&self, w: f64) -> PiecewisePoly {
        Self::linear_combination(&[(w, self)])
    }

    pub fn add(&self, other: &PiecewisePoly) -> PiecewisePoly {
        Self::linear_combination(&[(1.0, self), (1.0, other)])
    }

    /// Pointwise maximum by sampled branch selection.
    ///
    /// On each piece the candidates are compared at the start, midpoint and
    /// end; when one candidate wins at all three it is taken (exact when the
    /// branches do not cross), otherwise the midpoint winner is taken and the
    /// returned flag reports the approximation.
    pub fn max_of(fs: &[&PiecewisePoly]) -> (PiecewisePoly, bool) {
        if fs.is_empty() {
            return (Self::constant(0.0), false);
        }
        if fs.len() == 1 {
            return (fs[0].clone(), false);
        }
        let breaks = Self::merged_breaks(fs);
        let refined: Vec<Vec<Vec<f64>>> = fs.iter().map(|f| f.refine(&breaks)).collect();
        let mut approx = false;
        let mut coeffs = Vec::with_capacity(breaks.len());
        for j in 0..breaks.len() {
            let len = if j + 1 < breaks.len() {
                breaks[j + 1] - breaks[j]
            } else {
                // unbounded last piece: probe a long stretch
                100.0
            };
            let probes = [0.0, 0.5 * len, len];
            let winner = |x: f64| {
                let mut best = 0;
                let mut val = f64::NEG_INFINITY;
                for (i, r) in refined.iter().enumerate() {
                    let v = horner(&r[j], x);
                    if v > val {
                        val = v;
                        best = i;
                    }
                }
                (best, val)
            };
            let (w_mid, v_mid) = winner(probes[1]);
            let mut agree = true;
            for &x in &[probes[0], probes[2]] {
                let (w, v) = winner(x);
                let own = horner(&refined[w_mid][j], x);
                if w != w_mid && own < v - 1e-14 * v.abs().max(1.0) {
                    agree = false;
                }
            }
            let _ = v_mid;
            if !agree {
                approx = true;
            }
            coeffs.push(refined[w_mid][j].clone());
        }
        (PiecewisePoly { breaks, coeffs }, approx)
    }

    /// Pointwise positive part, with the same sampling rule as [`Self::max_of`].
    pub fn positive_part(&self) -> (PiecewisePoly, bool) {
        let zero = Self::constant(0.0);
        Self::max_of(&[self, &zero])
    }
}

impl TimeFn for PiecewisePoly {
    fn eval(&self, t: f64) -> f64 {
        PiecewisePoly::eval(self, t)
    }

    fn integral(&self, a: f64, b: f64) -> Result<f64> {
        Ok(PiecewisePoly::integral(self, a, b))
    }
}

/// Value shape of a coefficient function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

/// Deterministic, piecewise-polynomial coefficient of time with scalar,
/// vector or matrix values. Entries are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CoefRepr", into = "CoefRepr")]
pub struct CoefficientFn {
    shape: Shape,
    entries: Vec<PiecewisePoly>,
}

impl CoefficientFn {
    pub fn scalar(p: PiecewisePoly) -> Self {
        Self {
            shape: Shape::Scalar,
            entries: vec![p],
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::scalar(PiecewisePoly::constant(c))
    }

    pub fn polynomial(c: Vec<f64>) -> Self {
        Self::scalar(PiecewisePoly::polynomial(c))
    }

    pub fn piecewise(breaks: Vec<f64>, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        Ok(Self::scalar(PiecewisePoly::new(breaks, coeffs)?))
    }

    pub fn vector(entries: Vec<PiecewisePoly>) -> Self {
        Self {
            shape: Shape::Vector(entries.len()),
            entries,
        }
    }

    pub fn constant_vector(values: &[f64]) -> Self {
        Self::vector(values.iter().map(|&v| PiecewisePoly::constant(v)).collect())
    }

    pub fn matrix(rows: usize, cols: usize, entries: Vec<PiecewisePoly>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        Ok(Self {
            shape: Shape::Matrix(rows, cols),
            entries,
        })
    }

    pub fn constant_matrix(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        Self::matrix(
            rows,
            cols,
            values.iter().map(|&v| PiecewisePoly::constant(v)).collect(),
        )
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PiecewisePoly] {
        &self.entries
    }

    pub fn entry(&self, k: usize) -> &PiecewisePoly {
        &self.entries[k]
    }

    /// Entry `(i, j)` of a matrix-valued function.
    pub fn at(&self, i: usize, j: usize) -> &PiecewisePoly {
        match self.shape {
            Shape::Matrix(_, c) => &self.entries[i * c + j],
            _ => &self.entries[i],
        }
    }

    /// Value of the first entry; the value itself for scalar functions.
    pub fn scalar_at(&self, t: f64) -> f64 {
        self.entries[0].eval(t)
    }

    /// All entries at time `t`, row-major.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.entries) {
            *o = e.eval(t);
        }
    }

    pub fn values_at(&self, t: f64) -> Vec<f64> {
        self.entries.iter().map(|e| e.eval(t)).collect()
    }

    /// Exact integral of a scalar function.
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        match self.shape {
            Shape::Scalar => Ok(self.entries[0].integral(a, b)),
            s => Err(Error::ShapeMismatch(format!(
                "integral needs a scalar function, got {s:?}"
            ))),
        }
    }

    pub fn as_scalar(&self) -> Result<&PiecewisePoly> {
        match self.shape {
            Shape::Scalar => Ok(&self.entries[0]),
            s => Err(Error::ShapeMismatch(format!("expected a scalar, got {s:?}"))),
        }
    }

    /// Union of all entry breakpoints.
    pub fn breakpoints(&self) -> Vec<f64> {
        let refs: Vec<&PiecewisePoly> = self.entries.iter().collect();
        PiecewisePoly::merged_breaks(&refs)
    }
}

impl TimeFn for CoefficientFn {
    fn eval(&self, t: f64) -> f64 {
        self.scalar_at(t)
    }

    fn integral(&self, a: f64, b: f64) -> Result<f64> {
        CoefficientFn::integral(self, a, b)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PiecewiseRepr {
    breaks: Vec<f64>,
    coeffs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum CoefRepr {
    Constant(f64),
    Piecewise(PiecewiseRepr),
    List(Vec<CoefRepr>),
}

fn scalar_from(r: CoefRepr) -> Result<PiecewisePoly> {
    match r {
        CoefRepr::Constant(c) if c.is_finite() => Ok(PiecewisePoly::constant(c)),
        CoefRepr::Constant(c) => Err(Error::param("coefficient", format!("non-finite constant {c}"))),
        CoefRepr::Piecewise(p) => PiecewisePoly::new(p.breaks, p.coeffs),
        CoefRepr::List(_) => Err(Error::ShapeMismatch("nesting deeper than a matrix".into())),
    }
}

fn scalar_repr(p: &PiecewisePoly) -> CoefRepr {
    if p.breaks == [0.0] && p.coeffs[0].len() == 1 {
        CoefRepr::Constant(p.coeffs[0][0])
    } else {
        CoefRepr::Piecewise(PiecewiseRepr {
            breaks: p.breaks.clone(),
            coeffs: p.coeffs.clone(),
        })
    }
}

impl TryFrom<CoefRepr> for CoefficientFn {
    type Error = Error;

    fn try_from(r: CoefRepr) -> Result<Self> {
        match r {
            CoefRepr::List(items) => {
                if items.is_empty() {
                    return Err(Error::ShapeMismatch("empty coefficient list".into()));
                }
                if items.iter().all(|i| matches!(i, CoefRepr::List(_))) {
                    let mut rows = Vec::new();
                    for it in items {
                        if let CoefRepr::List(row) = it {
                            rows.push(row);
                        }
                    }
                    let cols = rows[0].len();
                    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
                        return Err(Error::ShapeMismatch("ragged or empty matrix rows".into()));
                    }
                    let n = rows.len();
                    let entries = rows
                        .into_iter()
                        .flatten()
                        .map(scalar_from)
                        .collect::<Result<Vec<_>>>()?;
                    CoefficientFn::matrix(n, cols, entries)
                } else {
                    let entries = items.into_iter().map(scalar_from).collect::<Result<Vec<_>>>()?;
                    Ok(CoefficientFn::vector(entries))
                }
            }
            other => Ok(CoefficientFn::scalar(scalar_from(other)?)),
        }
    }
}

impl From<CoefficientFn> for CoefRepr {
    fn from(c: CoefficientFn) -> Self {
        match c.shape {
            Shape::Scalar => scalar_repr(&c.entries[0]),
            Shape::Vector(_) => CoefRepr::List(c.entries.iter().map(scalar_repr).collect()),
            Shape::Matrix(_, cols) => CoefRepr::List(
                c.entries
                    .chunks(cols)
                    .map(|row| CoefRepr::List(row.iter().map(scalar_repr).collect()))
                    .collect(),
            ),
        }
    }
}

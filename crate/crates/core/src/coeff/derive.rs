//! Condition data read off a structured model.

use std::collections::BTreeMap;

use super::algebra::{GrowthTermSpec, HolderTermSpec};
use super::poly::{CoefficientFn, PiecewisePoly, Shape};
use crate::error::{Error, Result};
use crate::model::{MeasureFn, ModelSpec, ScalarForm};

/// Accumulates one `(alpha, beta)` group: a diagonal matrix and a vector.
struct Group {
    diag: Vec<Vec<(f64, PiecewisePoly)>>,
    vec: Vec<Vec<(f64, PiecewisePoly)>>,
}

struct Groups {
    m: usize,
    map: BTreeMap<(u64, u64), Group>,
}

fn key(alpha: f64, beta: f64) -> (u64, u64) {
    (alpha.to_bits(), beta.to_bits())
}

impl Groups {
    fn new(m: usize) -> Self {
        Self {
            m,
            map: BTreeMap::new(),
        }
    }

    fn get(&mut self, alpha: f64, beta: f64) -> &mut Group {
        let m = self.m;
        self.map.entry(key(alpha, beta)).or_insert_with(|| Group {
            diag: vec![Vec::new(); m],
            vec: vec![Vec::new(); m],
        })
    }

    fn finish(mut self) -> (Vec<f64>, Vec<f64>, Vec<CoefficientFn>, Vec<CoefficientFn>) {
        if self.map.is_empty() {
            self.get(1.0, 1.0);
        }
        let m = self.m;
        let sum = |terms: &[(f64, PiecewisePoly)]| {
            let r: Vec<(f64, &PiecewisePoly)> = terms.iter().map(|(w, p)| (*w, p)).collect();
            PiecewisePoly::linear_combination(&r)
        };
        let (mut alpha, mut beta, mut mats, mut vecs) = (vec![], vec![], vec![], vec![]);
        for ((a, b), g) in self.map {
            alpha.push(f64::from_bits(a));
            beta.push(f64::from_bits(b));
            let mut entries = vec![PiecewisePoly::constant(0.0); m * m];
            for i in 0..m {
                entries[i * m + i] = sum(&g.diag[i]);
            }
            mats.push(if m == 1 {
                CoefficientFn::scalar(entries.remove(0))
            } else {
                CoefficientFn::matrix(m, m, entries).expect("square by construction")
            });
            let v: Vec<PiecewisePoly> = g.vec.iter().map(|t| sum(t)).collect();
            vecs.push(if m == 1 {
                CoefficientFn::scalar(v.into_iter().next().unwrap())
            } else {
                CoefficientFn::vector(v)
            });
        }
        (alpha, beta, mats, vecs)
    }
}

fn abs(p: &PiecewisePoly) -> PiecewisePoly {
    let neg = p.scale(-1.0);
    PiecewisePoly::max_of(&[p, &neg]).0
}

fn entry_of(c: &CoefficientFn, m: usize, r: usize, j: usize) -> PiecewisePoly {
    match c.shape() {
        Shape::Scalar => c.entry(0).clone(),
        Shape::Vector(_) => c.entry(r).clone(),
        Shape::Matrix(..) => {
            let _ = m;
            c.at(r, j).clone()
        }
    }
}

fn vec_entry(c: &CoefficientFn, i: usize) -> PiecewisePoly {
    match c.shape() {
        Shape::Scalar => c.entry(0).clone(),
        _ => c.entry(i).clone(),
    }
}

/// `sum_j |(u_i' lambda)_j|` for every `i`.
fn frame_l1(model: &ModelSpec, lambda: &CoefficientFn, mh: usize) -> Vec<PiecewisePoly> {
    let m = model.m;
    let u = model.u_matrix();
    (0..m)
        .map(|i| {
            let parts: Vec<PiecewisePoly> = (0..mh)
                .map(|j| {
                    let es: Vec<PiecewisePoly> = (0..m).map(|r| entry_of(lambda, m, r, j)).collect();
                    let terms: Vec<(f64, &PiecewisePoly)> =
                        es.iter().enumerate().map(|(r, e)| (u[r * m + i], e)).collect();
                    abs(&PiecewisePoly::linear_combination(&terms))
                })
                .collect();
            let t: Vec<(f64, &PiecewisePoly)> = parts.iter().map(|p| (1.0, p)).collect();
            PiecewisePoly::linear_combination(&t)
        })
        .collect()
}

/// One-sided Hoelder constant of a scalar form and its exponent.
fn holder_constant(f: &ScalarForm, path: &str) -> Result<Option<(f64, f64)>> {
    match f {
        ScalarForm::SignedPower { a, alpha } => {
            if *a <= 0.0 {
                Ok(None)
            } else if *alpha <= 1.0 {
                // |sgn(x)|x|^a - sgn(y)|y|^a| <= 2^{1-a} |x - y|^a
                Ok(Some((a * 2f64.powf(1.0 - alpha), *alpha)))
            } else {
                Err(Error::Uncertifiable(format!(
                    "{path}: signed_power with a > 0 and alpha = {alpha} > 1 is not globally Hoelder"
                )))
            }
        }
        ScalarForm::OddPolyNeg { .. } | ScalarForm::DecreasingTable { .. } => Ok(None),
    }
}

fn measure_constants(g: &MeasureFn) -> (f64, f64) {
    match g {
        MeasureFn::Mean => (1.0, 1.0),
        MeasureFn::MomentPower { beta } => (1.0, *beta),
        MeasureFn::PsiIntegral { psi } => (psi.lipschitz(), 1.0),
    }
}

/// Hoelder data for the stability coefficients of `model` with `theta = W1`.
///
/// Linear parts land on the `alpha = 1` diagonal, increasing signed powers
/// contribute `a 2^{1-alpha}` in their own exponent group, decreasing forms
/// contribute nothing, and each measure term gives `lambda_k^{(i)} =
/// L_g |u_i' lambda_k|_1` in the group `(1, beta_g)`.
pub fn derive_holder_spec(model: &ModelSpec) -> Result<HolderTermSpec> {
    model.validate()?;
    let m = model.m;
    let mut groups = Groups::new(m);
    let dr = &model.drift;
    if !dr.linear_eta.entries().iter().all(|p| p.coeffs().iter().all(|c| c.iter().all(|&x| x == 0.0))) {
        let g = groups.get(1.0, 1.0);
        for i in 0..m {
            g.diag[i].push((1.0, vec_entry(&dr.linear_eta, i)));
        }
    }
    for (n, term) in dr.nonlinear_terms.iter().enumerate() {
        for i in 0..m {
            let path = format!("model.drift.nonlinear_terms[{n}].f[{i}]");
            if let Some((c, alpha)) = holder_constant(term.form(i), &path)? {
                groups.get(alpha, 1.0).diag[i].push((c, vec_entry(&term.eta, i)));
            }
        }
    }
    for term in &dr.measure_terms {
        let (l, beta) = measure_constants(&term.g);
        let norms = frame_l1(model, &term.lambda, term.g.out_dim(m));
        let g = groups.get(1.0, beta);
        for (i, p) in norms.into_iter().enumerate() {
            g.vec[i].push((l, p));
        }
    }
    let (alpha, beta, eta, lambda) = groups.finish();
    Ok(HolderTermSpec {
        alpha,
        beta,
        eta,
        lambda,
        c0_zeta0: CoefficientFn::constant(0.0),
        c_p: 1.0,
    })
}

/// Growth data for the moment envelope of `model` with `theta = W1`.
pub fn derive_growth_spec(model: &ModelSpec) -> Result<GrowthTermSpec> {
    model.validate()?;
    let m = model.m;
    let u = model.u_matrix();
    let dr = &model.drift;
    let mut groups = Groups::new(m);
    let mut kappa: Vec<Vec<(f64, PiecewisePoly)>> = vec![Vec::new(); m];
    for i in 0..m {
        let es: Vec<PiecewisePoly> = (0..m).map(|r| vec_entry(&dr.kappa, r)).collect();
        let terms: Vec<(f64, &PiecewisePoly)> =
            es.iter().enumerate().map(|(r, e)| (u[r * m + i], e)).collect();
        kappa[i].push((1.0, abs(&PiecewisePoly::linear_combination(&terms))));
    }
    {
        let g = groups.get(1.0, 1.0);
        for i in 0..m {
            g.diag[i].push((1.0, vec_entry(&dr.linear_eta, i)));
        }
    }
    for (n, term) in dr.nonlinear_terms.iter().enumerate() {
        for i in 0..m {
            let eta = vec_entry(&term.eta, i);
            match term.form(i) {
                ScalarForm::SignedPower { a, alpha } => {
                    if *alpha <= 1.0 {
                        groups.get(*alpha, 1.0).diag[i].push((*a, eta));
                    } else if *a > 0.0 {
                        return Err(Error::Uncertifiable(format!(
                            "model.drift.nonlinear_terms[{n}].f[{i}]: growth exponent {alpha} > 1"
                        )));
                    }
                }
                ScalarForm::OddPolyNeg { .. } => {}
                ScalarForm::DecreasingTable { .. } => {
                    // sgn(z) f(z) <= |f(0)| for non-increasing f
                    kappa[i].push((term.form(i).eval(0.0).abs(), eta));
                }
            }
        }
    }
    for term in &dr.measure_terms {
        let norms = frame_l1(model, &term.lambda, term.g.out_dim(m));
        let (chi_scale, beta, offset) = match &term.g {
            MeasureFn::Mean => (1.0, 1.0, 0.0),
            MeasureFn::MomentPower { beta } => (1.0, *beta, 0.0),
            MeasureFn::PsiIntegral { psi } => {
                (psi.lipschitz(), 1.0, psi.eval(&vec![0.0; m]).abs())
            }
        };
        let g = groups.get(1.0, beta);
        for (i, p) in norms.iter().enumerate() {
            g.vec[i].push((chi_scale, p.clone()));
        }
        if offset != 0.0 {
            for (i, p) in norms.into_iter().enumerate() {
                kappa[i].push((offset, p));
            }
        }
    }
    let kappa: Vec<PiecewisePoly> = kappa
        .iter()
        .map(|t| {
            let r: Vec<(f64, &PiecewisePoly)> = t.iter().map(|(w, p)| (*w, p)).collect();
            PiecewisePoly::linear_combination(&r)
        })
        .collect();
    let (alpha, beta, upsilon, chi) = groups.finish();
    Ok(GrowthTermSpec {
        alpha,
        beta,
        upsilon,
        chi,
        kappa: if m == 1 {
            CoefficientFn::scalar(kappa.into_iter().next().unwrap())
        } else {
            CoefficientFn::vector(kappa)
        },
        c0_zeta0: CoefficientFn::constant(0.0),
        c_p: 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{f_g_p, gamma_delta_p};

    fn model(json: serde_json::Value) -> ModelSpec {
        serde_json::from_value(json).unwrap()
    }

    #[test]
    fn linear_model() {
        let m = model(serde_json::json!({"m":1,"d":1,"drift":{"linear_eta":-2},"diffusion":[{}]}));
        let s = derive_holder_spec(&m).unwrap();
        assert_eq!((s.alpha.clone(), s.beta.clone()), (vec![1.0], vec![1.0]));
        assert_eq!(s.eta[0].scalar_at(0.0), -2.0);
        assert_eq!(s.lambda[0].scalar_at(0.0), 0.0);
        let with_cubic = model(serde_json::json!({"m":1,"d":1,
            "drift":{"linear_eta":-2,"nonlinear_terms":[{"eta":1,"f":[{"form":"odd_poly_neg","degree":3}]}]},
            "diffusion":[{}]}));
        assert_eq!(derive_holder_spec(&with_cubic).unwrap(), s);
    }

    #[test]
    fn mean_field_term() {
        let m = model(serde_json::json!({"m":1,"d":1,
            "drift":{"linear_eta":-2,"measure_terms":[{"lambda":0.7,"g":{"kind":"mean"}}]},
            "diffusion":[{"terms":[{"eta":0.3,"power":0.5}]}]}));
        let s = derive_holder_spec(&m).unwrap();
        assert_eq!(s.lambda[0].scalar_at(0.0), 0.7);
        assert_eq!(s.beta, vec![1.0]);
        let g = gamma_delta_p(&s).unwrap();
        assert!((g.exponential.scalar_at(1.0) + 1.3).abs() < 1e-15);
        let gr = derive_growth_spec(&m).unwrap();
        let fg = f_g_p(&gr).unwrap();
        assert!((fg.exponential.scalar_at(0.0) + 1.3).abs() < 1e-15);
        assert_eq!(fg.drift.scalar_at(0.0), 0.0);
    }

    #[test]
    fn signed_power_groups() {
        let m = model(serde_json::json!({"m":1,"d":1,
            "drift":{"nonlinear_terms":[{"eta":1,"f":[{"form":"signed_power","a":1.0,"alpha":0.5}]}]},
            "diffusion":[{}]}));
        let s = derive_holder_spec(&m).unwrap();
        assert_eq!(s.alpha, vec![0.5]);
        assert!((s.eta[0].scalar_at(0.0) - 2f64.sqrt()).abs() < 1e-15);
        let bad = model(serde_json::json!({"m":1,"d":1,
            "drift":{"nonlinear_terms":[{"eta":1,"f":[{"form":"signed_power","a":1.0,"alpha":2.0}]}]},
            "diffusion":[{}]}));
        assert!(matches!(derive_holder_spec(&bad), Err(Error::Uncertifiable(_))));
    }

    #[test]
    fn rotated_frame_norms() {
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let m = model(serde_json::json!({"m":2,"d":2,"u":[[c,-c],[c,c]],
            "drift":{"linear_eta":[-1.0,-1.0],
                     "measure_terms":[{"lambda":[[1.0,0.0],[0.0,1.0]],"g":{"kind":"mean"}}]},
            "diffusion":[{},{}]}));
        let s = derive_holder_spec(&m).unwrap();
        // |u_i' I|_1 = sqrt(2) for both rows
        for i in 0..2 {
            assert!((s.lambda[0].entry(i).eval(0.0) - 2.0 * c).abs() < 1e-15);
        }
    }
}

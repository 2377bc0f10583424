use mkvlab::coeff::{bracket_norm, gamma_delta_p, gronwall_curve, CoefficientFn, HolderTermSpec, PiecewisePoly, TimeFn};
use mkvlab::numeric::uniform_grid;
use proptest::prelude::*;

fn c(v: f64) -> CoefficientFn {
    CoefficientFn::constant(v)
}

fn lipschitz(eta: &[f64], lambda: &[f64]) -> HolderTermSpec {
    HolderTermSpec {
        alpha: vec![1.0; eta.len()],
        beta: vec![1.0; eta.len()],
        eta: eta.iter().map(|&e| c(e)).collect(),
        lambda: lambda.iter().map(|&l| c(l)).collect(),
        c0_zeta0: c(0.0),
        c_p: 1.0,
    }
}

fn piecewise() -> impl Strategy<Value = PiecewisePoly> {
    (1usize..4, prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 1..4), 3), 0.2f64..1.0).prop_map(
        |(k, coeffs, w)| {
            let breaks = (0..k).map(|j| j as f64 * w).collect();
            PiecewisePoly::new(breaks, coeffs[..k].to_vec()).unwrap()
        },
    )
}

proptest! {
    #[test]
    fn integral_is_additive(p in piecewise(), a in -1.0f64..3.0, b in -1.0f64..3.0, m in -1.0f64..3.0) {
        let lhs = p.integral(a, b);
        let rhs = p.integral(a, m) + p.integral(m, b);
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn lipschitz_case_scales_linearly(eta in prop::collection::vec(-3.0f64..3.0, 1..4), s in 0.1f64..5.0) {
        let lambda: Vec<f64> = eta.iter().map(|e| e.abs() * 0.5).collect();
        let base = gamma_delta_p(&lipschitz(&eta, &lambda)).unwrap();
        let scaled_eta: Vec<f64> = eta.iter().map(|e| e * s).collect();
        let scaled_lambda: Vec<f64> = lambda.iter().map(|l| l * s).collect();
        let scaled = gamma_delta_p(&lipschitz(&scaled_eta, &scaled_lambda)).unwrap();
        for t in [0.0, 0.7, 2.0] {
            let g = base.exponential.scalar_at(t);
            prop_assert!((scaled.exponential.scalar_at(t) - s * g).abs() < 1e-9 * (1.0 + g.abs()));
            prop_assert_eq!(base.drift.scalar_at(t), 0.0);
            prop_assert_eq!(scaled.drift.scalar_at(t), 0.0);
        }
    }

    #[test]
    fn bracket_monotone_in_p(x in 0.0f64..10.0, p in 1.0f64..10.0, q in 1.0f64..10.0) {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        prop_assert!(bracket_norm(x, lo) <= bracket_norm(x, hi));
        prop_assert_eq!(bracket_norm(x, p), x);
    }
}

#[test]
fn gronwall_matches_variation_of_constants() {
    // gamma = -0.7, forcing 1 + t: closed form of y' = -0.7 y + 1 + t, y(0) = 2
    let g = -0.7f64;
    let grid = uniform_grid(0.0, 3.0, 49);
    let curve = gronwall_curve(&PiecewisePoly::constant(g), 2.0, &PiecewisePoly::polynomial(vec![1.0, 1.0]), &grid).unwrap();
    for (t, y) in grid.iter().zip(&curve) {
        // particular solution a + b t with b = -1/g, a = (b - 1)/g
        let b = -1.0 / g;
        let a = (b - 1.0) / g;
        let exact = a + b * t + (2.0 - a) * (g * t).exp();
        assert!((y - exact).abs() < 1e-6, "t = {t}: {y} vs {exact}");
    }
}

#[test]
fn gronwall_examples() {
    let zero = PiecewisePoly::constant(0.0);
    let grid = uniform_grid(0.0, 1.0, 4);
    assert!(gronwall_curve(&zero, 1.5, &zero, &grid).unwrap().iter().all(|&v| v == 1.5));
    let decay = gronwall_curve(&PiecewisePoly::constant(-1.0), 1.0, &zero, &grid).unwrap();
    assert!((decay.last().unwrap() - (-1.0f64).exp()).abs() < 1e-12);
    let grid3 = uniform_grid(0.0, 3.0, 6);
    let plain = gronwall_curve(&zero, 0.0, &PiecewisePoly::constant(2.0), &grid3).unwrap();
    assert!((plain.last().unwrap() - 6.0).abs() < 1e-12);
}

#[test]
fn coefficient_json_round_trip() {
    for text in ["-2", r#"{"breaks": [0, 1], "coeffs": [[1, 2], [3]]}"#, "[1, 2]", "[[1, 0], [0, 1]]"] {
        let f: CoefficientFn = mkvlab::config::parse_json(text).unwrap();
        let back: CoefficientFn = mkvlab::config::parse_json(&serde_json::to_string(&f).unwrap()).unwrap();
        assert_eq!(back, f);
        let _ = f.integral(0.0, 1.0);
    }
    assert!(mkvlab::config::parse_json::<CoefficientFn>(r#"{"breaks": [1, 0], "coeffs": [[1], [2]]}"#).is_err());
}

#[test]
fn time_fn_trait_integral_matches_inherent() {
    let p = PiecewisePoly::new(vec![0.0, 1.0], vec![vec![1.0, 2.0], vec![3.0]]).unwrap();
    let dynamic: &dyn TimeFn = &p;
    assert!((dynamic.integral(0.0, 2.0).unwrap() - p.integral(0.0, 2.0)).abs() < 1e-12);
}

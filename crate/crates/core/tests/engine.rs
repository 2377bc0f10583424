use mkvlab::config::parse_json;
use mkvlab::engine::{simulate_coupled, simulate_particle_system, InitialLaw, SimConfig};
use mkvlab::model::ModelSpec;
use mkvlab::stability::{estimate_moment_curve, DiffNorm};

fn model(json: &str) -> ModelSpec {
    parse_json(json).unwrap()
}

fn additive(drift: f64, sigma: f64) -> ModelSpec {
    model(&format!(
        r#"{{"m": 1, "d": 1, "drift": {{"linear_eta": {drift}}}, "diffusion": [{{"eta0": {sigma}}}]}}"#
    ))
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn brownian_variance_grows_linearly() {
    let cfg = SimConfig::new(0.0, 1.0, 0.01, 20_000, 3);
    let e = simulate_particle_system(&additive(0.0, 0.5), &InitialLaw::dirac(&[0.0]), &cfg).unwrap();
    let last = e.node_states(e.n_nodes() - 1).to_vec();
    let (m, v) = mean_var(&last);
    assert!(m.abs() < 4.0 * 0.5 / (20_000f64).sqrt(), "mean {m}");
    // sd of the sample variance is about sigma^2 sqrt(2/N)
    assert!((v - 0.25).abs() < 4.0 * 0.25 * (2.0 / 20_000f64).sqrt(), "var {v}");
}

#[test]
fn euler_bias_is_first_order() {
    let exact = (-1.0f64).exp();
    let bias = |dt: f64| {
        let cfg = SimConfig::new(0.0, 1.0, dt, 20_000, 9);
        let e = simulate_particle_system(&additive(-1.0, 0.2), &InitialLaw::dirac(&[1.0]), &cfg).unwrap();
        let last = e.node_states(e.n_nodes() - 1);
        (last.iter().sum::<f64>() / last.len() as f64 - exact).abs()
    };
    let slope = (bias(0.2) / bias(0.1)).log2();
    assert!((0.7..1.3).contains(&slope), "observed weak order {slope}");
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let m = model(
        r#"{"m": 1, "d": 1,
            "drift": {"linear_eta": -2, "measure_terms": [{"lambda": 1, "g": {"kind": "mean"}}]},
            "diffusion": [{"terms": [{"eta": 0.3, "power": 0.5}]}]}"#,
    );
    let cfg = SimConfig::new(0.0, 0.5, 0.01, 257, 11);
    let xi = InitialLaw::Uniform { low: vec![0.0], high: vec![2.0] };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_particle_system(&m, &xi, &cfg).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.states(), b.states());
}

#[test]
fn identical_coupled_sides_agree_pathwise() {
    let m = model(r#"{"m": 1, "d": 1, "drift": {"linear_eta": -1}, "diffusion": [{"terms": [{"eta": 0.5, "power": 0.5}]}]}"#);
    let cfg = SimConfig::new(0.0, 1.0, 0.01, 300, 5);
    let xi = InitialLaw::dirac(&[1.0]);
    let (a, b) = simulate_coupled(&m, &m, &xi, &xi, &cfg).unwrap();
    assert_eq!(a.states(), b.states());
    let single = simulate_particle_system(&m, &xi, &cfg).unwrap();
    assert_eq!(single.states(), a.states());
    let curve = estimate_moment_curve(&a, &b, &DiffNorm::Euclidean).unwrap();
    assert!(curve.estimates.iter().all(|&v| v == 0.0));
}

#[test]
fn moment_standard_error_scales_like_inverse_sqrt_n() {
    let m = additive(-1.0, 0.5);
    let se = |n: usize| {
        let cfg = SimConfig::new(0.0, 1.0, 0.05, n, 21);
        let (a, b) = simulate_coupled(&m, &m, &InitialLaw::dirac(&[1.0]), &InitialLaw::Gaussian { mean: vec![0.0], std: vec![1.0] }, &cfg).unwrap();
        let c = estimate_moment_curve(&a, &b, &DiffNorm::Euclidean).unwrap();
        *c.standard_errors.last().unwrap()
    };
    let ratio = se(1000) / se(16_000);
    assert!((3.0..5.3).contains(&ratio), "SE ratio {ratio}");
}

#[test]
fn recorded_grid_respects_stride() {
    let cfg = SimConfig::new(0.0, 1.0, 0.01, 10, 1).with_stride(7);
    let e = simulate_particle_system(&additive(0.0, 1.0), &InitialLaw::dirac(&[0.0]), &cfg).unwrap();
    let g = e.grid();
    assert_eq!(g.first(), Some(&0.0));
    assert!((g.last().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(g.len(), 100 / 7 + 2);
}

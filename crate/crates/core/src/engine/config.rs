//! Declarative simulation config (JSON, strict keys).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::aggregators::AggregatorSpec;
use crate::attacks::AttackSpec;
use crate::datagen::HeterogeneitySpec;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    #[serde(rename = "type")]
    pub kind: DatasetKind,
    pub classes: usize,
    pub features: usize,
    pub samples_per_class: usize,
    pub cluster_spread: f64,
    /// Relative paths resolve against the working directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<PathBuf>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Synthetic,
            classes: 4,
            features: 64,
            samples_per_class: 200,
            cluster_spread: 0.5,
            csv_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReputationConfig {
    /// Gate participation on reputation. Reputation is tracked either way.
    pub enabled: bool,
    pub decay_lambda: f64,
    pub participation_threshold: f64,
}

impl Default for ReputationConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            decay_lambda: 0.9,
            participation_threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResourceConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for ResourceConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Free-text intent, echoed into run summaries.
    pub description: String,
    pub seed: u64,
    pub rounds: usize,
    pub num_clients: usize,
    pub malicious: AttackSpec,
    pub dataset: DatasetSpec,
    pub heterogeneity: HeterogeneitySpec,
    pub train: TrainConfig,
    pub aggregator: AggregatorSpec,
    pub reputation: ReputationConfig,
    pub resource: ResourceConfig,
    pub eval_fraction: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            description: String::new(),
            seed: 0,
            rounds: 20,
            num_clients: 20,
            malicious: AttackSpec::default(),
            dataset: DatasetSpec::default(),
            heterogeneity: HeterogeneitySpec::default(),
            train: TrainConfig::default(),
            aggregator: AggregatorSpec::default(),
            reputation: ReputationConfig::default(),
            resource: ResourceConfig::default(),
            eval_fraction: 0.2,
        }
    }
}

fn path_error(path: String, message: String) -> Error {
    let path = if path.is_empty() || path == "." {
        "config".to_string()
    } else {
        path
    };
    Error::Config { path, message }
}

impl SimConfig {
    /// Parses and validates. Errors name the dotted field path.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let cfg: SimConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| path_error(e.path().to_string(), e.inner().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_value(v: serde_json::Value) -> Result<Self> {
        let cfg: SimConfig = serde_path_to_error::deserialize(v)
            .map_err(|e| path_error(e.path().to_string(), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::config("num_clients", "must be >= 1"));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(Error::config("eval_fraction", "must be in (0, 1)"));
        }
        self.malicious.validate(self.num_clients, "malicious")?;

        let ds = &self.dataset;
        match ds.kind {
            DatasetKind::Synthetic => {
                if ds.classes < 2 {
                    return Err(Error::config("dataset.classes", "must be >= 2"));
                }
                if ds.features == 0 {
                    return Err(Error::config("dataset.features", "must be >= 1"));
                }
                if ds.samples_per_class == 0 {
                    return Err(Error::config("dataset.samples_per_class", "must be >= 1"));
                }
                if !(ds.cluster_spread.is_finite() && ds.cluster_spread > 0.0) {
                    return Err(Error::config("dataset.cluster_spread", "must be > 0"));
                }
                let per_class_eval =
                    (self.eval_fraction * ds.samples_per_class as f64).round() as usize;
                let train = ds.classes * ds.samples_per_class.saturating_sub(per_class_eval);
                if per_class_eval == 0 || train == 0 {
                    return Err(Error::config(
                        "eval_fraction",
                        "leaves the train or eval split empty",
                    ));
                }
                if train < self.num_clients {
                    return Err(Error::config(
                        "num_clients",
                        format!(
                            "{} clients but only {train} training samples",
                            self.num_clients
                        ),
                    ));
                }
            }
            DatasetKind::Csv => {
                if ds.csv_path.is_none() {
                    return Err(Error::config(
                        "dataset.csv_path",
                        "required when type is csv",
                    ));
                }
                if ds.classes < 2 {
                    return Err(Error::config("dataset.classes", "must be >= 2"));
                }
            }
        }

        let het = &self.heterogeneity;
        if !(het.dirichlet_alpha.is_finite() && het.dirichlet_alpha > 0.0) {
            return Err(Error::config(
                "heterogeneity.dirichlet_alpha",
                "must be > 0",
            ));
        }

        self.train.validate("train")?;
        self.aggregator.validate(self.num_clients, "aggregator")?;

        let rep = &self.reputation;
        if !(0.0..1.0).contains(&rep.decay_lambda) {
            return Err(Error::config(
                "reputation.decay_lambda",
                "must be in [0, 1)",
            ));
        }
        if !(0.0..=1.0).contains(&rep.participation_threshold) {
            return Err(Error::config(
                "reputation.participation_threshold",
                "must be in [0, 1]",
            ));
        }
        for (name, v) in [("alpha", self.resource.alpha), ("beta", self.resource.beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(
                    format!("resource.{name}"),
                    "must be finite and >= 0",
                ));
            }
        }
        Ok(())
    }
}

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{LatencyModel, SimError};
use crate::data::SkewConfig;
use crate::fl::{Algorithm, HyperParams};
use crate::nn::ModelSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum DataMode {
    Iid { per_client_count: usize },
    NonIid { skew: SkewConfig },
}

impl DataMode {
    pub fn is_iid(&self) -> bool {
        matches!(self, DataMode::Iid { .. })
    }
}

/// A complete, reproducible description of one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub n_clients: usize,
    pub data: DataMode,
    pub algorithm: Algorithm,
    pub hp: HyperParams,
    pub latency: LatencyModel,
    pub seed: u64,
    pub target_acc: f64,
    /// Stop as soon as the global model reaches `target_acc`.
    #[serde(default)]
    pub stop_at_target: bool,
    pub model: ModelSpec,
    /// Fraction of the test set handed to every client for local accuracy;
    /// the rest measures the global model.
    pub eval_fraction: f64,
    /// Fan client updates out to worker threads.
    #[serde(default)]
    pub parallel: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_clients == 0 || self.n_clients > u16::MAX as usize {
            return Err(SimError::Invalid(format!("{} clients", self.n_clients)));
        }
        if let DataMode::NonIid { skew } = &self.data {
            if skew.clients.len() != self.n_clients {
                return Err(SimError::Invalid(format!(
                    "skew describes {} clients, config has {}",
                    skew.clients.len(),
                    self.n_clients
                )));
            }
        }
        self.hp.validate()?;
        self.latency.validate()?;
        self.model.validate()?;
        if let Algorithm::Eaflm(cfg) = &self.algorithm {
            cfg.validate()?;
        }
        if !self.target_acc.is_finite() {
            return Err(SimError::Invalid("target accuracy must be finite".into()));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self, SimError> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| SimError::Invalid(format!("config json: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The four MNIST experiments: 3 or 7 clients, IID or label-skewed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    A,
    B,
    C,
    D,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::A, Preset::B, Preset::C, Preset::D];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::A => "a",
            Preset::B => "b",
            Preset::C => "c",
            Preset::D => "d",
        }
    }
}

impl FromStr for Preset {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "a" => Ok(Preset::A),
            "b" => Ok(Preset::B),
            "c" => Ok(Preset::C),
            "d" => Ok(Preset::D),
            other => Err(SimError::Invalid(format!("unknown preset {other:?}"))),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.as_str())
    }
}

/// Preset configuration with the VAFL algorithm and seed 1.
pub fn preset(name: Preset) -> ExperimentConfig {
    let (n_clients, data) = match name {
        Preset::A => (
            3,
            DataMode::Iid {
                per_client_count: 20_000,
            },
        ),
        Preset::B => (
            7,
            DataMode::Iid {
                per_client_count: 10_000,
            },
        ),
        Preset::C => (
            3,
            DataMode::NonIid {
                skew: SkewConfig::three_client_default(),
            },
        ),
        Preset::D => (
            7,
            DataMode::NonIid {
                skew: SkewConfig::seven_client_default(),
            },
        ),
    };
    ExperimentConfig {
        name: name.as_str().to_string(),
        n_clients,
        data,
        algorithm: Algorithm::Vafl,
        hp: HyperParams::default(),
        latency: LatencyModel::heterogeneous(),
        seed: 1,
        target_acc: 0.94,
        stop_at_target: false,
        model: ModelSpec::reference(),
        eval_fraction: 0.1,
        parallel: false,
    }
}

//! The federated protocol: local client updates, communication value,
//! mean-threshold selection, weighted aggregation and the two baselines.
//!
//! Everything here is round-structured and pure. Timing, lateness and
//! dropouts are the simulator's business; the wire server reuses the same
//! round functions over real sockets.

mod aggregate;
mod client;
mod eaflm;
mod server;
mod value;

pub use aggregate::aggregate;
pub use client::{client_update, local_steps, ClientEnv, ClientState};
pub use eaflm::{eaflm_gate, eaflm_gate_sq_norm, EaflmConfig};
pub use server::{afl_round, eaflm_round, run_round, server_round, CommLedger, LedgerEntry, RoundOutcome, ServerState};
pub use value::{comm_value, select_clients};

use serde::{Deserialize, Serialize};

use crate::nn::NnError;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FlError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
    #[error("accuracy {0} outside [0, 1]")]
    Accuracy(f64),
    #[error("nothing to {0}")]
    Empty(&'static str),
    #[error("invalid {0}")]
    Invalid(String),
}

/// Which gradient feeds the communication value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GradientStrategy {
    /// `(θ_before − θ_after) / η` over the whole local pass.
    #[default]
    PseudoGradient,
    /// Gradient of the final mini-batch of the local pass.
    LastMinibatch,
}

/// Local training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Local training rounds per epoch: each client update covers `1/r` of an
    /// epoch (`ceil(batches_per_epoch / r)` mini-batches) per local epoch.
    pub local_rounds: u32,
    pub local_epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub total_rounds: u32,
    #[serde(default)]
    pub gradient: GradientStrategy,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            local_rounds: 5,
            local_epochs: 1,
            batch_size: 32,
            learning_rate: 0.1,
            total_rounds: 200,
            gradient: GradientStrategy::PseudoGradient,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), FlError> {
        if self.local_rounds == 0
            || self.local_epochs == 0
            || self.batch_size == 0
            || self.total_rounds == 0
            || !(self.learning_rate >= 0.0 && self.learning_rate.is_finite())
        {
            return Err(FlError::Invalid(format!("hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// Communication value of a report. Clients without a previous gradient
/// cannot evaluate the value formula yet and report `Bootstrap`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommValue {
    Bootstrap,
    Value(f64),
}

impl CommValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            CommValue::Bootstrap => None,
            CommValue::Value(v) => Some(v),
        }
    }
}

/// The scalars a client sends every round before any model moves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientReport {
    pub client_id: u16,
    pub value: CommValue,
    /// Squared norm of the client's current gradient; consumed by the EAFLM
    /// gate, ignored by VAFL.
    pub grad_sq_norm: f64,
    pub local_acc: f64,
    pub sample_count: u64,
    pub round_index: u64,
}

impl ClientReport {
    /// Report with a finite value and zero gradient norm.
    pub fn with_value(client_id: u16, value: f64, sample_count: u64) -> Self {
        Self {
            client_id,
            value: CommValue::Value(value),
            grad_sq_norm: 0.0,
            local_acc: 0.0,
            sample_count,
            round_index: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Algorithm {
    Afl,
    Vafl,
    Eaflm(EaflmConfig),
}

impl Algorithm {
    pub fn kind(&self) -> AlgorithmKind {
        match self {
            Algorithm::Afl => AlgorithmKind::Afl,
            Algorithm::Vafl => AlgorithmKind::Vafl,
            Algorithm::Eaflm(_) => AlgorithmKind::Eaflm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmKind {
    Afl,
    Eaflm,
    Vafl,
}

impl AlgorithmKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AlgorithmKind::Afl => "afl",
            AlgorithmKind::Eaflm => "eaflm",
            AlgorithmKind::Vafl => "vafl",
        }
    }

    /// The algorithm with default EAFLM settings.
    pub fn with_defaults(self) -> Algorithm {
        match self {
            AlgorithmKind::Afl => Algorithm::Afl,
            AlgorithmKind::Vafl => Algorithm::Vafl,
            AlgorithmKind::Eaflm => Algorithm::Eaflm(EaflmConfig::default()),
        }
    }
}

impl std::str::FromStr for AlgorithmKind {
    type Err = FlError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "afl" => Ok(AlgorithmKind::Afl),
            "vafl" => Ok(AlgorithmKind::Vafl),
            "eaflm" => Ok(AlgorithmKind::Eaflm),
            other => Err(FlError::Invalid(format!("algorithm {other:?}"))),
        }
    }
}

impl std::fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.as_str())
    }
}

//! Deterministic discrete-event simulation of a heterogeneous client
//! population driving the federated rounds.
//!
//! Time is measured in abstract ticks. Each round the server broadcasts the
//! global model to every free client; clients finish their local pass after a
//! sampled compute delay plus network delay. The server closes the round when
//! every dispatched report has arrived or its deadline passes. Reports that
//! miss the deadline stay in flight and are consumed, stale, in a later round;
//! their clients do not receive new global models until then.

mod config;
mod event;
mod export;
mod latency;
mod run;

pub use config::{preset, DataMode, ExperimentConfig, Preset};
pub use event::{EventKind, EventQueue, SimEvent};
pub use export::{read_trace_csv, RunSummary, TraceRow};
pub use latency::{DelayDist, LatencyModel};
pub use run::{
    communications_to_target, eval_split, prepare, run_experiment, run_prepared, PreparedData, RoundRecord, RunResult,
};

pub use crate::fl::CommLedger;

use crate::data::DataError;
use crate::fl::FlError;
use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fl(#[from] FlError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

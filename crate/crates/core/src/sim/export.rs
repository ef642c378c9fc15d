use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{communications_to_target, ExperimentConfig, RunResult, SimError};
use crate::fl::AlgorithmKind;
use crate::metrics::ccr;

/// One line of the per-round CSV trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub round: u64,
    pub test_acc: f64,
    /// Selected client ids joined with `;`.
    pub selected_ids: String,
    pub c_t0: u64,
    pub c_t1: u64,
}

/// The JSON summary written next to a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub experiment: String,
    pub algorithm: AlgorithmKind,
    pub seed: u64,
    pub rounds_run: u64,
    pub final_acc: f64,
    pub c_t0: u64,
    pub c_t1: u64,
    /// CCR over the whole run.
    pub ccr: Option<f64>,
    pub target_acc: f64,
    pub communications_to_target: Option<u64>,
    pub round_at_target: Option<u64>,
    /// CCR of the ledger at the round the target was reached.
    pub ccr_at_target: Option<f64>,
    pub aborted: Option<String>,
    pub config: ExperimentConfig,
}

impl RunResult {
    pub fn trace_rows(&self) -> Vec<TraceRow> {
        self.rounds
            .iter()
            .map(|r| TraceRow {
                round: r.round,
                test_acc: r.test_acc,
                selected_ids: r.selected.iter().map(u16::to_string).collect::<Vec<_>>().join(";"),
                c_t0: r.c_t0,
                c_t1: r.c_t1,
            })
            .collect()
    }

    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.trace_rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> RunSummary {
        let target = self.config.target_acc;
        let at = self.round_reaching(target);
        RunSummary {
            experiment: self.config.name.clone(),
            algorithm: self.config.algorithm.kind(),
            seed: self.config.seed,
            rounds_run: self.rounds.last().map_or(0, |r| r.round),
            final_acc: self.final_acc(),
            c_t0: self.ledger.c_t0,
            c_t1: self.ledger.c_t1,
            ccr: ccr(self.ledger.c_t0, self.ledger.c_t1).ok(),
            target_acc: target,
            communications_to_target: communications_to_target(self, target),
            round_at_target: at.map(|r| r.round),
            ccr_at_target: at.and_then(|r| ccr(r.c_t0, r.c_t1).ok()),
            aborted: self.aborted.clone(),
            config: self.config.clone(),
        }
    }

    pub fn write_summary_json<W: Write>(&self, mut out: W) -> Result<(), SimError> {
        serde_json::to_writer_pretty(&mut out, &self.summary())?;
        out.write_all(b"\n")?;
        Ok(())
    }
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRow>, SimError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

//! Communication metrics and result tables.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::fl::AlgorithmKind;
use crate::sim::{RunResult, TraceRow};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("ccr undefined for c_t0 = 0")]
    NoBaseline,
    #[error("c_t1 = {c_t1} exceeds c_t0 = {c_t0}")]
    Overcount { c_t0: u64, c_t1: u64 },
    #[error("unknown format {0:?}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Communication compression rate: the fraction of uploads avoided.
pub fn ccr(c_t0: u64, c_t1: u64) -> Result<f64, MetricsError> {
    if c_t0 == 0 {
        return Err(MetricsError::NoBaseline);
    }
    if c_t1 > c_t0 {
        return Err(MetricsError::Overcount { c_t0, c_t1 });
    }
    Ok((c_t0 - c_t1) as f64 / c_t0 as f64)
}

/// Rounds to 4 decimal places for display.
pub fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// One run as a row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub experiment: String,
    pub algorithm: AlgorithmKind,
    /// Uploads until the target accuracy; `None` if it was never reached.
    pub communication_times: Option<u64>,
    pub ccr: f64,
    pub final_acc: f64,
    pub seed: u64,
}

impl MetricRow {
    /// Row for `result` against `target`. The CCR is taken from the ledger at
    /// the round the target was reached, or at the end of the run otherwise.
    pub fn from_run(result: &RunResult, target: f64) -> Self {
        let cfg = &result.config;
        Self::from_trace(&cfg.name, cfg.algorithm.kind(), cfg.seed, &result.trace_rows(), target)
    }

    /// Same row rebuilt from a written trace.
    pub fn from_trace(experiment: &str, algorithm: AlgorithmKind, seed: u64, trace: &[TraceRow], target: f64) -> Self {
        let reached = trace.iter().find(|r| r.test_acc >= target);
        let at = reached.or(trace.last());
        Self {
            experiment: experiment.to_string(),
            algorithm,
            communication_times: reached.map(|r| r.c_t1),
            ccr: at.and_then(|r| ccr(r.c_t0, r.c_t1).ok()).unwrap_or(0.0),
            final_acc: trace.last().map_or(0.0, |r| r.test_acc),
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = MetricsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(MetricsError::Format(other.to_string())),
        }
    }
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Self, MetricsError> {
        path.extension().and_then(|e| e.to_str()).unwrap_or_default().parse()
    }
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    experiment: String,
    algorithm: AlgorithmKind,
    communication_times: Option<u64>,
    ccr: f64,
    final_acc: f64,
    seed: u64,
    ccr_display: f64,
}

pub const CSV_HEADER: &str = "experiment,algorithm,communication_times,ccr,final_acc,seed,ccr_display";

pub fn write_csv<W: Write>(rows: &[MetricRow], out: W) -> Result<(), MetricsError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for r in rows {
        w.serialize(CsvRow {
            experiment: r.experiment.clone(),
            algorithm: r.algorithm,
            communication_times: r.communication_times,
            ccr: r.ccr,
            final_acc: r.final_acc,
            seed: r.seed,
            ccr_display: round4(r.ccr),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<MetricRow>, MetricsError> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize::<CsvRow>()
        .map(|row| {
            let row = row?;
            Ok(MetricRow {
                experiment: row.experiment,
                algorithm: row.algorithm,
                communication_times: row.communication_times,
                ccr: row.ccr,
                final_acc: row.final_acc,
                seed: row.seed,
            })
        })
        .collect()
}

pub fn write_json<W: Write>(rows: &[MetricRow], mut out: W) -> Result<(), MetricsError> {
    serde_json::to_writer_pretty(&mut out, rows)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<R: Read>(input: R) -> Result<Vec<MetricRow>, MetricsError> {
    Ok(serde_json::from_reader(input)?)
}

/// Writes `rows` to `path` in `format`.
pub fn emit(rows: &[MetricRow], path: impl AsRef<Path>, format: Format) -> Result<(), MetricsError> {
    let out = BufWriter::new(File::create(path)?);
    match format {
        Format::Csv => write_csv(rows, out),
        Format::Json => write_json(rows, out),
    }
}

/// Reads a table written by [`emit`], picking the format from the extension.
pub fn load(path: impl AsRef<Path>) -> Result<Vec<MetricRow>, MetricsError> {
    let path = path.as_ref();
    let file = File::open(path)?;
    match Format::from_path(path)? {
        Format::Csv => read_csv(file),
        Format::Json => read_json(file),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub experiment: String,
    /// Mean VAFL CCR over the experiment's seeds.
    pub vafl_ccr: f64,
    /// Mean of `1 - vafl_times / afl_times` over seeds present for both.
    pub reduction_vs_afl: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Mean CCR over all VAFL rows.
    pub mean_ccr: Option<f64>,
    /// Per-experiment communication reductions against AFL, averaged.
    pub mean_reduction: Option<f64>,
    pub experiments: Vec<ExperimentSummary>,
    /// Experiments left out of the reduction average, with the reason.
    pub excluded: Vec<String>,
}

pub fn summarize(rows: &[MetricRow]) -> Summary {
    let vafl: Vec<&MetricRow> = rows.iter().filter(|r| r.algorithm == AlgorithmKind::Vafl).collect();
    let mean_ccr = mean(vafl.iter().map(|r| r.ccr));

    let mut by_experiment: BTreeMap<&str, Vec<&MetricRow>> = BTreeMap::new();
    for r in &vafl {
        by_experiment.entry(&r.experiment).or_default().push(r);
    }

    let mut experiments = Vec::new();
    let mut excluded = Vec::new();
    for (name, vrows) in by_experiment {
        let afl: BTreeMap<u64, &MetricRow> = rows
            .iter()
            .filter(|r| r.algorithm == AlgorithmKind::Afl && r.experiment == name)
            .map(|r| (r.seed, r))
            .collect();
        let reductions: Vec<f64> = vrows
            .iter()
            .filter_map(|v| {
                let a = afl.get(&v.seed)?;
                match (v.communication_times, a.communication_times) {
                    (Some(vt), Some(at)) if at > 0 => Some(1.0 - vt as f64 / at as f64),
                    _ => None,
                }
            })
            .collect();
        let reduction = mean(reductions.iter().copied());
        if reduction.is_none() {
            let why = if afl.is_empty() {
                "no AFL baseline"
            } else {
                "no seed where both AFL and VAFL reached the target"
            };
            log::warn!("experiment {name} excluded from the reduction average: {why}");
            excluded.push(format!("{name}: {why}"));
        }
        experiments.push(ExperimentSummary {
            experiment: name.to_string(),
            vafl_ccr: mean(vrows.iter().map(|r| r.ccr)).expect("non-empty group"),
            reduction_vs_afl: reduction,
        });
    }
    let mean_reduction = mean(experiments.iter().filter_map(|e| e.reduction_vs_afl));

    Summary {
        mean_ccr,
        mean_reduction,
        experiments,
        excluded,
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use vafl::data::{DataBundle, DataError, DataSource, PartitionPlan};
use vafl::fl::{Algorithm, AlgorithmKind};
use vafl::metrics::{emit, round4, summarize, Format, MetricRow, MetricsError, Summary};
use vafl::sim::{
    prepare, preset, read_trace_csv, run_prepared, DataMode, ExperimentConfig, RunResult, RunSummary, SimError,
};
use vafl::wire::{client_main, serve, ClientOptions, ClientSetup, ServeOptions, WireError};

use crate::args::{ClientArgs, DataArgs, ExperimentArgs, ReportArgs, ServeArgs, SimulateArgs};

pub const TRACE_FILE: &str = "trace.csv";
pub const RUN_FILE: &str = "run.json";
pub const PLAN_FILE: &str = "plan.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";

const SYNTHETIC_TRAIN_ROWS: usize = 60_000;
const SYNTHETIC_TEST_ROWS: usize = 10_000;
const SYNTHETIC_DATA_SEED: u64 = 0;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{0} already has content; pass --force to write into it")]
    OutDirNotEmpty(PathBuf),
    #[error("client {0} is not part of this run")]
    UnknownClient(u16),
    #[error("no runs found under {0}")]
    NoRuns(PathBuf),
    #[error("{0} run(s) aborted")]
    Aborted(usize),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let file = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    writeln!(out).and_then(|_| out.flush()).map_err(io_err(path))
}

/// Creates `dir`, refusing one that already holds files unless `force`.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(io_err(dir))?;
        if entries.next().is_some() && !force {
            return Err(CliError::OutDirNotEmpty(dir.to_path_buf()));
        }
    }
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Divides every sample count of a config by `scale`.
fn scale_counts(cfg: &mut ExperimentConfig, scale: usize) {
    match &mut cfg.data {
        DataMode::Iid { per_client_count } => *per_client_count = (*per_client_count / scale).max(1),
        DataMode::NonIid { skew } => {
            for c in &mut skew.clients {
                c.sample_count = (c.sample_count / scale).max(1);
            }
        }
    }
}

pub fn load_experiment(exp: &ExperimentArgs, data: &DataArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match (&exp.preset, &exp.config) {
        (Some(p), _) => {
            let mut cfg = preset((*p).into());
            if data.synthetic {
                scale_counts(&mut cfg, data.synthetic_scale as usize);
            }
            cfg
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            ExperimentConfig::from_json(&text)?
        }
        (None, None) => unreachable!("clap requires --preset or --config"),
    };
    cfg.target_acc = exp.target_acc;
    cfg.stop_at_target = exp.stop_at_target;
    if let Some(r) = exp.rounds {
        cfg.hp.total_rounds = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn data_source(args: &DataArgs) -> DataSource {
    if args.synthetic {
        let scale = args.synthetic_scale as usize;
        return DataSource::Synthetic {
            train_rows: SYNTHETIC_TRAIN_ROWS / scale,
            test_rows: SYNTHETIC_TEST_ROWS / scale,
            seed: SYNTHETIC_DATA_SEED,
        };
    }
    if let Some(dir) = &args.mnist_dir {
        return DataSource::mnist_dir(dir);
    }
    let path = |p: &Option<PathBuf>| p.clone().expect("clap requires the full MNIST set");
    DataSource::Mnist {
        train_images: path(&args.mnist_images),
        train_labels: path(&args.mnist_labels),
        test_images: path(&args.mnist_test_images),
        test_labels: path(&args.mnist_test_labels),
    }
}

fn load_data(args: &DataArgs) -> Result<DataBundle, CliError> {
    let source = data_source(args);
    log::info!("loading {source:?}");
    Ok(source.load()?)
}

/// Keeps the config's own parameters when it already names `kind`.
fn algorithm_for(cfg: &ExperimentConfig, kind: AlgorithmKind) -> Algorithm {
    if cfg.algorithm.kind() == kind {
        cfg.algorithm.clone()
    } else {
        kind.with_defaults()
    }
}

pub fn write_run(dir: &Path, result: &RunResult) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let trace = dir.join(TRACE_FILE);
    let mut out = create(&trace)?;
    result.write_trace_csv(&mut out)?;
    out.flush().map_err(io_err(&trace))?;
    write_json(&dir.join(RUN_FILE), &result.summary())
}

fn sort_rows(rows: &mut [MetricRow]) {
    rows.sort_by(|a, b| {
        (&a.experiment, a.seed, a.algorithm.as_str()).cmp(&(&b.experiment, b.seed, b.algorithm.as_str()))
    });
}

fn write_tables(rows: &[MetricRow], table: &Path, summary_path: &Path) -> Result<Summary, CliError> {
    emit(rows, table, Format::from_path(table)?)?;
    let summary = summarize(rows);
    write_json(summary_path, &summary)?;
    Ok(summary)
}

fn print_rows(rows: &[MetricRow]) {
    println!(
        "{:<12} {:<6} {:>6} {:>8} {:>8} {:>9}",
        "experiment", "alg", "seed", "uploads", "ccr", "final_acc"
    );
    for r in rows {
        println!(
            "{:<12} {:<6} {:>6} {:>8} {:>8.4} {:>9.4}",
            r.experiment,
            r.algorithm,
            r.seed,
            r.communication_times.map_or("-".to_string(), |c| c.to_string()),
            round4(r.ccr),
            r.final_acc
        );
    }
}

fn print_summary(summary: &Summary) {
    if let Some(m) = summary.mean_ccr {
        println!("mean VAFL CCR {:.4}", m);
    }
    if let Some(m) = summary.mean_reduction {
        println!("mean upload reduction vs AFL {:.4}", m);
    }
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let mut cfg = load_experiment(&args.experiment, &args.data)?;
    cfg.parallel |= args.parallel;
    let kinds: Vec<AlgorithmKind> = if args.algorithm.is_empty() {
        vec![cfg.algorithm.kind()]
    } else {
        args.algorithm.iter().map(|&a| a.into()).collect()
    };
    let seeds = if args.seed.is_empty() {
        vec![cfg.seed]
    } else {
        args.seed.clone()
    };
    prepare_out_dir(&args.out, args.force)?;
    let data = load_data(&args.data)?;

    let mut rows = Vec::new();
    let mut aborted = 0;
    for &seed in &seeds {
        cfg.seed = seed;
        let prepared = prepare(&cfg, &data)?;
        let seed_dir = args.out.join(&cfg.name).join(format!("seed-{seed}"));
        fs::create_dir_all(&seed_dir).map_err(io_err(&seed_dir))?;
        write_json(&seed_dir.join(PLAN_FILE), &prepared.plan)?;
        for &kind in &kinds {
            let mut run_cfg = cfg.clone();
            run_cfg.algorithm = algorithm_for(&cfg, kind);
            log::info!("{} seed {seed} {kind}", cfg.name);
            let result = run_prepared(&run_cfg, &prepared)?;
            if let Some(why) = &result.aborted {
                log::error!("{} seed {seed} {kind} aborted: {why}", cfg.name);
                aborted += 1;
            }
            write_run(&seed_dir.join(kind.as_str()), &result)?;
            rows.push(MetricRow::from_run(&result, cfg.target_acc));
        }
    }
    sort_rows(&mut rows);
    let summary = write_tables(&rows, &args.out.join(METRICS_FILE), &args.out.join(SUMMARY_FILE))?;
    print_rows(&rows);
    print_summary(&summary);
    if aborted > 0 {
        return Err(CliError::Aborted(aborted));
    }
    Ok(())
}

pub fn serve_cmd(args: &ServeArgs) -> Result<(), CliError> {
    let mut cfg = load_experiment(&args.experiment, &args.data)?;
    if let Some(a) = args.algorithm {
        cfg.algorithm = algorithm_for(&cfg, a.into());
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    prepare_out_dir(&args.out, args.force)?;
    let data = load_data(&args.data)?;
    let prepared = prepare(&cfg, &data)?;
    write_json(&args.out.join(PLAN_FILE), &prepared.plan)?;

    let listener = TcpListener::bind(&args.bind).map_err(WireError::Io)?;
    log::info!(
        "waiting for {} clients on {}",
        cfg.n_clients,
        listener.local_addr().map_err(WireError::Io)?
    );
    let opts = ServeOptions {
        accept_timeout: Some(Duration::from_secs(args.accept_timeout)),
        round_timeout: Some(Duration::from_secs(args.round_timeout)),
    };
    let result = serve(listener, &cfg, &prepared, &opts)?;
    write_run(&args.out, &result)?;
    let rows = vec![MetricRow::from_run(&result, cfg.target_acc)];
    write_tables(&rows, &args.out.join(METRICS_FILE), &args.out.join(SUMMARY_FILE))?;
    print_rows(&rows);
    if let Some(why) = &result.aborted {
        log::error!("run aborted: {why}");
        return Err(CliError::Aborted(1));
    }
    Ok(())
}

pub fn client_cmd(args: &ClientArgs) -> Result<(), CliError> {
    let mut cfg = load_experiment(&args.experiment, &args.data)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let data = load_data(&args.data)?;
    let setup = match &args.partition_file {
        Some(path) => {
            let plan: PartitionPlan = read_json(path)?;
            ClientSetup::from_plan(&cfg, &plan, &data, args.client_id)?
        }
        None => ClientSetup::from_prepared(&cfg, &prepare(&cfg, &data)?, args.client_id),
    }
    .ok_or(CliError::UnknownClient(args.client_id))?;
    let opts = ClientOptions {
        max_retries: args.retries,
        ..ClientOptions::default()
    };
    let summary = client_main(args.server.as_str(), &setup, &opts)?;
    println!(
        "client {} finished: {} rounds, {} uploads",
        args.client_id, summary.rounds, summary.uploads
    );
    Ok(())
}

/// Every run directory under `root`, in path order.
pub fn find_runs(root: &Path) -> Vec<PathBuf> {
    walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file() && e.file_name() == RUN_FILE)
        .filter_map(|e| e.path().parent().map(Path::to_path_buf))
        .filter(|dir| dir.join(TRACE_FILE).is_file())
        .collect()
}

pub fn report(args: &ReportArgs) -> Result<(), CliError> {
    let runs = find_runs(&args.dir);
    if runs.is_empty() {
        return Err(CliError::NoRuns(args.dir.clone()));
    }
    let mut rows = Vec::with_capacity(runs.len());
    for dir in &runs {
        let summary: RunSummary = read_json(&dir.join(RUN_FILE))?;
        let trace_path = dir.join(TRACE_FILE);
        let trace = read_trace_csv(File::open(&trace_path).map_err(io_err(&trace_path))?)?;
        rows.push(MetricRow::from_trace(
            &summary.experiment,
            summary.algorithm,
            summary.seed,
            &trace,
            args.target_acc,
        ));
    }
    sort_rows(&mut rows);
    let table = args.out.clone().unwrap_or_else(|| args.dir.join(METRICS_FILE));
    let summary_path = args.summary.clone().unwrap_or_else(|| args.dir.join(SUMMARY_FILE));
    let summary = write_tables(&rows, &table, &summary_path)?;
    print_rows(&rows);
    print_summary(&summary);
    for why in &summary.excluded {
        println!("excluded {why}");
    }
    Ok(())
}

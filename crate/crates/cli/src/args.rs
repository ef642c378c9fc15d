use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use vafl::fl::AlgorithmKind;
use vafl::sim::Preset;

#[derive(Debug, Parser)]
#[command(name = "vafl", version, about = "Value-gated asynchronous federated learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run simulated experiments and write traces, summaries and a metric table.
    Simulate(SimulateArgs),
    /// Coordinate one run over TCP.
    Serve(ServeArgs),
    /// Join a served run as one client.
    Client(ClientArgs),
    /// Rebuild the metric table and summary from a directory of runs.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    A,
    B,
    C,
    D,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::A => Preset::A,
            PresetArg::B => Preset::B,
            PresetArg::C => Preset::C,
            PresetArg::D => Preset::D,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgorithmArg {
    Afl,
    Vafl,
    Eaflm,
}

impl From<AlgorithmArg> for AlgorithmKind {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Afl => AlgorithmKind::Afl,
            AlgorithmArg::Vafl => AlgorithmKind::Vafl,
            AlgorithmArg::Eaflm => AlgorithmKind::Eaflm,
        }
    }
}

/// Which experiment to run: a named preset or a JSON config file.
#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("experiment").required(true).args(["preset", "config"])))]
pub struct ExperimentArgs {
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    /// Experiment config as JSON.
    #[arg(long, value_name = "JSON")]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0.94)]
    pub target_acc: f64,
    /// Override the number of server rounds.
    #[arg(long)]
    pub rounds: Option<u32>,
    /// End a run as soon as the target accuracy is reached.
    #[arg(long)]
    pub stop_at_target: bool,
}

/// Exactly one data source.
#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("data").required(true).args(["mnist_dir", "mnist_images", "synthetic"])))]
pub struct DataArgs {
    /// Directory holding the four standard MNIST IDX files.
    #[arg(long, value_name = "DIR")]
    pub mnist_dir: Option<PathBuf>,
    #[arg(long, value_name = "PATH", requires_all = ["mnist_labels", "mnist_test_images", "mnist_test_labels"])]
    pub mnist_images: Option<PathBuf>,
    #[arg(long, value_name = "PATH", requires = "mnist_images")]
    pub mnist_labels: Option<PathBuf>,
    #[arg(long, value_name = "PATH", requires = "mnist_images")]
    pub mnist_test_images: Option<PathBuf>,
    #[arg(long, value_name = "PATH", requires = "mnist_images")]
    pub mnist_test_labels: Option<PathBuf>,
    /// Seeded Gaussian class blobs instead of MNIST. Preset sample counts are
    /// divided by `--synthetic-scale`.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, default_value_t = 10, requires = "synthetic", value_parser = clap::value_parser!(u32).range(1..))]
    pub synthetic_scale: u32,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Algorithms to compare on identical partitions. Defaults to the config's.
    #[arg(long, value_enum)]
    pub algorithm: Vec<AlgorithmArg>,
    /// Seeds to sweep. Defaults to the config's.
    #[arg(long)]
    pub seed: Vec<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Write into an output directory that already has content.
    #[arg(long)]
    pub force: bool,
    /// Train clients of a round on worker threads.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub algorithm: Option<AlgorithmArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "127.0.0.1:7070")]
    pub bind: String,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
    /// Seconds to wait for every client to register.
    #[arg(long, default_value_t = 300)]
    pub accept_timeout: u64,
    /// Seconds to wait for one report or upload before dropping the client.
    #[arg(long, default_value_t = 600)]
    pub round_timeout: u64,
}

#[derive(Debug, Args)]
pub struct ClientArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub server: String,
    #[arg(long)]
    pub client_id: u16,
    /// Partition plan written by `serve` or `simulate`. Recomputed from the
    /// config and seed when omitted.
    #[arg(long, value_name = "JSON")]
    pub partition_file: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub retries: u32,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory searched recursively for run summaries.
    pub dir: PathBuf,
    #[arg(long, default_value_t = 0.94)]
    pub target_acc: f64,
    /// Metric table, `.csv` or `.json`. Defaults to `DIR/metrics.csv`.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Summary JSON. Defaults to `DIR/summary.json`.
    #[arg(long, value_name = "FILE")]
    pub summary: Option<PathBuf>,
}

//! Paired AFL / EAFLM / VAFL comparison on one preset.
//!
//! ```sh
//! cargo run --release -p vafl --example compare -- d data/mnist
//! ```

use vafl::data::DataSource;
use vafl::fl::AlgorithmKind;
use vafl::metrics::MetricRow;
use vafl::sim::{prepare, preset, run_prepared, Preset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let name: Preset = args.next().unwrap_or_else(|| "a".into()).parse()?;
    let dir = args.next().unwrap_or_else(|| "data/mnist".into());
    let data = DataSource::mnist_dir(&dir).load()?;

    let mut cfg = preset(name);
    cfg.stop_at_target = true;
    let prepared = prepare(&cfg, &data)?;
    println!(
        "{:<6} {:>7} {:>8} {:>8} {:>8}",
        "alg", "rounds", "uploads", "ccr", "acc"
    );
    for kind in [AlgorithmKind::Afl, AlgorithmKind::Eaflm, AlgorithmKind::Vafl] {
        cfg.algorithm = kind.with_defaults();
        let run = run_prepared(&cfg, &prepared)?;
        let row = MetricRow::from_run(&run, cfg.target_acc);
        println!(
            "{:<6} {:>7} {:>8} {:>8.4} {:>8.4}",
            kind,
            run.rounds.len() - 1,
            row.communication_times.map_or("-".into(), |c| c.to_string()),
            row.ccr,
            row.final_acc
        );
    }
    Ok(())
}

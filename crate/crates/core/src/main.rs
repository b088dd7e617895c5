use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mtssl::config::ExperimentConfig;
use mtssl::harness;

#[derive(Parser)]
#[command(
    name = "mtssl",
    version,
    about = "Online semi-supervised learning with manifold tiling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of repeats, overriding the config.
    #[arg(long)]
    repeats: Option<usize>,
    /// Unsupervised tiling passes before the stream, overriding the config.
    #[arg(long)]
    pretrain: Option<usize>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Export the training stream and test set of the first repeat.
    Gen(Common),
    /// Run the online experiment.
    Run(Common),
    /// Compare online and offline test error along the stream.
    CompareOffline(Common),
    /// Majority-class share on the unit square.
    Square(Common),
    /// Evaluate the `grid.*` lattice of the config.
    Grid(Common),
    /// Export receptive fields of a trained tiling layer.
    Probe {
        #[command(flatten)]
        common: Common,
        /// Grid points per axis for 2-D inputs.
        #[arg(long, default_value_t = 41)]
        resolution: usize,
    },
}

fn load(common: &Common) -> mtssl::Result<ExperimentConfig> {
    let base = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let mut overrides: Vec<(String, String)> = Vec::new();
    if let Some(seed) = common.seed {
        overrides.push(("experiment.seed".into(), seed.to_string()));
    }
    if let Some(r) = common.repeats {
        overrides.push(("experiment.repeats".into(), r.to_string()));
    }
    if let Some(p) = common.pretrain {
        overrides.push(("tiling.pretrain".into(), p.to_string()));
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| mtssl::Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    base.with_overrides(&overrides)
}

fn run(cli: Cli) -> mtssl::Result<()> {
    match cli.command {
        Command::Gen(c) => harness::export_dataset(&load(&c)?, &c.out),
        Command::Run(c) => {
            let summaries = harness::export_online(&load(&c)?, &c.out)?;
            for s in summaries {
                println!(
                    "repeat {:>3}: stream error {:.4}, post-transition {}, logistic {:.4}",
                    s.repeat,
                    s.stream_error,
                    s.post_transition_error
                        .map_or("n/a".into(), |v| format!("{v:.4}")),
                    s.logreg_stream_error
                );
            }
            Ok(())
        }
        Command::CompareOffline(c) => {
            let rows = harness::export_comparison(&load(&c)?, &c.out)?;
            for (step, on, off) in harness::comparison_means(&rows) {
                let off = off.map_or("n/a".into(), |v| format!("{v:.4}"));
                println!("step {step:>6}: online {on:.4}, offline {off}");
            }
            Ok(())
        }
        Command::Square(c) => {
            let rows = harness::export_square(&load(&c)?, &c.out)?;
            for h in harness::histogram(&rows) {
                println!(
                    "[{:.1}, {:.1}): network {:>4}, laplacian svm {:>4}",
                    h.bin_lo, h.bin_hi, h.network, h.laplacian_svm
                );
            }
            Ok(())
        }
        Command::Grid(c) => {
            let cells = harness::export_grid(&load(&c)?, &c.out)?;
            for which in [harness::GridMetric::Ssl, harness::GridMetric::Logreg] {
                if let Some(best) = harness::best_cell(&cells, which) {
                    let params: Vec<String> = best
                        .params
                        .iter()
                        .map(|(k, v)| format!("{k}={v}"))
                        .collect();
                    println!(
                        "best {which:?}: {} -> {:.4}",
                        params.join(" "),
                        best.metric(which)
                    );
                }
            }
            Ok(())
        }
        Command::Probe { common, resolution } => {
            harness::export_probe(&load(&common)?, &common.out, resolution)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

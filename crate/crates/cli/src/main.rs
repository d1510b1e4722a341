use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rmixer_core::pipeline::{
    run_grid_oracle, run_metrics, run_sample, run_select, run_train, MetricsOptions, MetricsSource, SampleOptions,
    SelectOptions, TrainOptions,
};
use rmixer_core::{load_config, Error};

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_EMPTY_SELECTION: u8 = 4;
const EXIT_NOT_FOUND: u8 = 5;

/// Learned column-wise fusion of two concept embeddings.
///
/// Exit status: 0 success, 2 config error, 3 backend unavailable,
/// 4 empty selection, 5 missing artifact, 1 anything else.
#[derive(Debug, Parser)]
#[command(name = "rmixer", version)]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, short, global = true, default_value = "rmixer.json")]
    config: PathBuf,

    /// Overwrite this command's existing outputs.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a fusion policy; writes checkpoints, reward curve and trajectories.
    Train {
        /// Store every fused embedding in trajectories.jsonl.
        #[arg(long)]
        log_embeddings: bool,
    },
    /// Draw fused candidates from a trained policy into samples.jsonl.
    Sample {
        /// Defaults to checkpoints/best.json in the run directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        /// Use the policy mean instead of sampling.
        #[arg(long)]
        deterministic: bool,
    },
    /// Keep candidates passing both thresholds and rank them.
    Select {
        #[arg(long)]
        tau_presence: Option<f64>,
        #[arg(long)]
        tau_balance: Option<f64>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Summarise similarity, balance and reward into metrics.csv.
    Metrics {
        #[arg(long, value_enum, default_value_t = Source::Samples)]
        source: Source,
        /// Overall row is the mean of per-pair rows.
        #[arg(long)]
        per_pair_mean: bool,
    },
    /// Best uniform mixing weight by grid search (synthetic env only).
    GridOracle {
        #[arg(long, default_value_t = 1001)]
        resolution: usize,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Source {
    Samples,
    Selected,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } => EXIT_CONFIG,
        Error::BackendUnavailable { .. } => EXIT_BACKEND,
        Error::ArtifactNotFound(_) => EXIT_NOT_FOUND,
        Error::EpisodeAborted { source, .. } => exit_code(source),
        _ => EXIT_OTHER,
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<u8, Error> {
    let cfg = load_config(&cli.config)?;
    match cli.command {
        Command::Train { log_embeddings } => {
            let source = std::fs::read_to_string(&cli.config)?;
            let summary = run_train(
                &cfg,
                &TrainOptions {
                    config_source: Some(source),
                    log_embeddings,
                    force: cli.force,
                },
            )?;
            print_json(&summary)?;
        }
        Command::Sample {
            checkpoint,
            n,
            deterministic,
        } => {
            let records = run_sample(
                &cfg,
                &SampleOptions {
                    checkpoint,
                    n,
                    deterministic: deterministic.then_some(true),
                    force: cli.force,
                },
            )?;
            log::info!("wrote {} samples", records.len());
        }
        Command::Select {
            tau_presence,
            tau_balance,
            top_k,
        } => {
            let (selected, report) = run_select(
                &cfg,
                &SelectOptions {
                    tau_presence,
                    tau_balance,
                    top_k,
                    force: cli.force,
                },
            )?;
            if selected.is_empty() {
                eprintln!("no candidate passed the thresholds");
                eprintln!("{}", serde_json::to_string_pretty(&report)?);
                return Ok(EXIT_EMPTY_SELECTION);
            }
            print_json(&report)?;
        }
        Command::Metrics { source, per_pair_mean } => {
            let rows = run_metrics(
                &cfg,
                &MetricsOptions {
                    source: match source {
                        Source::Samples => MetricsSource::Samples,
                        Source::Selected => MetricsSource::Selected,
                    },
                    per_pair_mean: per_pair_mean.then_some(true),
                    force: cli.force,
                },
            )?;
            print_json(&rows)?;
        }
        Command::GridOracle { resolution } => {
            print_json(&run_grid_oracle(&cfg, resolution, cli.force)?)?;
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

//! Argument parsing and dispatch.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::commands::{
    analyze_cmd, baseline_cmd, denoise_cmd, metrics_cmd, permute_cmd, synth_cmd, train_cmd, unmix_cmd,
    AnalyzeArgs, BaselineArgs, DenoiseArgs, MetricsArgs, PermuteArgs, SynthArgs, TrainArgs, UnmixArgs,
};
use crate::config::PipelineConfig;
use crate::pipeline::{run_pipeline, StageError};

/// Exit status when a pipeline runs but misses a threshold.
pub const EXIT_THRESHOLD: i32 = 1;
/// Exit status for any error.
pub const EXIT_ERROR: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "spend", version, about = "Self-supervised permutation denoising for hyperspectral cubes")]
pub struct Cli {
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, env = "SPEND_THREADS", default_value_t = 1)]
    pub threads: usize,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a phantom with exact ground truth and a noisy copy.
    Synth(SynthArgs),
    /// Noise statistics: per-axis PSD, adjacent-pixel correlation, noise vs signal.
    Analyze(AnalyzeArgs),
    /// Split a cube into odd/even training pairs.
    Permute(PermuteArgs),
    /// Train a denoiser on a pair set.
    Train(TrainArgs),
    /// Apply a trained denoiser to a cube.
    Denoise(DenoiseArgs),
    /// Spectral unmixing by LASSO, MCR-ALS or phasor selection.
    Unmix(UnmixArgs),
    /// arPLS baseline correction of a spectra table.
    Baseline(BaselineArgs),
    /// Compare two cubes.
    Metrics(MetricsArgs),
    /// Run every stage from one config and write report.json.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn level(verbose: u8) -> log::LevelFilter {
    match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    }
}

fn init_logging(filter: log::LevelFilter) {
    let _ = env_logger::Builder::new()
        .filter_level(filter)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();
}

fn dispatch(cli: &Cli) -> Result<i32> {
    // the pipeline config may raise the level, so it sets up its own logger
    if !matches!(cli.command, Command::Pipeline { .. }) {
        init_logging(level(cli.verbose));
    }
    match &cli.command {
        Command::Synth(a) => synth_cmd(a)?,
        Command::Analyze(a) => {
            let r = analyze_cmd(a)?;
            println!("selected axis: {}", r.selected_axis);
        }
        Command::Permute(a) => {
            let p = permute_cmd(a)?;
            println!("axis {}: {} pairs", p.axis, p.len());
        }
        Command::Train(a) => print_json(&train_cmd(a)?)?,
        Command::Denoise(a) => {
            denoise_cmd(a)?;
        }
        Command::Unmix(a) => print_json(&unmix_cmd(a)?)?,
        Command::Baseline(a) => baseline_cmd(a)?,
        Command::Metrics(a) => print_json(&metrics_cmd(a)?)?,
        Command::Pipeline { config } => {
            let cfg = PipelineConfig::load(config).map_err(|source| StageError { stage: "config", source })?;
            init_logging(level(cli.verbose).max(cfg.verbosity.level()));
            let outcome = run_pipeline(&cfg)?;
            println!(
                "snr gain {:.3}, selected axis {}, thresholds {}",
                outcome.report["snr_gain"].as_f64().unwrap_or(f64::NAN),
                outcome.report["selected_axis"].as_str().unwrap_or("?"),
                if outcome.passed { "met" } else { "missed" }
            );
            return Ok(if outcome.passed { 0 } else { EXIT_THRESHOLD });
        }
    }
    Ok(0)
}

/// Runs a parsed command line inside a thread pool of the requested size
/// and returns the exit status.
pub fn run(cli: Cli) -> i32 {
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {} threads: {e}", cli.threads);
            return EXIT_ERROR;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

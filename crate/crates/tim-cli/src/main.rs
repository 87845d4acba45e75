//! `tim` — train, sample, verify, and bench the transition-model stack.
//!
//! Exit codes: 0 success, 1 failed checks or runtime faults, 2 configuration
//! errors, 3 numeric aborts during training/sampling.

mod commands;
mod config;
mod output;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use tim_core::TimError;

#[derive(Parser)]
#[command(name = "tim", version, about = "Arbitrary-interval diffusion transitions: training and any-step sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file, writing checkpoints and metrics.
    Train {
        /// Path to the TOML run configuration.
        config: PathBuf,
        /// Output directory (joined under $TIM_RUN_ROOT when relative).
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Resume from a checkpoint; continues its step counter and rng.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override trainer.iterations from the config.
        #[arg(long)]
        iterations: Option<u64>,
        /// Override run.seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Draw samples from a checkpoint and write them as CSV.
    Sample {
        /// Path to a checkpoint file.
        checkpoint: PathBuf,
        /// Optional run config; its [sampler] section supplies defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output CSV path.
        #[arg(long, default_value = "samples.csv")]
        out: PathBuf,
        /// Sampling steps [default: 16].
        #[arg(long)]
        steps: Option<usize>,
        /// Sample count [default: 1000].
        #[arg(long)]
        n: Option<usize>,
        /// Stochastic churn ratio [default: 0].
        #[arg(long)]
        rho: Option<f64>,
        /// Classifier-free guidance scale (needs --class; doubles the NFE)
        /// [default: 1].
        #[arg(long)]
        omega: Option<f64>,
        /// Sample with the EMA parameters instead of the raw ones.
        #[arg(long)]
        ema: bool,
        /// Sampling seed [default: 0].
        #[arg(long)]
        seed: Option<u64>,
        /// Class label for conditional sampling.
        #[arg(long)]
        class: Option<u32>,
        /// Use a shifted schedule with this pixel-count ratio.
        #[arg(long)]
        shift_ratio: Option<f64>,
        /// Estimate the churn noise from f(x, t, t) instead of f(x, t, t_min).
        #[arg(long)]
        churn_from_self: bool,
        /// Also render the samples as a PPM scatter image.
        #[arg(long)]
        ppm: Option<PathBuf>,
        /// Worker threads [default: 1].
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run the invariant battery and print a pass/fail table.
    Verify {
        /// fast (default) or full.
        #[arg(long, default_value = "fast")]
        level: String,
        /// Mutation-testing hook: corrupt dB/dt inside the battery. The
        /// identity and reduction checks must fail.
        #[arg(long, hide = true)]
        corrupt_db_dt: bool,
    },
    /// Measure the derivative estimator's training-step overhead.
    Bench {
        /// Path to the TOML run configuration.
        config: PathBuf,
        /// Timed steps per repetition.
        #[arg(long, default_value_t = 30)]
        iters: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, out, resume, iterations, seed } => {
            commands::train::run(&config, &out, resume.as_deref(), iterations, seed)
        }
        Command::Sample {
            checkpoint,
            config,
            out,
            steps,
            n,
            rho,
            omega,
            ema,
            seed,
            class,
            shift_ratio,
            churn_from_self,
            ppm,
            workers,
        } => commands::sample::run(commands::sample::Args {
            checkpoint,
            config,
            out,
            steps,
            n,
            rho,
            omega,
            ema,
            seed,
            class,
            shift_ratio,
            churn_from_self,
            ppm,
            workers,
        }),
        Command::Verify { level, corrupt_db_dt } => commands::verify::run(&level, corrupt_db_dt),
        Command::Bench { config, iters } => commands::bench::run(&config, iters),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                TimError::Config(_) | TimError::Stats(_) => ExitCode::from(2),
                TimError::NumericAbort { .. } => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}

//! Single executable for the whole pipeline: dataset synthesis, two-stage
//! training, sampling/dehazing, evaluation, and schedule inspection.
//!
//! Log verbosity follows the `RUST_LOG` environment variable.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "hazebridge",
    about = "Bidirectional bridge-diffusion dehazing toolkit",
    version
)]
struct Cli {
    /// Configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root random seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for run artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Override a configuration key, e.g. `--set train.lr=1e-4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dehazing corpus.
    Synth,
    /// Train one stage of the pipeline.
    Train {
        /// 1 = paired dual-bridge, 2 = unpaired single-bridge.
        #[arg(long)]
        stage: u8,
        /// Stage-1 checkpoint (required for stage 2).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Dehaze every pixmap in a directory with a trained model.
    Sample {
        /// Directory of input `.ppm` images.
        input: PathBuf,
        /// Trained single-bridge checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Reverse-grid step count; overrides the config.
        #[arg(long)]
        steps: Option<usize>,
        /// posterior | remarginalize | paper-literal; overrides the config.
        #[arg(long)]
        sampler: Option<String>,
    },
    /// Compare a directory of outputs against references (PSNR/SSIM CSV).
    Eval {
        /// Directory of candidate images.
        candidate: PathBuf,
        /// Directory of reference images (matched by file name).
        reference: PathBuf,
    },
    /// Print the closed-form bridge quantities for a (T, s) configuration.
    Schedule {
        t_steps: usize,
        s: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default()).init();
    let cli = Cli::parse();
    let config = match config::resolve(cli.config.as_deref(), &cli.sets, cli.seed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error (config): {e:#}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Synth => commands::synth(&config, &cli.out),
        Command::Train { stage, checkpoint } => {
            commands::train(&config, &cli.out, stage, checkpoint.as_deref())
        }
        Command::Sample {
            input,
            checkpoint,
            steps,
            sampler,
        } => commands::sample(&config, &cli.out, &input, &checkpoint, steps, sampler),
        Command::Eval {
            candidate,
            reference,
        } => commands::eval(&config, &cli.out, &candidate, &reference),
        Command::Schedule { t_steps, s } => commands::schedule(&config, &cli.out, t_steps, s),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e
                .downcast_ref::<hazebridge::Error>()
                .map(|he| he.category())
                .unwrap_or("other");
            eprintln!("error ({category}): {e:#}");
            let code = match category {
                "config" => 2,
                "io" => 3,
                "format" => 4,
                "checkpoint" => 5,
                "numeric" => 6,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}

//! Command-line front end: convert corpora, train seen intents, add new
//! intents to a checkpoint and evaluate or probe the result.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "intent-space", version, about = "Intent-space intent classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a SNIPS or ATIS download to JSONL splits.
    Convert {
        #[arg(long, value_parser = ["snips", "atis"])]
        format: String,
        /// SNIPS directory, or the ATIS training file.
        #[arg(long)]
        input: PathBuf,
        /// ATIS test file.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// SNIPS sentences per intent moved to the validation split.
        #[arg(long, default_value_t = 100)]
        validation_per_intent: usize,
    },
    /// Train the seen intents described by a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a config value, e.g. `--set training.epsilon=0.5`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Add the intents found in a dataset to a trained checkpoint.
    AddIntent {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sentences of the new intents.
        #[arg(long)]
        data: PathBuf,
        /// Seen-intent training sentences for the rank-preservation term.
        #[arg(long)]
        seen: PathBuf,
        #[arg(long)]
        valid: Option<PathBuf>,
        /// Embedding file; defaults to the one recorded in the checkpoint.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Output checkpoint; defaults to `<checkpoint>.extended.json`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fit expansion matrices after the coordinates.
        #[arg(long, default_value = "on", action = clap::ArgAction::Set, value_parser = clap::builder::BoolishValueParser::new())]
        omega: bool,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        zeta: Option<f64>,
        /// Override a training value, e.g. `--set max_epochs_omega=100`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Accuracy report for a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-sentence seen/unseen decisions.
    Detect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Entropy threshold, or distance threshold for `coordinates`.
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value = "entropy", value_parser = ["entropy", "coordinates"])]
        method: String,
        #[arg(long, default_value_t = 25)]
        steps: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Entropy ROC for unseen-intent detection.
    Roc {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Normalised coordinates of every intent as CSV.
    ExportCoords {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients with central differences.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
    },
    /// Train, extend and report in one go.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "single", value_parser = ["single", "table2", "table3", "joint"])]
        kind: String,
        /// Unseen training sizes for `table3`.
        #[arg(long, value_delimiter = ',', default_value = "1,10,100,500,1000,1500")]
        sizes: Vec<usize>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

fn with_run_flags(mut overrides: Vec<String>, seed: Option<u64>, output_dir: Option<PathBuf>) -> Vec<String> {
    if let Some(s) = seed {
        overrides.push(format!("run.seed={s}"));
    }
    if let Some(d) = output_dir {
        let d = std::path::absolute(&d).unwrap_or(d);
        overrides.push(format!("run.output_dir={}", toml::Value::String(d.display().to_string())));
    }
    overrides
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Convert {
            format,
            input,
            test,
            out,
            validation_per_intent,
        } => commands::convert(&format, &input, test.as_deref(), &out, validation_per_intent),
        Command::Train {
            config,
            overrides,
            seed,
            output_dir,
        } => commands::train(&config, &with_run_flags(overrides, seed, output_dir)).map(drop),
        Command::AddIntent {
            checkpoint,
            data,
            seen,
            valid,
            embeddings,
            out,
            omega,
            epsilon,
            zeta,
            overrides,
        } => commands::add_intent(&commands::AddIntentArgs {
            checkpoint: &checkpoint,
            data: &data,
            seen: &seen,
            valid: valid.as_deref(),
            embeddings: embeddings.as_deref(),
            out: out.as_deref(),
            omega,
            epsilon,
            zeta,
            overrides: &overrides,
        })
        .map(drop),
        Command::Eval {
            checkpoint,
            data,
            embeddings,
            out,
        } => commands::eval(&checkpoint, &data, embeddings.as_deref(), out.as_deref()),
        Command::Detect {
            checkpoint,
            data,
            embeddings,
            rho,
            method,
            steps,
            lr,
            out,
        } => commands::detect(&commands::DetectArgs {
            checkpoint: &checkpoint,
            data: &data,
            embeddings: embeddings.as_deref(),
            rho,
            method: &method,
            steps,
            lr,
            out: out.as_deref(),
        }),
        Command::Roc {
            checkpoint,
            data,
            embeddings,
            out_dir,
        } => commands::roc(&checkpoint, &data, embeddings.as_deref(), &out_dir).map(drop),
        Command::ExportCoords { checkpoint, out } => commands::export_coords(&checkpoint, out.as_deref()),
        Command::GradCheck { seed, eps } => commands::grad_check(seed, eps).map(drop),
        Command::Experiment {
            config,
            kind,
            sizes,
            overrides,
            seed,
            output_dir,
        } => commands::experiment(&config, &with_run_flags(overrides, seed, output_dir), &kind, &sizes).map(drop),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(failure::exit_code(&e) as u8)
        }
    }
}

//! `fairforge`: one binary driving the pipeline stages.
//!
//! Exit codes: 0 on success, 1 on invalid configuration, arguments or input data,
//! 2 on runtime failure (I/O, non-finite training values, corrupt checkpoints).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{run, CliError};

#[derive(Debug, Parser)]
#[command(name = "fairforge", version, about = "Fairness-aware deepfake detection pipeline")]
pub struct Cli {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice; overrides the config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; every artifact is written under it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Validate and print the effective configuration without writing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pair every real sample with one self-blended fake.
    ///
    /// Writes OUT/manifest.jsonl and OUT/images/. Fails with 1 on a malformed manifest,
    /// 2 on a missing or unreadable image.
    Synth(InputArgs),
    /// Balance a real-only manifest so all eight groups have equal size.
    ///
    /// Writes OUT/manifest.jsonl and OUT/images/. Fails with 1 on a malformed manifest, a
    /// fake input record, an empty group or a bad balance policy; 2 on image I/O errors.
    Balance(InputArgs),
    /// Train the two-headed detector with SAM on the manifest's train split.
    ///
    /// Writes OUT/checkpoint.ffg, OUT/train_log.jsonl and periodic
    /// OUT/checkpoint_epoch_NNNN.ffg. Fails with 1 on invalid hyper-parameters or an empty
    /// train split, 2 on non-finite loss or gradient and image I/O errors.
    Train(InputArgs),
    /// Score the manifest's test split with a trained checkpoint.
    ///
    /// Writes OUT/predictions.csv. Fails with 1 on an empty test split or a missing
    /// checkpoint path, 2 on a corrupt checkpoint or image I/O errors.
    Predict(PredictArgs),
    /// Compute per-group accuracy, TPR, AUC and max disparity from a predictions file.
    ///
    /// Writes OUT/report.json. Fails with 1 on a malformed predictions file or rows that
    /// disagree with the manifest, 2 on I/O errors.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Input manifest (JSONL); overrides `paths.manifest`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Checkpoint file; overrides `paths.checkpoint`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Optional manifest used to cross-check labels and groups and to name the dataset.
    #[command(flatten)]
    pub input: InputArgs,
    /// Predictions CSV; overrides `paths.predictions`.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(match err {
                CliError::Invalid(_) => 1,
                CliError::Runtime(_) => 2,
            })
        }
    }
}

//! `fugato` — normalize MIDI corpora, train the sequence model, evaluate
//! it, and sample new scores.
//!
//! Exit codes: 0 on success, 1 for usage errors (bad flags or
//! configuration values), 2 for data errors (unreadable files, malformed
//! corpora, bad checkpoints).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fugato::cli::{cmd_evaluate, cmd_generate, cmd_normalize, cmd_train, report_csv};
use fugato::config::RunConfig;
use fugato::trainer::EpochLog;

#[derive(Parser)]
#[command(
    name = "fugato",
    version,
    about = "Note-sequence modelling: normalize MIDI, train, evaluate, generate"
)]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Master seed for initialization, splitting, training and sampling.
    #[arg(long, global = true, value_name = "SEED")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert MIDI files into normalized note-index text files.
    Normalize {
        /// MIDI file or directory searched recursively for .mid/.midi.
        input: PathBuf,
        /// Output directory for .notes files.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train a model on a corpus of .mid/.midi/.notes files.
    Train {
        /// Corpus file or directory (searched recursively).
        corpus: PathBuf,
        /// Checkpoint output path.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Number of training epochs.
        #[arg(long, value_name = "N")]
        epochs: Option<usize>,
        /// CSV epoch-log path (default: checkpoint path with .log.csv).
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
        /// Disable random transposition augmentation.
        #[arg(long)]
        no_augment: bool,
    },
    /// Sample scores from a trained model and write MIDI files.
    Generate {
        /// Trained checkpoint.
        model: PathBuf,
        /// Output directory for .mid files and the manifest.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Number of scores to generate (seeds are seed, seed+1, ...).
        #[arg(long, value_name = "N", default_value_t = 1)]
        count: usize,
        /// Notes per generated score.
        #[arg(long, value_name = "N")]
        length: Option<usize>,
        /// Sample only among the M most probable symbols.
        #[arg(long = "m", value_name = "M")]
        top_m: Option<usize>,
    },
    /// Teacher-forced accuracy of a checkpoint on a corpus.
    Evaluate {
        /// Trained checkpoint.
        model: PathBuf,
        /// Corpus file or directory (searched recursively).
        corpus: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(error) => {
            // --help/--version are successes; anything else is a usage error.
            let code = match error.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = error.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(if error.is_usage() { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> fugato::Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }

    match cli.command {
        Command::Normalize { input, out } => {
            let summary = cmd_normalize(&input, &out, &config)?;
            for file in &summary.files {
                let warnings = if file.warnings.is_empty() {
                    String::new()
                } else {
                    format!(", {} warnings", file.warnings.len())
                };
                println!(
                    "{}: {} notes, mean distortion {:.6} quarters{}",
                    file.output.display(),
                    file.notes,
                    file.mean_distortion,
                    warnings
                );
            }
            for (path, reason) in &summary.failures {
                eprintln!("skipped {}: {reason}", path.display());
            }
            println!(
                "normalized {} file(s) into {} ({} skipped)",
                summary.files.len(),
                out.display(),
                summary.failures.len()
            );
        }
        Command::Train { corpus, out, epochs, log, no_augment } => {
            if let Some(epochs) = epochs {
                config.training.epochs = epochs;
            }
            if no_augment {
                config.training.augment = false;
            }
            let outcome = cmd_train(&corpus, &out, log.as_deref(), &config)?;
            println!("{}", EpochLog::csv_header());
            for entry in &outcome.history {
                println!("{}", entry.to_csv_row());
            }
            println!(
                "checkpoint: {} (best epoch {})",
                outcome.checkpoint_path.display(),
                outcome.best_epoch
            );
            println!("log: {}", outcome.log_path.display());
            print!("{}", report_csv(&outcome.best));
        }
        Command::Generate { model, out, count, length, top_m } => {
            if let Some(length) = length {
                config.generation.length = length;
            }
            if let Some(top_m) = top_m {
                config.generation.top_m = top_m;
            }
            let outcome = cmd_generate(&model, &out, count, &config)?;
            for file in &outcome.files {
                println!("{}", file.display());
            }
            println!("manifest: {}", outcome.manifest_path.display());
        }
        Command::Evaluate { model, corpus } => {
            let outcome = cmd_evaluate(&model, &corpus)?;
            for (path, reason) in &outcome.skipped {
                eprintln!("skipped {}: {reason}", path.display());
            }
            print!("{}", report_csv(&outcome.report));
        }
    }
    Ok(())
}

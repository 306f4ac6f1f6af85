use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

/// Compile dialogue corpora into instruction-formatted seq2seq data and
/// score model outputs.
#[derive(Debug, Parser)]
#[command(name = "dialcomp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compile a mixture plan into a corpus file and a report.
    Compile {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Summarize a compiled corpus: per-task counts and format validity.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Print one compiled example split into its segments.
    Inspect {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        instance: String,
    },
    /// Score predictions with the task's registered metrics.
    Score {
        #[arg(long)]
        task: String,
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        refs: PathBuf,
        #[arg(long)]
        ratings: Option<PathBuf>,
        /// Registry holding the task's metric profile; defaults to the builtin one.
        #[arg(long)]
        registry: Option<PathBuf>,
    },
}

fn init_logging() {
    let raw = std::env::var("DIALCOMP_LOG").ok();
    let level = match raw.as_deref() {
        None => log::LevelFilter::Warn,
        Some("quiet") => log::LevelFilter::Off,
        Some("info") => log::LevelFilter::Info,
        Some("debug") => log::LevelFilter::Debug,
        Some(_) => log::LevelFilter::Warn,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    if let Some(other) = raw.filter(|v| !matches!(v.as_str(), "quiet" | "info" | "debug")) {
        log::warn!("ignoring DIALCOMP_LOG={other:?}; expected quiet, info or debug");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    let result = match cli.command {
        Command::Compile {
            plan,
            registry,
            out,
            seed,
        } => commands::compile(&plan, &registry, &out, seed),
        Command::Stats { corpus } => commands::stats(&corpus),
        Command::Inspect { corpus, instance } => commands::inspect(&corpus, &instance),
        Command::Score {
            task,
            preds,
            refs,
            ratings,
            registry,
        } => commands::score(&task, &preds, &refs, ratings.as_deref(), registry.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! Command-line front end: argument parsing, config resolution and the
//! subcommand drivers.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub mod commands;
pub mod config;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config, bad input files, or settings the oracle cannot serve.
    #[error("{0}")]
    Validation(String),
    #[error("oracle failure: {0}")]
    Oracle(String),
    #[error("cannot write {path}: {source}")]
    Output {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Oracle(_) => 2,
            CliError::Validation(_) | CliError::Output { .. } => 1,
        }
    }
}

impl From<wordattr::OracleError> for CliError {
    fn from(e: wordattr::OracleError) -> Self {
        CliError::Oracle(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "wordattr", version, about = "Word-level attribution for text models")]
pub struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run configuration; every field is optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding the config's `output`.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Corpus in JSON Lines, one record per line.
    pub corpus: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Attribute every document; writes attributions.jsonl and report.html.
    Attribute {
        #[command(flatten)]
        run: RunArgs,
        /// Also print colored text to standard output.
        #[arg(long)]
        ansi: bool,
    },
    /// Comprehensiveness, sufficiency and approximation error sweep.
    Faithfulness {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train the built-in model to fit the labels, then tabulate per-class keywords.
    Extract {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Compare reader highlights with attributions.
    Highlights {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Re-render an attributions.jsonl file as HTML (and optionally ANSI).
    Render {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(long)]
        ansi: bool,
        attributions: PathBuf,
    },
    /// Start an oracle, print its descriptor and run one evaluation.
    OracleCheck {
        /// Command line of an external oracle.
        #[arg(long, conflicts_with = "config")]
        external: Option<String>,
        /// Check the oracle of a run configuration instead.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 30_000)]
        timeout_ms: u64,
    },
    /// Serve a model over standard input and output.
    #[command(hide = true)]
    ServeOracle {
        #[arg(long, conflicts_with = "fixture")]
        config: Option<PathBuf>,
        /// Corpus used to build the vocabulary of an unsaved model.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// `sum` or `quadratic` test oracle.
        #[arg(long)]
        fixture: Option<String>,
        #[arg(long, default_value_t = 16)]
        dim: usize,
    },
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 on validation errors, 2 on oracle
/// failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let threads = cli.threads.unwrap_or_else(wordattr::parallel::default_threads).max(1);
    match commands::dispatch(cli.command, threads) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("wordattr: {e}");
            e.exit_code()
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use agent6g_cli::commands::{self, ScEvalArgs, DEFAULT_SWEEP};
use agent6g_cli::{CliError, EXIT_USAGE};
use agent6g_core::knowledge::{DEFAULT_CHUNK_SIZE, DEFAULT_DIM, DEFAULT_K, DEFAULT_LAMBDA, DEFAULT_OVERLAP};
use agent6g_core::sc_case::{CaseConstraints, DEFAULT_MAX_PARAMS, DEFAULT_MIN_BLEU, DEFAULT_SNR_DB};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "agent6g", version, about = "Retrieval, planning and evaluation agents for communication-system design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Add text or markdown files to a knowledge base.
    Ingest {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CHUNK_SIZE)]
        chunk_size: usize,
        #[arg(long, default_value_t = DEFAULT_OVERLAP)]
        overlap: usize,
        /// Embedding dimension for a new base.
        #[arg(long, default_value_t = DEFAULT_DIM)]
        dim: usize,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Rank chunks for a question by maximal marginal relevance.
    Query {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        question: String,
    },
    /// Run retrieval, planning and evaluation from a config file.
    Run { config: PathBuf },
    /// Evaluate a codec spec over AWGN.
    ScEval {
        #[arg(long)]
        spec: PathBuf,
        /// One sentence per line; defaults to the bundled desk corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long = "snr", default_value_t = DEFAULT_SNR_DB, allow_negative_numbers = true)]
        snr_db: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_MIN_BLEU)]
        min_bleu: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_PARAMS)]
        max_params: u64,
        /// Print CSV rows `snr_db,bleu,similarity` over the sweep points.
        #[arg(long)]
        snr_sweep: bool,
        /// Comma-separated SNR values for --snr-sweep.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        sweep_points: Option<Vec<f64>>,
    },
    /// Summarize a run transcript and check its framing.
    Replay { transcript: PathBuf },
}

fn dispatch(cli: Cli) -> Result<u8, CliError> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Ingest { kb, chunk_size, overlap, dim, files } => {
            commands::cmd_ingest(&kb, &files, chunk_size, overlap, dim, &mut stdout)
        }
        Command::Query { kb, k, lambda, question } => commands::cmd_query(&kb, &question, k, lambda, &mut stdout),
        Command::Run { config } => commands::cmd_run(&config, &mut stdout),
        Command::ScEval { spec, corpus, snr_db, seed, min_bleu, max_params, snr_sweep, sweep_points } => {
            let args = ScEvalArgs {
                spec_path: &spec,
                corpus_path: corpus.as_deref(),
                snr_db,
                seed,
                constraints: CaseConstraints { min_bleu, max_params },
                sweep: snr_sweep.then(|| sweep_points.unwrap_or_else(|| DEFAULT_SWEEP.to_vec())),
            };
            commands::cmd_sc_eval(&args, &mut stdout)
        }
        Command::Replay { transcript } => commands::cmd_replay(&transcript, &mut stdout),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

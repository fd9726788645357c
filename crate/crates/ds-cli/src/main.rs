//! `ds` — operator surface for the case-based data science agent.
//!
//! Progress goes to stderr, machine-readable artifacts go to files and
//! stdout. Exit codes are stable for scripting: 0 success, 1 task failure,
//! 2 configuration error, 3 provider error.

mod bank_cmd;
mod deploy_cmd;
mod develop_cmd;
mod ingest_cmd;
mod providers;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ds_core::config::AppConfig;

#[derive(Parser)]
#[command(name = "ds", version, about = "Case-based reasoning agent for automated data science")]
struct Cli {
    /// Path to the TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest technical reports (.md) and solution code (.py) into a bank.
    Ingest {
        /// Directory containing .md reports and/or .py code files.
        reports_dir: PathBuf,
        /// Target bank: "insight", "agent", or a directory path.
        #[arg(long, default_value = "insight")]
        bank: String,
        /// Summarize .py files through the solution-extractor prompt.
        #[arg(long)]
        summarize: bool,
        /// Modality tag for the new cases.
        #[arg(long, default_value = "other")]
        modality: String,
        /// Record chat exchanges into this cassette file.
        #[arg(long, conflicts_with = "replay")]
        record: Option<PathBuf>,
        /// Replay chat exchanges strictly from this cassette file.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Run the iterative development loop on one task.
    Develop {
        task_dir: PathBuf,
        /// Pipeline mode: full, no-reviserank, or no-cbr.
        #[arg(long, default_value = "full")]
        mode: String,
        #[arg(long, conflicts_with = "replay")]
        record: Option<PathBuf>,
        #[arg(long)]
        replay: Option<PathBuf>,
        /// Run identifier; timestamp-based when omitted.
        #[arg(long)]
        run_id: Option<String>,
        /// Directory that holds per-run artifacts.
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
    },
    /// Adapt past solutions to one or more tasks in a single call each.
    Deploy {
        /// One task directory, or several for a batch.
        #[arg(required = true)]
        task_dirs: Vec<PathBuf>,
        /// Number of example case pairs in the prompt.
        #[arg(long, default_value_t = 1)]
        examples: usize,
        /// Pick examples uniformly at random instead of by similarity.
        #[arg(long, conflicts_with = "zero_shot")]
        random: bool,
        /// Use no examples at all.
        #[arg(long)]
        zero_shot: bool,
        /// RNG seed for --random.
        #[arg(long)]
        seed: Option<u64>,
        /// Source bank: "agent", "insight", or a directory path.
        #[arg(long, default_value = "agent")]
        bank: String,
        #[arg(long, conflicts_with = "replay")]
        record: Option<PathBuf>,
        #[arg(long)]
        replay: Option<PathBuf>,
        #[arg(long)]
        run_id: Option<String>,
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
    },
    /// Inspect a case bank.
    Bank {
        #[command(subcommand)]
        action: BankAction,
    },
}

#[derive(Subcommand)]
enum BankAction {
    /// List id, kind, and modality of every case.
    Ls {
        #[arg(long, default_value = "insight")]
        bank: String,
    },
    /// Print one case in full.
    Show {
        id: String,
        #[arg(long, default_value = "insight")]
        bank: String,
    },
    /// Counts per kind and the embedding dimension.
    Stats {
        #[arg(long, default_value = "insight")]
        bank: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match AppConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("ds: {e}");
            return ExitCode::from(e.class().exit_code() as u8);
        }
    };
    let outcome = match cli.command {
        Command::Ingest { reports_dir, bank, summarize, modality, record, replay } => {
            ingest_cmd::run(&config, &reports_dir, &bank, summarize, &modality, record, replay)
        }
        Command::Develop { task_dir, mode, record, replay, run_id, runs_dir } => {
            develop_cmd::run(&config, &task_dir, &mode, record, replay, run_id, &runs_dir)
        }
        Command::Deploy {
            task_dirs,
            examples,
            random,
            zero_shot,
            seed,
            bank,
            record,
            replay,
            run_id,
            runs_dir,
        } => deploy_cmd::run(
            &config, &task_dirs, examples, random, zero_shot, seed, &bank, record, replay, run_id,
            &runs_dir,
        ),
        Command::Bank { action } => match action {
            BankAction::Ls { bank } => bank_cmd::ls(&config, &bank),
            BankAction::Show { id, bank } => bank_cmd::show(&config, &bank, &id),
            BankAction::Stats { bank } => bank_cmd::stats(&config, &bank),
        },
    };
    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("ds: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use taxrisk_core::fusion::LevelPolicy;
use taxrisk_core::workflow::SplitChoice;
use taxrisk_core::Error;

#[derive(Debug, Parser)]
#[command(name = "taxrisk", version, about = "Hybrid DNN/Transformer/autoencoder tax-risk grading")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic enterprise dataset (JSONL) and its manifest.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of enterprises.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Split, preprocess, train and calibrate the hybrid model.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "run")]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on one part of a labelled dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Overrides the checkpoint's level policy ("argmax" or "threshold:<p>").
        #[arg(long)]
        policy: Option<LevelPolicy>,
        /// Directory for metrics.json; defaults to the checkpoint's directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Score records (labels optional) and write one JSON line per record.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        policy: Option<LevelPolicy>,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the hybrid and the logistic-regression baseline on one split.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "compare")]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl From<SplitArg> for SplitChoice {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => SplitChoice::Train,
            SplitArg::Val => SplitChoice::Val,
            SplitArg::Test => SplitChoice::Test,
            SplitArg::All => SplitChoice::All,
        }
    }
}

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_DIVERGENCE: u8 = 4;

fn exit_code(error: &Error) -> u8 {
    match error {
        Error::Io { .. } => EXIT_IO,
        Error::Divergence(_) | Error::NonFinite(_) => EXIT_DIVERGENCE,
        _ => EXIT_USAGE,
    }
}

fn run(command: Command) -> taxrisk_core::Result<()> {
    match command {
        Command::Generate { config, out, seed, n } => commands::generate(config.as_deref(), &out, seed, n),
        Command::Train { config, data, out_dir, seed } => commands::train(config.as_deref(), &data, &out_dir, seed),
        Command::Evaluate { checkpoint, data, split, policy, out_dir } => {
            commands::evaluate(&checkpoint, &data, split.into(), policy, out_dir.as_deref())
        }
        Command::Score { checkpoint, input, policy, out } => commands::score(&checkpoint, &input, policy, out.as_deref()),
        Command::Compare { config, data, out_dir, seed } => commands::compare(config.as_deref(), &data, &out_dir, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

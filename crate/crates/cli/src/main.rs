//! `dot`: synthesize shifted-domain data, train attention-based adaptation
//! models, evaluate checkpoints and compare attention maps with transport plans.

mod commands;
mod provenance;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dot_core::{DotError, ErrorKind};

#[derive(Parser)]
#[command(
    name = "dot",
    version,
    about = "Domain adaptation by attention-based feature transport"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate source/target CSVs from a synthetic shift spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain on the source, adapt to the target, write checkpoint and metrics.
    Train {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predict target labels with a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the attention map with entropic transport plans over a lambda ladder.
    CompareOt {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Comma-separated lambdas; `canonical` stands for 2·sqrt(feature dim).
        #[arg(long)]
        lambdas: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit statuses: 0 success, 1 usage or config, 2 data or schema, 3 numeric.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<commands::UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<DotError>().map(DotError::kind) {
        Some(ErrorKind::Config) => 1,
        Some(ErrorKind::Numeric) => 3,
        Some(ErrorKind::Data) | None => 2,
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("DOT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        commands::UsageError(format!(
            "DOT_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| commands::UsageError(format!("cannot size thread pool: {e}")))?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth { spec, out } => commands::synth(&spec, &out),
        Command::Train {
            source,
            target,
            config,
            out,
            epochs,
            seed,
        } => commands::train(&source, &target, &config, &out, epochs, seed),
        Command::Eval {
            checkpoint,
            target,
            out,
        } => commands::eval(&checkpoint, &target, &out),
        Command::CompareOt {
            checkpoint,
            source,
            target,
            lambdas,
            out,
        } => commands::compare_ot(&checkpoint, &source, &target, &lambdas, &out),
    }
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

//! `offload-lab`: generate datasets, train, evaluate and sweep offloading
//! policies from the command line.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use offload_core::eval::SweepAxis;
use offload_core::policy::BaselineKind;
use offload_core::serializer::PromptMode;

use crate::failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "offload-lab", version, about = "Edge task-offloading laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags every command accepts.
#[derive(Debug, Args)]
struct Common {
    /// TOML file with [sim], [train], [lacs] and [eval] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the simulator and training seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Replace output files that already exist.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Export an oracle-labeled prompt dataset as JSON lines.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "standard", value_parser = parse_mode)]
        style: PromptMode,
    },
    /// Fit on a dataset (optional) and run group-relative policy training.
    Train {
        #[command(flatten)]
        common: Common,
        /// `off` trains on the plain cost (impact weight zero).
        #[arg(long, value_enum, default_value = "on")]
        lacs: Switch,
        #[arg(long)]
        sft_data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Training log; defaults to the checkpoint path with `.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Evaluate one policy on paired seeds.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: PolicySource,
        #[arg(long)]
        episodes: Option<usize>,
        /// CSV output; the table is always printed.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Audit log for remote calls.
        #[arg(long)]
        audit: Option<PathBuf>,
    },
    /// Evaluate several policies along one axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_axis)]
        axis: SweepAxis,
        /// Comma-separated baseline names, `checkpoint` or `remote`.
        #[arg(long, value_delimiter = ',', required = true)]
        policies: Vec<String>,
        /// Checkpoint used by the `checkpoint` entry.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        /// CSV output; rows go to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct PolicySource {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_parser = parse_baseline)]
    baseline: Option<BaselineKind>,
    /// Query the chat endpoint named by OFFLOAD_LLM_ENDPOINT.
    #[arg(long)]
    remote: bool,
}

fn parse_mode(s: &str) -> Result<PromptMode, String> {
    s.parse()
}

fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    s.parse()
}

fn parse_baseline(s: &str) -> Result<BaselineKind, String> {
    s.parse()
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData {
            common,
            count,
            out,
            style,
        } => commands::gen_data(&common, count, &out, style),
        Command::Train {
            common,
            lacs,
            sft_data,
            out,
            log,
            iterations,
        } => commands::train(
            &common,
            lacs == Switch::On,
            sft_data.as_deref(),
            &out,
            log,
            iterations,
        ),
        Command::Eval {
            common,
            source,
            episodes,
            out,
            audit,
        } => commands::eval(&common, &source, episodes, out.as_deref(), audit.as_deref()),
        Command::Sweep {
            common,
            axis,
            policies,
            checkpoint,
            episodes,
            out,
        } => commands::sweep(&common, axis, &policies, checkpoint.as_deref(), episodes, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{failure}");
            failure.exit_code()
        }
    }
}

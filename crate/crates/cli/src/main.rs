//! `unlearn-surgery`: train a VAE, unlearn a class with one pass of
//! projected gradient steps, and score the result.
//!
//! Exit codes:
//! - 0: success (and, with `--ci`, the quality gate passed)
//! - 1: usage or configuration error
//! - 2: data error (unreadable files, corrupt checkpoints, bad datasets)
//! - 3: numerical failure (divergence, non-finite values, solver breakdown)
//! - 4: the `--ci` quality gate failed

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use unlearn_core::diffcore::threads::THREADS_ENV;
use unlearn_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "unlearn-surgery",
    version,
    about = "One-shot VAE unlearning by gradient surgery: train, unlearn, evaluate, audit"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file (JSON).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Override a config field by dotted path, e.g. --set unlearn.lr=0.004.
    /// May be repeated; values are parsed as JSON, or taken as strings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Cap worker threads (sets the UNLEARN_THREADS environment variable).
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Copy, Clone, ValueEnum)]
enum Method {
    /// One pass over the forget set with retain-projected ascent steps.
    Surgery,
    /// The same schedule without the projection (ablation baseline).
    Ascent,
    /// Retrain from scratch on the retain set (reference model).
    Retrain,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Surgery => "surgery",
            Method::Ascent => "ascent",
            Method::Retrain => "retrain",
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the base model and the feature classifier.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Apply an unlearning method to the trained model.
    Unlearn {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Method,
        /// Accept checkpoints produced under a different config.
        #[arg(long)]
        allow_mixed: bool,
    },
    /// Score every checkpoint present and write the results table.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Fail (exit 4) unless surgery cut the feature ratio enough.
        #[arg(long)]
        ci: bool,
        /// Accept checkpoints produced under a different config.
        #[arg(long)]
        allow_mixed: bool,
    },
    /// Influence diagnostics: convex probe suite or model conflict audit.
    InfluenceAudit {
        #[command(flatten)]
        common: Common,
        /// Audit a small convex probe with exact refits instead of the model.
        #[arg(long)]
        probe: bool,
        /// Accept checkpoints produced under a different config.
        #[arg(long)]
        allow_mixed: bool,
    },
    /// Full pipeline: train, all three unlearn methods, eval, audit.
    Repro {
        #[command(flatten)]
        common: Common,
        /// Fail (exit 4) unless surgery cut the feature ratio enough.
        #[arg(long)]
        ci: bool,
    },
}

impl Cmd {
    fn common(&self) -> &Common {
        match self {
            Cmd::Train { common } => common,
            Cmd::Unlearn { common, .. } => common,
            Cmd::Eval { common, .. } => common,
            Cmd::InfluenceAudit { common, .. } => common,
            Cmd::Repro { common, .. } => common,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(error_code(&err))
        }
    }
}

fn run(cmd: Cmd) -> Result<bool> {
    let common = cmd.common();
    if let Some(n) = common.threads {
        std::env::set_var(THREADS_ENV, n.to_string());
    }
    let loaded = config::load(&common.config, &common.set)?;
    let (cfg, hash) = (&loaded.cfg, loaded.hash.as_str());
    println!("config {} ({})", common.config.display(), hash);

    match &cmd {
        Cmd::Train { .. } => {
            commands::cmd_train(cfg, hash)?;
            Ok(true)
        }
        Cmd::Unlearn {
            method,
            allow_mixed,
            ..
        } => {
            commands::cmd_unlearn(cfg, hash, method.name(), *allow_mixed)?;
            Ok(true)
        }
        Cmd::Eval {
            ci, allow_mixed, ..
        } => commands::cmd_eval(cfg, hash, *ci, *allow_mixed),
        Cmd::InfluenceAudit {
            probe,
            allow_mixed,
            ..
        } => {
            commands::cmd_influence_audit(cfg, hash, *probe, *allow_mixed)?;
            Ok(true)
        }
        Cmd::Repro { ci, .. } => commands::cmd_repro(cfg, hash, *ci),
    }
}

/// Usage problems exit 1, broken inputs exit 2, numerics exit 3.
fn error_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 1,
        e if e.is_data_error() => 2,
        _ => 3,
    }
}

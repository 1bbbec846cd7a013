//! Command-line runner for `boxrefine`.
//!
//! Every subcommand reads an optional JSON config (`--config`), then applies
//! dotted overrides such as `--train.steps 50` or `--weighting.a=0.3`.
//! Exit codes: 0 success, 1 failed check, 2 configuration or input error,
//! 3 numeric divergence, 4 I/O error.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "boxrefine", version, about = "Edge-distribution refinement toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output file (`weights`, `match`) or directory (`train`).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Shorthand for `--train.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the knot table W(n) as CSV.
    Weights(Common),
    /// Train refinement logits on a synthetic scene.
    Train(Common),
    /// Compare analytic gradients with finite differences.
    Gradcheck(Common),
    /// Solve the assignment problem for a CSV cost matrix.
    Match {
        /// Header-less CSV, one row per prediction.
        costs: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

const DEFAULT_TRAIN_DIR: &str = "train-out";

/// `(key, raw value)` pairs in command-line order.
pub type Overrides = Vec<(String, String)>;

/// Pulls `--a.b value` and `--a.b=value` pairs out of the argument list.
pub fn split_overrides(args: Vec<OsString>) -> Result<(Vec<OsString>, Overrides), CliError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let Some(text) = arg.to_str().and_then(|s| s.strip_prefix("--")) else {
            rest.push(arg);
            continue;
        };
        let (key, inline) = match text.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (text, None),
        };
        if !key.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => iter
                .next()
                .and_then(|v| v.into_string().ok())
                .ok_or_else(|| CliError::Config(format!("override --{key} needs a value")))?,
        };
        overrides.push((key.to_string(), value));
    }
    Ok((rest, overrides))
}

fn execute(command: Command, overrides: &[(String, String)]) -> Result<(), CliError> {
    let load = |c: &Common| config::load(c.config.as_deref(), overrides, c.seed);
    match command {
        Command::Weights(common) => {
            let cfg = load(&common)?;
            output::emit(common.out.as_deref(), commands::weights::weights_csv(&cfg)?.as_bytes())
        }
        Command::Train(common) => {
            let cfg = load(&common)?;
            let dir = common.out.unwrap_or_else(|| PathBuf::from(DEFAULT_TRAIN_DIR));
            let summary = commands::train::run_train(&cfg, &dir)?;
            let ious: Vec<String> =
                summary.final_iou_per_layer.iter().map(|v| v.map_or("-".into(), |x| format!("{x:.4}"))).collect();
            eprintln!("final mean IoU per layer: {}", ious.join(" "));
            Ok(())
        }
        Command::Gradcheck(common) => {
            let cfg = load(&common)?;
            let report = commands::gradcheck::run(&cfg)?;
            output::emit(common.out.as_deref(), report.render().as_bytes())?;
            if report.passed() {
                Ok(())
            } else {
                Err(CliError::Failed(format!("max relative error {:e} exceeds {:e}", report.worst(), report.tolerance)))
            }
        }
        Command::Match { costs, common } => {
            // Validates the config even though matching does not use it.
            load(&common)?;
            output::emit(common.out.as_deref(), commands::matching::match_file(&costs)?.as_bytes())
        }
    }
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run(args: impl IntoIterator<Item = OsString>) -> i32 {
    let (rest, overrides) = match split_overrides(args.into_iter().collect()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(rest) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command, &overrides) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

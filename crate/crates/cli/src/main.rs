use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use cavlab::runner::{self, Command, RunOptions, EXIT_ERROR};
use cavlab::scenario::{preset_names, preset_source};
use cavlab::Execution;
use clap::{Args, Parser, Subcommand};

/// Cavity detection experiments for parabolic equations with unknown initial data.
#[derive(Parser)]
#[command(name = "cavlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the forward problem for the first cavity and write the final field.
    Forward(Common),
    /// Write (optionally noisy) observations for the first cavity.
    Observe(Common),
    /// Run a non-uniqueness example and check that the cavities are indistinguishable.
    Counterexample(Common),
    /// Compare the observations of two cavities.
    Distinguish(Common),
    /// Compare two cavities under two different operators, with interior observations.
    Q2(Common),
    /// Recover a star-shaped cavity from synthetic data.
    Reconstruct(Common),
    /// Repeat `distinguish` while varying one numeric config entry.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted config path, e.g. `source.breakpoints.1`.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated values; an empty string gives an empty sweep.
        #[arg(long, allow_hyphen_values = true)]
        values: Option<String>,
    },
    /// List the built-in scenarios.
    Presets,
}

#[derive(Args)]
struct Common {
    /// Scenario TOML file.
    #[arg(long, conflicts_with = "case")]
    scenario: Option<PathBuf>,
    /// Built-in scenario name.
    #[arg(long)]
    case: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Grid spacing override.
    #[arg(long)]
    h: Option<f64>,
    /// Check hypotheses and write the report without solving.
    #[arg(long)]
    validate_only: bool,
    /// Run independent solves one after another.
    #[arg(long)]
    sequential: bool,
}

fn parse_values(text: &str) -> anyhow::Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().with_context(|| format!("bad sweep value '{s}'")))
        .collect()
}

fn execute(cmd: Command, common: Common, axis: Option<String>, values: Option<Vec<f64>>) -> anyhow::Result<i32> {
    let text = match (&common.scenario, &common.case) {
        (Some(path), _) => {
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
        }
        (None, Some(name)) => preset_source(name)?.to_string(),
        (None, None) => bail!("give --scenario <path> or --case <preset>"),
    };
    let opts = RunOptions {
        out: common.out,
        seed: common.seed,
        h: common.h,
        validate_only: common.validate_only,
        exec: if common.sequential { Execution::Sequential } else { Execution::default() },
        axis,
        values,
    };
    let outcome = runner::run(cmd, &text, &opts)?;
    print!("{}", outcome.summary.to_text());
    Ok(outcome.exit_code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Forward(c) => execute(Command::Forward, c, None, None),
        Cmd::Observe(c) => execute(Command::Observe, c, None, None),
        Cmd::Counterexample(c) => execute(Command::Counterexample, c, None, None),
        Cmd::Distinguish(c) => execute(Command::Distinguish, c, None, None),
        Cmd::Q2(c) => execute(Command::Q2, c, None, None),
        Cmd::Reconstruct(c) => execute(Command::Reconstruct, c, None, None),
        Cmd::Sweep { common, axis, values } => {
            values.as_deref().map(parse_values).transpose().and_then(|v| execute(Command::Sweep, common, axis, v))
        }
        Cmd::Presets => {
            for name in preset_names() {
                println!("{name}");
            }
            Ok(0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}

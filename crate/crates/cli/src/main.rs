#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{CliError, Run};
use config::{AtomsSpec, ConfigError, RawConfig};

#[derive(Parser)]
#[command(
    name = "spinglass",
    version,
    about = "Mean-field spin-glass free energy experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the Parisi functional at (ν, λ).
    ParisiEval(Common),
    /// Check cascade identities against closed forms and the PDE.
    CascadeCheck(Common),
    /// Monte Carlo free energy by exact enumeration.
    FeMc(FeMcArgs),
    /// Hopf-Lax infimum over measures.
    HopfLax(Common),
    /// Classical Parisi sup-inf formula.
    ParisiClassical(Common),
    /// Sup-inf formula with external field h'.
    Theorem2(Common),
    /// Hamilton-Jacobi residual of the (s, h) surface.
    HjGrid(Common),
    /// Hopf-Lax, classical and Monte Carlo values side by side.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Write results here instead of stdout.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Overrides the configured seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the Monte Carlo replication counts.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct FeMcArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    t: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    s: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    h: Option<f64>,
    /// JSON file with {"atoms": [[q, w], ...]} replacing μ.
    #[arg(long)]
    mu_file: Option<PathBuf>,
    #[arg(long)]
    branches: Option<usize>,
}

fn load_mu(path: &Path) -> Result<AtomsSpec, ConfigError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: display.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
        path: display,
        source,
    })
}

fn execute(
    name: &str,
    common: &Common,
    tweak: impl FnOnce(&mut RawConfig) -> Result<(), CliError>,
    command: fn(&config::Model) -> Result<Run, CliError>,
) -> Result<ExitCode, CliError> {
    let (mut raw, source) = RawConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        raw.seed = seed;
        raw.optimizer.seed = seed;
    }
    if let Some(reps) = common.reps {
        raw.monte_carlo.replications = reps;
        raw.monte_carlo.cascade_samples = reps;
    }
    tweak(&mut raw)?;
    let model = raw.validate(&common.config.display().to_string(), &source)?;
    let run = command(&model)?;
    let written = run.output.emit(name, common.out_dir.as_deref())?;
    if !common.quiet {
        if let Some(path) = written {
            eprintln!("wrote {}", path.display());
        }
    }
    if !run.unconverged.is_empty() {
        eprintln!(
            "error: did not converge: {}; best values were written",
            run.unconverged.join(", ")
        );
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: Cli) -> Result<ExitCode, CliError> {
    let keep = |_: &mut RawConfig| Ok(());
    match cli.command {
        Command::ParisiEval(c) => execute("parisi-eval", &c, keep, commands::parisi_eval),
        Command::CascadeCheck(c) => execute("cascade-check", &c, keep, commands::cascade_check),
        Command::FeMc(a) => {
            let tweak = |raw: &mut RawConfig| -> Result<(), CliError> {
                if let Some(n) = a.n {
                    raw.monte_carlo.n = vec![n];
                }
                if let Some(t) = a.t {
                    raw.t = t;
                }
                if let Some(s) = a.s {
                    raw.s = s;
                }
                if let Some(h) = a.h {
                    raw.h = h;
                }
                if let Some(b) = a.branches {
                    raw.monte_carlo.branching = b;
                }
                if let Some(path) = &a.mu_file {
                    raw.mu = load_mu(path)?;
                }
                Ok(())
            };
            execute("fe-mc", &a.common, tweak, commands::fe_mc)
        }
        Command::HopfLax(c) => execute("hopf-lax", &c, keep, commands::hopf_lax),
        Command::ParisiClassical(c) => execute("parisi-classical", &c, keep, commands::parisi_classical),
        Command::Theorem2(c) => execute("theorem2", &c, keep, commands::theorem2),
        Command::HjGrid(c) => execute("hj-grid", &c, keep, commands::hj_grid),
        Command::Compare(c) => execute("compare", &c, keep, commands::compare),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

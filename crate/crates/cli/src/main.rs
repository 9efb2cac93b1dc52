//! `tailtilt`: batch front end for threshold solving, exact tilting, the FDC
//! operator and the sensitivity / invariant diagnostics.

mod commands;
mod config;
mod exit;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tailtilt_core::TiltMode;

use crate::config::{ExperimentConfig, Overrides};
use crate::exit::CliError;

#[derive(Parser)]
#[command(
    name = "tailtilt",
    version,
    about = "Tail-aware tilting experiments on desk-scale distributions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, global = true)]
    n_samples: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Right,
    Left,
    Expected,
}

impl From<ModeArg> for TiltMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Right => TiltMode::Right,
            ModeArg::Left => TiltMode::Left,
            ModeArg::Expected => TiltMode::Expected,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the optimal threshold; writes threshold.json and trace.csv.
    Stage1,
    /// Build the tilted distribution and its risk profile.
    Tilt,
    /// Iterate the FDC operator on the grid against the exact target.
    Fdc,
    /// Threshold-perturbation sweep; exit 3 if a bound is violated.
    Sensitivity,
    /// Run the invariant suite; exit 0 iff every check passes.
    Verify {
        /// Grid file to validate (repeatable).
        #[arg(long = "grid")]
        grids: Vec<PathBuf>,
    },
    /// Comparison table of pre-trained, expected, left and right tilts.
    Report,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("TAILTILT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("TAILTILT_THREADS: expected a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("TAILTILT_THREADS: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let c = cli.common;
    let overrides = Overrides {
        seed: c.seed,
        out: c.out,
        alpha: c.alpha,
        beta: c.beta,
        mode: c.mode.map(Into::into),
        n_samples: c.n_samples,
    };
    let cfg = ExperimentConfig::load(c.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Stage1 => commands::stage1(&cfg),
        Command::Tilt => commands::tilt(&cfg),
        Command::Fdc => commands::fdc(&cfg),
        Command::Sensitivity => commands::sensitivity(&cfg),
        Command::Verify { grids } => verify::verify(&cfg, &grids),
        Command::Report => commands::report(&cfg),
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
            eprintln!("tailtilt: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}

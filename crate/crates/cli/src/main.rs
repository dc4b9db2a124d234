//! `solenoid`: builds laminates and staircases, certifies hull membership and
//! exports fields.

mod commands;
mod config;
mod descriptor;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::error::CliResult;

#[derive(Parser, Debug)]
#[command(name = "solenoid", version, about = "Divergence-free fields by convex integration")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Grid spacing for csv and vtk export.
    #[arg(long, global = true)]
    grid_h: Option<f64>,
    #[arg(long, global = true)]
    i_max: Option<usize>,
    #[arg(long, global = true)]
    j: Option<usize>,
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Field descriptor for `verify` and `export`.
    #[arg(long, global = true)]
    field: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Csv,
    Vtk,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Laminate between two matrix states on a box.
    Laminate,
    /// Laminate between two Born-Infeld states.
    BiLaminate,
    /// Classify points against the hull bounds.
    HullCheck,
    /// Decompose points into points of the Born-Infeld manifold.
    Decompose,
    /// Build and certify an in-approximation.
    InApprox,
    /// Run the staircase on the unit cube.
    Staircase,
    /// Stitch staircases over piecewise-constant data and test weak* convergence.
    Stitch,
    /// Re-derive the certificates of a stored field.
    Verify,
    /// Check the symbol rank and wave-cone witnesses.
    SymbolCheck,
    /// Write a stored field as json, csv or vtk.
    Export,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Laminate => "laminate",
            Command::BiLaminate => "bi-laminate",
            Command::HullCheck => "hull-check",
            Command::Decompose => "decompose",
            Command::InApprox => "in-approx",
            Command::Staircase => "staircase",
            Command::Stitch => "stitch",
            Command::Verify => "verify",
            Command::SymbolCheck => "symbol-check",
            Command::Export => "export",
        }
    }
}

fn run(cli: &Cli) -> CliResult<Vec<String>> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.merge(&RunConfig {
        seed: cli.seed,
        out: cli.out.clone(),
        format: cli.format.map(|f| format!("{f:?}").to_lowercase()),
        grid_h: cli.grid_h,
        i_max: cli.i_max,
        j: cli.j,
        tau: cli.tau,
        delta: cli.delta,
        field: cli.field.clone(),
        ..RunConfig::default()
    });
    let ctx = commands::Ctx::new(cli.command.name(), cfg)?;
    match cli.command {
        Command::Laminate => commands::laminate(&ctx),
        Command::BiLaminate => commands::bi_laminate(&ctx),
        Command::HullCheck => commands::hull_check(&ctx),
        Command::Decompose => commands::decompose(&ctx),
        Command::InApprox => commands::in_approx(&ctx),
        Command::Staircase => commands::staircase(&ctx),
        Command::Stitch => commands::stitch(&ctx),
        Command::Verify => commands::verify(&ctx),
        Command::SymbolCheck => commands::symbol_check(&ctx),
        Command::Export => commands::export(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SOLENOID_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(fails) if fails.is_empty() => ExitCode::SUCCESS,
        Ok(fails) => {
            for f in &fails {
                eprintln!("certificate failed: {f}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

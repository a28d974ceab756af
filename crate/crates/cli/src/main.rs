//! `vpfp`: runs the low-rank and full-tensor VPFP solvers and writes CSV/JSON
//! artifacts.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vpfp_core::{ScenarioConfig, ScenarioKind, VpfpError};

#[derive(Parser)]
#[command(
    name = "vpfp",
    version,
    about = "Low-rank IMEX solver for the Vlasov-Poisson-Fokker-Planck system"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single simulation.
    Run(Overrides),
    /// Successive-difference time-step convergence ladder.
    Convergence(Overrides),
    /// Global AP error history at a fixed step.
    Ap(Overrides),
    /// Mixed-regime comparison of the low-rank and full-tensor solvers.
    Mixed(Overrides),
    /// Bump-on-tail comparison of the low-rank and full-tensor solvers.
    Bump(Overrides),
    /// Randomized audits and residual certificates.
    Verify(Overrides),
}

#[derive(Args, Debug, Clone, Default)]
pub struct Overrides {
    /// Flat `key = value` config file (a manifest.json is accepted too).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<ScenarioKind>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    nv: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    order: Option<u8>,
    #[arg(long)]
    solver: Option<vpfp_core::SolverKind>,
    /// Output directory; overrides VPFP_OUT and the config file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed of the randomized verification trials.
    #[arg(long)]
    seed: Option<u64>,
}

impl Overrides {
    fn resolve(&self, default: ScenarioKind) -> vpfp_core::Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(path) => ScenarioConfig::load(path, default)?,
            None => ScenarioConfig::defaults(default),
        };
        if let Some(kind) = self.scenario {
            if self.config.is_none() {
                cfg = ScenarioConfig::defaults(kind);
            }
            cfg.scenario = kind;
        }
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        apply!(nx, nv, rank, dt, t_final, eps, order, solver, seed);
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        } else if let Some(env) = std::env::var_os("VPFP_OUT") {
            cfg.out = Some(PathBuf::from(env));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(o) => commands::run(o.resolve(ScenarioKind::NoneqConv)),
        Command::Convergence(o) => commands::convergence(o.resolve(ScenarioKind::NoneqConv)),
        Command::Ap(o) => commands::ap(o.resolve(ScenarioKind::ApTest)),
        Command::Mixed(o) => commands::comparison(
            o.resolve(ScenarioKind::MixedRegime),
            ScenarioKind::MixedRegime,
        ),
        Command::Bump(o) => commands::comparison(
            o.resolve(ScenarioKind::BumpOnTail),
            ScenarioKind::BumpOnTail,
        ),
        Command::Verify(o) => commands::verify(o.resolve(ScenarioKind::NoneqConv)),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &VpfpError) -> u8 {
    if e.is_config() {
        2
    } else {
        1
    }
}

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Core(ebara::Error),
    Config(String),
    Io(std::io::Error),
    Verification(String),
}

impl CliError {
    fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::Config(_) => "ConfigError",
            CliError::Io(_) => "IoError",
            CliError::Verification(_) => "VerificationFailed",
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Config(m) | CliError::Verification(m) => f.write_str(m),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<ebara::Error> for CliError {
    fn from(e: ebara::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

/// Model reduction and LQR stabilization of index-2 descriptor systems.
#[derive(Debug, Parser)]
#[command(name = "ebara", version)]
struct Cli {
    /// TOML file with default knobs; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Disable data-parallel kernels.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic system bundle.
    Gen(GenArgs),
    /// Reduce a system and write the reduced matrices.
    Reduce(ReduceArgs),
    /// Frequency sweep of full versus reduced transfer function.
    Bode(BodeArgs),
    /// Solve the projected Riccati equation and form the feedback gain.
    Riccati(RiccatiCmd),
    /// Riccati gain plus reduction and sweep of the closed loop.
    Stabilize(StabilizeArgs),
    /// Implicit-Euler time simulation, optionally with feedback and a reduced model.
    Simulate(SimulateArgs),
    /// Dense oracle checks on a small bundle.
    #[command(hide = true)]
    Verify(SystemArg),
}

#[derive(Debug, Args)]
struct SystemArg {
    /// Bundle manifest or directory containing one.
    #[arg(long)]
    system: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    nv: Option<usize>,
    #[arg(long)]
    np: Option<usize>,
    #[arg(long)]
    nb: Option<usize>,
    #[arg(long)]
    nc: Option<usize>,
    /// Number of unstable modes (0 for a stable system).
    #[arg(long)]
    unstable: Option<usize>,
    /// Real part the unstable modes must reach.
    #[arg(long)]
    shift: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Build on an N×N staggered grid instead of random sparsity (sets nv, np).
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    viscosity: Option<f64>,
    #[arg(long)]
    convection: Option<f64>,
}

#[derive(Debug, Args)]
struct OrderArgs {
    /// Arnoldi steps; the reduced order is 2·m·n_b.
    #[arg(long)]
    m: Option<usize>,
    /// `state-space` or `generalized`.
    #[arg(long)]
    form: Option<String>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    omega_lo: Option<f64>,
    #[arg(long)]
    omega_hi: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
}

#[derive(Debug, Args)]
struct RiccatiArgs {
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    dtol: Option<f64>,
    #[arg(long)]
    m_max: Option<usize>,
    /// Solve the reduced Riccati equation every k-th iteration.
    #[arg(long)]
    check_every: Option<usize>,
}

#[derive(Debug, Args)]
struct ReduceArgs {
    #[command(flatten)]
    system: SystemArg,
    #[command(flatten)]
    order: OrderArgs,
}

#[derive(Debug, Args)]
struct BodeArgs {
    #[command(flatten)]
    system: SystemArg,
    #[command(flatten)]
    order: OrderArgs,
    #[command(flatten)]
    sweep: SweepArgs,
}

#[derive(Debug, Args)]
struct RiccatiCmd {
    #[command(flatten)]
    system: SystemArg,
    #[command(flatten)]
    riccati: RiccatiArgs,
}

#[derive(Debug, Args)]
struct StabilizeArgs {
    #[command(flatten)]
    system: SystemArg,
    #[command(flatten)]
    riccati: RiccatiArgs,
    #[command(flatten)]
    order: OrderArgs,
    #[command(flatten)]
    sweep: SweepArgs,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    system: SystemArg,
    /// Dense n_b × n_v gain in Matrix Market array format.
    #[arg(long)]
    gain: Option<PathBuf>,
    /// `zero`, `const:<v>`, `step:<t>:<v>` or a CSV file with columns t,u_1,...
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Also simulate the reduced model of this many Arnoldi steps.
    #[arg(long)]
    m: Option<usize>,
}

impl Cli {
    fn flags(&self) -> RunConfig {
        let mut c = RunConfig {
            out: self.out.clone(),
            sequential: self.sequential.then_some(true),
            ..RunConfig::default()
        };
        let order = |c: &mut RunConfig, o: &OrderArgs| {
            c.m = o.m;
            c.form = o.form.clone();
        };
        let sweep = |c: &mut RunConfig, s: &SweepArgs| {
            c.omega_lo = s.omega_lo;
            c.omega_hi = s.omega_hi;
            c.points = s.points;
        };
        let riccati = |c: &mut RunConfig, r: &RiccatiArgs| {
            c.tol = r.tol;
            c.dtol = r.dtol;
            c.m_max = r.m_max;
            c.check_every = r.check_every;
        };
        match &self.command {
            Command::Gen(g) => {
                c.nv = g.nv;
                c.np = g.np;
                c.nb = g.nb;
                c.nc = g.nc;
                c.unstable = g.unstable;
                c.shift = g.shift;
                c.seed = g.seed;
                c.grid = g.grid;
                c.viscosity = g.viscosity;
                c.convection = g.convection;
            }
            Command::Reduce(r) => {
                c.system = r.system.system.clone();
                order(&mut c, &r.order);
            }
            Command::Bode(b) => {
                c.system = b.system.system.clone();
                order(&mut c, &b.order);
                sweep(&mut c, &b.sweep);
            }
            Command::Riccati(r) => {
                c.system = r.system.system.clone();
                riccati(&mut c, &r.riccati);
            }
            Command::Stabilize(s) => {
                c.system = s.system.system.clone();
                riccati(&mut c, &s.riccati);
                order(&mut c, &s.order);
                sweep(&mut c, &s.sweep);
            }
            Command::Simulate(s) => {
                c.system = s.system.system.clone();
                c.gain = s.gain.clone();
                c.input = s.input.clone();
                c.h = s.h;
                c.horizon = s.horizon;
                c.m = s.m;
            }
            Command::Verify(v) => c.system = v.system.clone(),
        }
        c
    }

    fn name(&self) -> &'static str {
        match self.command {
            Command::Gen(_) => "gen",
            Command::Reduce(_) => "reduce",
            Command::Bode(_) => "bode",
            Command::Riccati(_) => "riccati",
            Command::Stabilize(_) => "stabilize",
            Command::Simulate(_) => "simulate",
            Command::Verify(_) => "verify",
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let cfg = file.overlay(&cli.flags());
    cfg.validate()?;
    std::fs::create_dir_all(cfg.out_dir())?;
    commands::run(cli.name(), &cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpg_cli::{run_adaptive, run_convergence, run_stability, write_tables, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "dpg", about = "DPG transport solver experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Error against best approximation on a sequence of uniform meshes.
    Convergence(Flags),
    /// Adaptive refinement driven by the residual indicators.
    Adaptive(Flags),
    /// Discrete inf-sup constants over mesh levels and subgrid depths.
    Stability(Flags),
}

#[derive(Args)]
struct Flags {
    /// key = value configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    subgrid: Option<usize>,
    #[arg(long)]
    trace_mode: Option<String>,
    /// Finest level; meshes have 2^level cells per side.
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    theta: Option<f64>,
}

impl Flags {
    fn config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| CliError::Io { path: p.clone(), source })?;
                RunConfig::parse(&text)?
            }
            None => RunConfig::default(),
        };
        let overrides = [
            ("experiment", self.experiment.clone()),
            ("m", self.m.map(|v| v.to_string())),
            ("subgrid", self.subgrid.map(|v| v.to_string())),
            ("trace_mode", self.trace_mode.clone()),
            ("levels", self.levels.map(|v| v.to_string())),
            ("iters", self.iters.map(|v| v.to_string())),
            ("theta", self.theta.map(|v| v.to_string())),
        ];
        for (k, v) in overrides {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        Ok(cfg)
    }
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("DPG_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| CliError::Invalid(format!("DPG_THREADS = `{v}` is not a thread count")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Invalid(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let (tables, cfg) = match &cli.command {
        Command::Convergence(f) => {
            let cfg = f.config()?;
            (run_convergence(&cfg)?, cfg)
        }
        Command::Adaptive(f) => {
            let cfg = f.config()?;
            (vec![run_adaptive(&cfg)?], cfg)
        }
        Command::Stability(f) => {
            let cfg = f.config()?;
            (vec![run_stability(&cfg)?], cfg)
        }
    };
    let text = write_tables(cfg.out.as_deref(), &tables)?;
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dpg: {e}");
            ExitCode::FAILURE
        }
    }
}

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::SVector;

use lis_core::error::Error;
use lis_core::harness::{
    acceptance, csv_io, full_sweep, make_scenario, reduced_sweep, reference_discharge, run_scenario, ExperimentConfig,
    Plateau,
};
use lis_core::integrator::simulate;
use lis_core::model::{CurrentProfile, FullModel, FullState, ModelOrder, ReducedModel};

/// Lithium-sulfur cell model: simulation, observability and estimation.
#[derive(Debug, Parser)]
#[command(name = "lis", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    model: Option<Order>,

    #[arg(long, global = true, value_enum)]
    plateau: Option<PlateauArg>,

    /// `constant:<A>`, `sinusoidal:<offset>,<amp>,<omega>` or `file:<path>`.
    #[arg(long, global = true)]
    profile: Option<String>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file; a directory for `acceptance`. Standard output if omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Trajectory CSV from the initial state.
    Simulate,
    /// Checkpoint standard-deviation bounds CSV.
    Observability,
    /// Filter run against synthetic measurements.
    Estimate,
    /// Runs the acceptance suite.
    Acceptance,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Order {
    Full,
    Reduced,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PlateauArg {
    High,
    Low,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::Parse { .. } => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| match e {
            Error::Io(m) => Failure::Usage(m),
            other => other.into(),
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(order) = cli.model {
        cfg.scenario.model_order = match order {
            Order::Full => ModelOrder::Full,
            Order::Reduced => ModelOrder::Reduced,
        };
    }
    if let Some(p) = cli.plateau {
        cfg.scenario.plateau = match p {
            PlateauArg::High => Plateau::High,
            PlateauArg::Low => Plateau::Low,
        };
    }
    if let Some(spec) = &cli.profile {
        cfg.scenario.profile = csv_io::parse_profile(spec).map_err(|e| Failure::Usage(format!("--profile: {e}")))?;
    }
    if let Some(seed) = cli.seed {
        cfg.scenario.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output(out: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(cli: &Cli) -> Result<ExitCode, Failure> {
    let cfg = load(cli)?;
    match cli.command {
        Command::Simulate => simulate_cmd(&cfg, &cli.out),
        Command::Observability => observability_cmd(&cfg, cli.profile.is_some(), &cli.out),
        Command::Estimate => estimate_cmd(&cfg, &cli.out),
        Command::Acceptance => acceptance_cmd(&cfg, cli.out.as_deref()),
    }
}

fn simulate_cmd(cfg: &ExperimentConfig, out: &Option<PathBuf>) -> Result<ExitCode, Failure> {
    let x0 = FullState::initial(&cfg.model);
    let profile = &cfg.scenario.profile;
    let mut w = output(out)?;
    match cfg.scenario.model_order {
        ModelOrder::Full => {
            let model = FullModel::new(&cfg.model);
            let traj = simulate(&model, &x0.to_vector(), profile, &cfg.integrator)?;
            csv_io::write_trajectory(&mut w, &model, &traj)?;
        }
        ModelOrder::Reduced => {
            let model = ReducedModel::new(&cfg.model, x0.total_mass());
            let traj = simulate(&model, &SVector::<f64, 5>::from_column_slice(&x0.m), profile, &cfg.integrator)?;
            csv_io::write_trajectory(&mut w, &model, &traj)?;
        }
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn observability_cmd(cfg: &ExperimentConfig, custom_profile: bool, out: &Option<PathBuf>) -> Result<ExitCode, Failure> {
    let reference = reference_discharge(cfg)?;
    let profile = if custom_profile {
        cfg.scenario.profile.clone()
    } else {
        CurrentProfile::constant(cfg.scenario.reference_current)
    };
    let mut w = output(out)?;
    match cfg.scenario.model_order {
        ModelOrder::Full => {
            let sweep = full_sweep(cfg, &reference, &profile, &cfg.observability)?;
            csv_io::write_observability(&mut w, &sweep.report)?;
        }
        ModelOrder::Reduced => {
            let sweep = reduced_sweep(cfg, &reference, &profile, &cfg.observability)?;
            csv_io::write_observability(&mut w, &sweep.report)?;
        }
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn estimate_cmd(cfg: &ExperimentConfig, out: &Option<PathBuf>) -> Result<ExitCode, Failure> {
    let reference = reference_discharge(cfg)?;
    let scenario = make_scenario(cfg, &reference, cfg.scenario.plateau, cfg.scenario.model_order)?;
    let report = run_scenario(cfg, &scenario)?;
    let mut w = output(out)?;
    csv_io::write_estimation(&mut w, &report)?;
    w.flush()?;
    let last = report.len() - 1;
    let e = report.errors(last);
    eprintln!(
        "{} model, {} plateau: t = {} s, innovation RMS {:.3e} V",
        scenario.order,
        scenario.plateau,
        report.times[last],
        report.innovation_rms(report.times[0])
    );
    eprintln!(
        "final |error| m1..m5 [{}] g, msp {:.4e} g, alpha {:.4e}",
        e[..5].iter().map(|v| format!("{v:.4e}")).collect::<Vec<_>>().join(", "),
        e[5],
        e[6]
    );
    match report.failure {
        Some(f) => Err(Failure::Runtime(format!("filter stopped: {f}"))),
        None => Ok(ExitCode::SUCCESS),
    }
}

fn acceptance_cmd(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExitCode, Failure> {
    let report = acceptance::run(cfg)?;
    if let Some(dir) = out {
        report.write_to(dir)?;
    }
    print!("{}", report.summary());
    let failed = report.criteria.iter().filter(|c| !c.passed).count();
    println!("{} of {} criteria passed", report.criteria.len() - failed, report.criteria.len());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

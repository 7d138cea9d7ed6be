use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use projopt::nlpsolver::SolverOptions;
use projopt::simulate::{Integrator, DEFAULT_DT};
use projopt_cli::commands::{
    cmd_check, cmd_gains, cmd_plan, cmd_simulate, cmd_size_report, exit_code, GainArgs, Gates, PlanArgs, SimulateArgs,
    DEFAULT_GAIN_STEP,
};
use projopt_cli::{CliError, Overrides};

/// Trajectory optimization for legged robots with null-space projected dynamics.
///
/// Exit codes: 0 success; 1 error or failed solve; 2 feasible but not optimal
/// (`plan`) or a monitoring gate exceeded (`simulate`).
#[derive(Parser)]
#[command(name = "projopt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a model and task without solving.
    Check(Files),
    /// Solve a task; writes plan.json, trajectory.csv and plot.py.
    Plan(PlanCmd),
    /// Roll a plan out open- or closed-loop and check drift, cone and penetration gates.
    Simulate(SimulateCmd),
    /// Write the TVLQR gain schedule of a plan as CSV.
    Gains(GainsCmd),
    /// Print per-node decision variable and constraint counts.
    SizeReport(Files),
}

#[derive(Args)]
struct Files {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    task: PathBuf,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Args)]
struct OverrideArgs {
    /// Nodes in every phase.
    #[arg(long)]
    nodes: Option<usize>,
    /// Friction coefficient of every phase.
    #[arg(long)]
    mu: Option<f64>,
}

impl OverrideArgs {
    fn get(&self) -> Overrides {
        Overrides {
            nodes: self.nodes,
            friction: self.mu,
        }
    }
}

#[derive(Args)]
struct PlanCmd {
    #[command(flatten)]
    files: Files,
    /// Output directory.
    #[arg(long, short, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = SolverOptions::default().feasibility_tol)]
    feasibility_tol: f64,
    #[arg(long, default_value_t = SolverOptions::default().optimality_tol)]
    optimality_tol: f64,
    #[arg(long, default_value_t = SolverOptions::default().max_iterations)]
    max_iterations: usize,
    /// Also store TVLQR gains in the bundle.
    #[arg(long)]
    gains: bool,
    /// Largest spacing of the gain grid, seconds.
    #[arg(long, default_value_t = DEFAULT_GAIN_STEP)]
    gain_step: f64,
}

#[derive(Args)]
struct BundleArgs {
    /// plan.json written by `plan`.
    #[arg(long)]
    plan: PathBuf,
    /// Model file, if it moved since planning (its hash must still match).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Task file, if it moved since planning (its hash must still match).
    #[arg(long)]
    task: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum IntegratorArg {
    Projected,
    Kkt,
}

#[derive(Args)]
struct SimulateCmd {
    #[command(flatten)]
    bundle: BundleArgs,
    /// Rollout CSV; a JSON report is written beside it.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Track the plan with TVLQR feedback.
    #[arg(long)]
    closed_loop: bool,
    /// Relative initial-state perturbation, e.g. 0.01.
    #[arg(long, default_value_t = 0.0)]
    perturb: f64,
    #[arg(long, default_value_t = DEFAULT_DT)]
    dt: f64,
    /// Defaults to the plan horizon.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long, value_enum, default_value = "projected")]
    integrator: IntegratorArg,
    #[arg(long, default_value_t = DEFAULT_GAIN_STEP)]
    gain_step: f64,
    #[arg(long, default_value_t = Gates::default().max_drift)]
    max_drift: f64,
    #[arg(long, default_value_t = Gates::default().max_cone_violation)]
    max_cone_violation: f64,
    #[arg(long, default_value_t = Gates::default().max_penetration)]
    max_penetration: f64,
}

#[derive(Args)]
struct GainsCmd {
    #[command(flatten)]
    bundle: BundleArgs,
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_GAIN_STEP)]
    gain_step: f64,
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<u8, CliError> {
    match cli.command {
        Command::Check(f) => cmd_check(&f.model, &f.task, &f.overrides.get(), out).map(|_| 0),
        Command::SizeReport(f) => cmd_size_report(&f.model, &f.task, &f.overrides.get(), out).map(|_| 0),
        Command::Plan(p) => {
            let args = PlanArgs {
                model: p.files.model,
                task: p.files.task,
                out_dir: p.out,
                overrides: p.files.overrides.get(),
                solver: SolverOptions {
                    feasibility_tol: p.feasibility_tol,
                    optimality_tol: p.optimality_tol,
                    max_iterations: p.max_iterations,
                    ..Default::default()
                },
                gains: p.gains,
                gain_step: p.gain_step,
            };
            cmd_plan(&args, out).map(|b| exit_code(b.result.status))
        }
        Command::Simulate(s) => {
            let args = SimulateArgs {
                plan: s.bundle.plan,
                model: s.bundle.model,
                task: s.bundle.task,
                out: s.out,
                closed_loop: s.closed_loop,
                perturb: s.perturb,
                dt: s.dt,
                duration: s.duration,
                integrator: match s.integrator {
                    IntegratorArg::Projected => Integrator::Projected,
                    IntegratorArg::Kkt => Integrator::Kkt,
                },
                gain_step: s.gain_step,
                gates: Gates {
                    max_drift: s.max_drift,
                    max_cone_violation: s.max_cone_violation,
                    max_penetration: s.max_penetration,
                },
            };
            cmd_simulate(&args, out).map(|(r, _)| if r.passed { 0 } else { 2 })
        }
        Command::Gains(g) => {
            let args = GainArgs {
                plan: g.bundle.plan,
                model: g.bundle.model,
                task: g.bundle.task,
                out: g.out,
                step: g.gain_step,
            };
            cmd_gains(&args, out).map(|_| 0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut stdout = io::stdout().lock();
    match run(cli, &mut stdout) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let _ = stdout.flush();
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

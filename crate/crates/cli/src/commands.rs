use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use projopt::nlpsolver::{solve, NlpProblem, SolverOptions, SolverStatus};
use projopt::simulate::{self, drift_report, perturb_state, DriftReport, Integrator, Policy, RolloutLog, RolloutOptions};
use projopt::transcription::size_report;
use projopt::tvlqr::{synthesize, GainSchedule, LqrWeights};
use serde::{Deserialize, Serialize};

use crate::bundle::{Inputs, Overrides, PlanBundle};
use crate::csvio;
use crate::error::{CliError, Result};
use crate::plot::plot_script;

/// Reference per-node sizes for the single-phase quadruped task.
pub const REFERENCE_PROJECTION_VARIABLES: usize = 49;
pub const REFERENCE_PROJECTION_CONSTRAINTS: usize = 48;
pub const REFERENCE_CENTROIDAL_VARIABLES: usize = 76;
pub const REFERENCE_CENTROIDAL_CONSTRAINTS: usize = 63;

pub const DEFAULT_GAIN_STEP: f64 = 0.01;

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(CliError::io(path))?))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(CliError::io(path))
}

/// Parses both files and assembles the problem without solving.
pub fn cmd_check(model: &Path, task: &Path, overrides: &Overrides, out: &mut dyn Write) -> Result<()> {
    let inputs = Inputs::load(model, task, overrides)?;
    let p = inputs.transcription()?;
    let m = &inputs.model;
    writeln!(out, "model `{}`: {} links, nv {}, nu {}, {} contact points", m.name(), m.links().len(), m.nv(), m.nu(), m.contact_points().len()).ok();
    for ph in &inputs.task.phases {
        let labels: Vec<&str> = ph.contacts.iter().map(|&c| m.contact_points()[c].label.as_str()).collect();
        writeln!(
            out,
            "phase `{}`: {} nodes, duration {}..{} s, contacts [{}]",
            ph.name,
            ph.nodes,
            ph.duration.0,
            ph.duration.1,
            labels.join(" ")
        )
        .ok();
    }
    writeln!(out, "task `{}`: {} variables, {} constraints", inputs.task.name, p.n_vars(), p.n_cons()).ok();
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PlanArgs {
    pub model: PathBuf,
    pub task: PathBuf,
    pub out_dir: PathBuf,
    pub overrides: Overrides,
    pub solver: SolverOptions,
    /// Also synthesize and store TVLQR gains.
    pub gains: bool,
    pub gain_step: f64,
}

pub fn exit_code(status: SolverStatus) -> u8 {
    match status {
        SolverStatus::Optimal => 0,
        SolverStatus::FeasibleNotOptimal => 2,
        SolverStatus::Infeasible | SolverStatus::IterationLimit => 1,
    }
}

/// Solves the task and writes `plan.json`, `trajectory.csv` and `plot.py`.
pub fn cmd_plan(args: &PlanArgs, out: &mut dyn Write) -> Result<PlanBundle> {
    let inputs = Inputs::load(&args.model, &args.task, &args.overrides)?;
    let p = inputs.transcription()?;
    let y0 = p.initial_guess()?;
    let result = solve(&p, &y0, &args.solver)?;
    let y = DVector::from_column_slice(&result.y);
    let trajectory = p.solution(&y)?;
    let defect = p.defects(&y)?.amax();
    let mut bundle = PlanBundle::new(&inputs, args.overrides, args.solver, result, trajectory);
    if args.gains {
        bundle.gains = Some(gains_for(&inputs, &bundle, args.gain_step)?);
    }

    fs::create_dir_all(&args.out_dir).map_err(CliError::io(&args.out_dir))?;
    bundle.save(&args.out_dir.join("plan.json"))?;
    csvio::write_trajectory(create(&args.out_dir.join("trajectory.csv"))?, &inputs.model, &bundle.trajectory)?;
    write_text(&args.out_dir.join("plot.py"), &plot_script("trajectory.csv", &["rollout.csv"]))?;

    let r = &bundle.result;
    writeln!(out, "status      {}", r.status).ok();
    writeln!(out, "objective   {:.9e}", r.objective).ok();
    writeln!(out, "violation   {:.3e}", r.violation).ok();
    writeln!(out, "max defect  {defect:.3e}").ok();
    writeln!(out, "kkt error   {:.3e}", r.kkt_error).ok();
    writeln!(out, "iterations  {}", r.iterations).ok();
    writeln!(out, "horizon     {:.6} s", bundle.trajectory.horizon()).ok();
    writeln!(out, "wrote       {}", args.out_dir.display()).ok();
    Ok(bundle)
}

fn gains_for(inputs: &Inputs, bundle: &PlanBundle, step: f64) -> Result<GainSchedule> {
    let weights = LqrWeights::from_cost(&inputs.task.cost);
    let model = inputs.task.effective_model(&inputs.model);
    let (schedule, _, _) = synthesize(&model, &bundle.trajectory, &weights, step)?;
    Ok(schedule)
}

/// Loads a bundle and re-checks it against the files it was built from.
pub fn open_bundle(path: &Path, model: Option<&Path>, task: Option<&Path>) -> Result<(PlanBundle, Inputs)> {
    let bundle = PlanBundle::load(path)?;
    let inputs = bundle.inputs(model, task)?;
    let problem = inputs.transcription()?;
    let v = bundle.recomputed_violation(&problem)?;
    if (v - bundle.result.violation).abs() > 1e-12 {
        return Err(CliError::Provenance(format!(
            "stored violation {:e} does not match recomputed {v:e}",
            bundle.result.violation
        )));
    }
    Ok((bundle, inputs))
}

#[derive(Debug, Clone)]
pub struct GainArgs {
    pub plan: PathBuf,
    pub model: Option<PathBuf>,
    pub task: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub step: f64,
}

/// Writes the TVLQR gain schedule as CSV (next to the bundle by default).
pub fn cmd_gains(args: &GainArgs, out: &mut dyn Write) -> Result<GainSchedule> {
    let (bundle, inputs) = open_bundle(&args.plan, args.model.as_deref(), args.task.as_deref())?;
    let schedule = match &bundle.gains {
        Some(g) => g.clone(),
        None => gains_for(&inputs, &bundle, args.step)?,
    };
    let path = args.out.clone().unwrap_or_else(|| sibling(&args.plan, "gains.csv"));
    csvio::write_gains(create(&path)?, &inputs.model, &schedule)?;
    let (r, c) = schedule.gains.first().map_or((0, 0), |k| k.shape());
    writeln!(out, "{} knots, K is {r}x{c}; wrote {}", schedule.times.len(), path.display()).ok();
    Ok(schedule)
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub plan: PathBuf,
    pub model: Option<PathBuf>,
    pub task: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub closed_loop: bool,
    /// Relative size of the initial-state perturbation.
    pub perturb: f64,
    pub dt: f64,
    pub duration: Option<f64>,
    pub integrator: Integrator,
    pub gain_step: f64,
    pub gates: Gates,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gates {
    pub max_drift: f64,
    pub max_cone_violation: f64,
    pub max_penetration: f64,
}

impl Default for Gates {
    fn default() -> Self {
        Gates {
            max_drift: 1e-4,
            max_cone_violation: 1e-6,
            max_penetration: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub closed_loop: bool,
    pub perturbation: f64,
    pub drift: DriftReport,
    /// `‖x(t_f) - x*(t_f)‖`.
    pub terminal_deviation: f64,
    pub gates: Gates,
    pub passed: bool,
}

impl SimulationReport {
    pub fn new(log: &RolloutLog, closed_loop: bool, perturbation: f64, gates: Gates) -> Self {
        let drift = drift_report(log);
        let passed = drift.drift.value <= gates.max_drift
            && drift.cone_violation.value <= gates.max_cone_violation
            && drift.penetration.value <= gates.max_penetration;
        SimulationReport {
            closed_loop,
            perturbation,
            drift,
            terminal_deviation: log.tracking_error.last().copied().unwrap_or(0.0),
            gates,
            passed,
        }
    }
}

/// Rolls the plan out and writes the log CSV plus a JSON report.
pub fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<(SimulationReport, RolloutLog)> {
    let (bundle, inputs) = open_bundle(&args.plan, args.model.as_deref(), args.task.as_deref())?;
    let model = inputs.task.effective_model(&inputs.model);
    let traj = &bundle.trajectory;
    let schedule = if args.closed_loop {
        Some(match &bundle.gains {
            Some(g) => g.clone(),
            None => gains_for(&inputs, &bundle, args.gain_step)?,
        })
    } else {
        None
    };
    let policy = schedule.as_ref().map_or(Policy::OpenLoop, Policy::Feedback);
    let mut x0 = traj.states[0].clone();
    if args.perturb != 0.0 {
        x0 = perturb_state(&model, &x0, &traj.phase_contacts[0], args.perturb)?;
    }
    let opts = RolloutOptions {
        dt: args.dt,
        duration: args.duration,
        integrator: args.integrator,
    };
    let log = simulate::rollout(&model, traj, policy, &x0, &opts)?;
    let report = SimulationReport::new(&log, args.closed_loop, args.perturb, args.gates);

    let path = args.out.clone().unwrap_or_else(|| sibling(&args.plan, "rollout.csv"));
    csvio::write_rollout(create(&path)?, &inputs.model, &log)?;
    let report_path = path.with_extension("json");
    let text = serde_json::to_string_pretty(&report).map_err(|source| CliError::Json {
        path: report_path.clone(),
        source,
    })?;
    write_text(&report_path, &(text + "\n"))?;

    let d = &report.drift;
    let mode = if args.closed_loop { "closed loop" } else { "open loop" };
    writeln!(out, "{mode}, perturbation {}, {} samples", args.perturb, log.len()).ok();
    writeln!(out, "max drift           {:.3e} at t = {:.3}", d.drift.value, d.drift.time).ok();
    writeln!(out, "max cone violation  {:.3e} at t = {:.3}", d.cone_violation.value, d.cone_violation.time).ok();
    writeln!(out, "max penetration     {:.3e} at t = {:.3}", d.penetration.value, d.penetration.time).ok();
    writeln!(out, "max contact height  {:.3e} at t = {:.3}", d.contact_height.value, d.contact_height.time).ok();
    writeln!(out, "terminal deviation  {:.3e}", report.terminal_deviation).ok();
    writeln!(out, "gates               {}", if report.passed { "pass" } else { "FAIL" }).ok();
    Ok((report, log))
}

/// Prints per-node problem sizes beside the reference values.
pub fn cmd_size_report(model: &Path, task: &Path, overrides: &Overrides, out: &mut dyn Write) -> Result<()> {
    let inputs = Inputs::load(model, task, overrides)?;
    let r = size_report(&inputs.model, &inputs.task);
    let on = |b: bool| if b { "emitted" } else { "not emitted" };
    let lines = [
        format!("per-node problem size, task `{}` (first phase)", inputs.task.name),
        String::new(),
        format!("decision variables       {:>4}   reference {REFERENCE_PROJECTION_VARIABLES}", r.variables_per_node),
        format!("  state                  {:>4}", inputs.model.nx()),
        format!("  control                {:>4}", inputs.model.nu()),
        "  phase duration (shared)   1".to_owned(),
        String::new(),
        "constraints".to_owned(),
        format!("  defects                {:>4}", r.defects),
        format!("  torque upper           {:>4}", r.torque_upper),
        format!("  torque lower           {:>4}", r.torque_lower),
        format!("  contact height         {:>4}   {}", r.height, on(r.rows.height)),
        format!("  contact velocity       {:>4}   {}", r.velocity, on(r.rows.velocity)),
        format!("  contact acceleration   {:>4}   {}", r.acceleration, on(r.rows.acceleration)),
        format!("  friction cones         {:>4}", r.friction_cones),
        format!("  defects + torque upper {:>4}   reference {REFERENCE_PROJECTION_CONSTRAINTS}", r.core_constraints()),
        format!("  all families           {:>4}", r.all_constraints()),
        format!("  emitted by this task   {:>4}", r.emitted_constraints()),
        String::new(),
        format!(
            "reference centroidal formulation: {REFERENCE_CENTROIDAL_VARIABLES} variables, {REFERENCE_CENTROIDAL_CONSTRAINTS} constraints (reference constants, not computed)"
        ),
        String::new(),
        "note: the reference constraint count matches defects plus one torque row per joint;".to_owned(),
        "it does not itemize contact or friction rows, so those families are listed".to_owned(),
        "separately rather than matched.".to_owned(),
    ];
    for l in lines {
        writeln!(out, "{l}").ok();
    }
    Ok(())
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use projopt::simulate::{Integrator, DEFAULT_DT};
use projopt_cli::commands::{
    cmd_check, cmd_gains, cmd_plan, cmd_simulate, cmd_size_report, GainArgs, Gates, PlanArgs, SimulateArgs,
    DEFAULT_GAIN_STEP,
};
use projopt_cli::csvio::{read_gains, read_rollout, read_trajectory, RolloutTable};
use projopt_cli::{CliError, Overrides, PlanBundle};
use tempfile::TempDir;

fn asset(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets").join(rel)
}

fn plan_args(model: &str, task: PathBuf, out: &Path) -> PlanArgs {
    PlanArgs {
        model: asset(model),
        task,
        out_dir: out.to_path_buf(),
        overrides: Overrides::default(),
        solver: Default::default(),
        gains: false,
        gain_step: DEFAULT_GAIN_STEP,
    }
}

fn sim_args(plan: PathBuf) -> SimulateArgs {
    SimulateArgs {
        plan,
        model: None,
        task: None,
        out: None,
        closed_loop: false,
        perturb: 0.0,
        dt: DEFAULT_DT,
        duration: None,
        integrator: Integrator::Projected,
        gain_step: DEFAULT_GAIN_STEP,
        gates: Gates::default(),
    }
}

fn gain_args(plan: PathBuf) -> GainArgs {
    GainArgs {
        plan,
        model: None,
        task: None,
        out: None,
        step: DEFAULT_GAIN_STEP,
    }
}

fn text(f: impl FnOnce(&mut Vec<u8>)) -> String {
    let mut buf = Vec::new();
    f(&mut buf);
    String::from_utf8(buf).unwrap()
}

fn pendulum_plan(dir: &Path) -> PlanBundle {
    cmd_plan(&plan_args("models/pendulum.model", asset("tasks/pendulum_swing.task"), dir), &mut Vec::new()).unwrap()
}

#[test]
fn size_report_for_the_quadruped() {
    let out = text(|b| {
        cmd_size_report(&asset("models/hyq_approx.model"), &asset("tasks/standing.task"), &Overrides::default(), b).unwrap()
    });
    assert!(out.contains("decision variables         49   reference 49"), "{out}");
    assert!(out.contains("defects + torque upper   48   reference 48"), "{out}");
    assert!(out.contains("76 variables, 63 constraints"), "{out}");
    for family in ["defects", "torque upper", "torque lower", "contact height", "contact velocity", "contact acceleration", "friction cones"] {
        assert!(out.contains(family), "missing {family}");
    }
}

#[test]
fn size_report_for_the_pendulum() {
    let out = text(|b| {
        cmd_size_report(&asset("models/pendulum.model"), &asset("tasks/pendulum_swing.task"), &Overrides::default(), b).unwrap()
    });
    assert!(out.contains("decision variables          4"), "{out}");
    assert!(out.contains("  state                     2"), "{out}");
    assert!(out.contains("  control                   1"), "{out}");
    assert!(out.contains("  defects                   2"), "{out}");
}

#[test]
fn check_reports_bad_tasks_with_their_path() {
    let dir = TempDir::new().unwrap();
    let ok = text(|b| {
        cmd_check(&asset("models/hyq_approx.model"), &asset("tasks/rearing.task"), &Overrides::default(), b).unwrap()
    });
    assert!(ok.contains("phase `hind`"), "{ok}");
    let bad = dir.path().join("bad.task");
    let src = fs::read_to_string(asset("tasks/standing.task")).unwrap().replace("nodes = 6", "nodes = six");
    fs::write(&bad, src).unwrap();
    let err = cmd_check(&asset("models/hyq_approx.model"), &bad, &Overrides::default(), &mut Vec::new()).unwrap_err();
    assert!(err.to_string().contains("bad.task"), "{err}");
}

#[test]
fn overrides_change_nodes_and_friction() {
    let out = text(|b| {
        let o = Overrides { nodes: Some(4), friction: Some(0.8) };
        cmd_check(&asset("models/hyq_approx.model"), &asset("tasks/standing.task"), &o, b).unwrap()
    });
    assert!(out.contains("4 nodes"), "{out}");
}

#[test]
fn pendulum_plan_round_trips_through_csv() {
    let dir = TempDir::new().unwrap();
    let bundle = pendulum_plan(dir.path());
    assert_eq!(bundle.result.status.to_string(), "optimal");
    assert!(dir.path().join("plot.py").exists());

    let model = projopt::model::load_model(asset("models/pendulum.model")).unwrap();
    let table = read_trajectory(fs::File::open(dir.path().join("trajectory.csv")).unwrap(), &model).unwrap();
    assert_eq!(table.times, bundle.trajectory.times);
    assert_eq!(table.states, bundle.trajectory.states);
    assert_eq!(table.controls, bundle.trajectory.controls);

    let reloaded = PlanBundle::load(&dir.path().join("plan.json")).unwrap();
    assert_eq!(reloaded, bundle);

    let plan = dir.path().join("plan.json");
    let (report, log) = cmd_simulate(&sim_args(plan.clone()), &mut Vec::new()).unwrap();
    let back = read_rollout(fs::File::open(dir.path().join("rollout.csv")).unwrap(), &model).unwrap();
    assert_eq!(back, RolloutTable::from_log(&log));
    assert!(dir.path().join("rollout.json").exists());
    assert_eq!(report.drift.penetration.value, 0.0);

    let sched = cmd_gains(&gain_args(plan), &mut Vec::new()).unwrap();
    assert!(sched.gains.iter().all(|k| k.shape() == (1, 2)));
    let g = read_gains(fs::File::open(dir.path().join("gains.csv")).unwrap(), &model).unwrap();
    assert_eq!(g.times, sched.times);
    assert_eq!(g.phases, sched.phases);
    assert_eq!(g.gains, sched.gains);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for d in [&a, &b] {
        pendulum_plan(d.path());
        let plan = d.path().join("plan.json");
        cmd_simulate(&sim_args(plan.clone()), &mut Vec::new()).unwrap();
        cmd_gains(&gain_args(plan), &mut Vec::new()).unwrap();
    }
    for f in ["trajectory.csv", "rollout.csv", "gains.csv", "plot.py"] {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn edited_task_fails_the_provenance_check() {
    let dir = TempDir::new().unwrap();
    let task = dir.path().join("swing.task");
    fs::copy(asset("tasks/pendulum_swing.task"), &task).unwrap();
    cmd_plan(&plan_args("models/pendulum.model", task.clone(), dir.path()), &mut Vec::new()).unwrap();
    let mut src = fs::read_to_string(&task).unwrap();
    src.push_str("# edited\n");
    fs::write(&task, src).unwrap();
    let err = cmd_simulate(&sim_args(dir.path().join("plan.json")), &mut Vec::new()).unwrap_err();
    assert!(matches!(err, CliError::Provenance(_)), "{err}");

    let status = Command::new(env!("CARGO_BIN_EXE_projopt"))
        .args(["simulate", "--plan"])
        .arg(dir.path().join("plan.json"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&status.stderr).contains("provenance"));
}

#[test]
fn tampered_solution_fails_the_violation_recheck() {
    let dir = TempDir::new().unwrap();
    let mut bundle = pendulum_plan(dir.path());
    bundle.result.y[3] += 0.1;
    let plan = dir.path().join("plan.json");
    bundle.save(&plan).unwrap();
    let err = cmd_gains(&gain_args(plan), &mut Vec::new()).unwrap_err();
    assert!(matches!(err, CliError::Provenance(_)), "{err}");
}

#[test]
fn zero_state_weights_give_zero_gains() {
    let dir = TempDir::new().unwrap();
    let task = dir.path().join("lazy.task");
    let src = fs::read_to_string(asset("tasks/pendulum_swing.task"))
        .unwrap()
        .replace("state_weights = 0 0.1", "state_weights = 0 0\nterminal_weights = 0 0");
    fs::write(&task, src).unwrap();
    cmd_plan(&plan_args("models/pendulum.model", task, dir.path()), &mut Vec::new()).unwrap();
    let sched = cmd_gains(&gain_args(dir.path().join("plan.json")), &mut Vec::new()).unwrap();
    assert!(sched.gains.iter().all(|k| k.amax() == 0.0));
}

#[test]
fn binary_exit_codes() {
    let dir = TempDir::new().unwrap();
    let run = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_projopt"))
            .args(args)
            .output()
            .unwrap()
    };
    let model = asset("models/pendulum.model");
    let task = asset("tasks/pendulum_swing.task");
    let out = dir.path().to_str().unwrap();
    let ok = run(&["plan", "--model", model.to_str().unwrap(), "--task", task.to_str().unwrap(), "-o", out]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("status      optimal"));

    let capped = run(&[
        "plan", "--model", model.to_str().unwrap(), "--task", task.to_str().unwrap(), "-o", out, "--max-iterations", "1",
    ]);
    assert_eq!(capped.status.code(), Some(1));

    let missing = run(&["check", "--model", "/nonexistent.model", "--task", task.to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent.model"));
}

#[test]
fn quadruped_standing_gains_are_12_by_36() {
    let dir = TempDir::new().unwrap();
    let bundle = cmd_plan(&plan_args("models/hyq_approx.model", asset("tasks/standing.task"), dir.path()), &mut Vec::new()).unwrap();
    assert_eq!(bundle.result.status.to_string(), "optimal");
    let sched = cmd_gains(&gain_args(dir.path().join("plan.json")), &mut Vec::new()).unwrap();
    assert!(sched.gains.iter().all(|k| k.shape() == (12, 36)));
    let csv = fs::read_to_string(dir.path().join("gains.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header.split(',').filter(|c| c.starts_with("k_")).count(), 36);
}

//! Task files: contact schedule, cost, bounds and boundary conditions.
//!
//! ```text
//! [task]
//! name = standing
//! gravity = 0 0 -9.81                # optional, overrides the model
//!
//! [phase stance]                     # phases run in file order
//! contacts = lf_foot rf_foot lh_foot rh_foot
//! nodes = 6
//! duration = 2 2                     # s, min max
//! friction = 0.5                     # default 0.5
//!
//! [cost]
//! state_weights = 0*6 100*6 ...      # nx diagonal entries
//! control_weights = 1e-3*12          # nu diagonal entries
//! x_nominal = ...                    # nx values (default: boundary initial)
//! u_nominal = gravity                # or nu values; gravity = static compensation at x_nominal
//! terminal_weights = ...             # optional nx entries
//!
//! [bounds]                           # all optional; defaults come from the model
//! x_min = ...
//! x_max = ...
//! u_min = ...
//! u_max = ...
//!
//! [boundary]
//! initial = ...                      # nx values, fixed
//! final_min = ...                    # optional box on the last node
//! final_max = ...
//! final_guess = ...                  # optional target for the initial guess
//!
//! [options]
//! contact_rows = height velocity acceleration   # any subset, or none; `transition`
//!                                                # keeps height rows at phase switches only
//! swing_clearance = 0.02             # optional minimum height of inactive contacts
//! friction_epsilon = 1e-3
//! ```

use std::path::Path;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RobotModel;
use crate::projection;
use crate::text::{self, Entry, Section};

pub const DEFAULT_FRICTION: f64 = 0.5;
pub const DEFAULT_FRICTION_EPSILON: f64 = 1e-3;
/// Per-interval time step bounds used when a phase gives no duration.
pub const DEFAULT_STEP_BOUNDS: (f64, f64) = (0.01, 1.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactPhase {
    pub name: String,
    /// Indices into the model's contact points.
    pub contacts: Vec<usize>,
    pub nodes: usize,
    pub duration: (f64, f64),
    pub friction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub state_weights: DVector<f64>,
    pub control_weights: DVector<f64>,
    pub x_nominal: DVector<f64>,
    pub u_nominal: DVector<f64>,
    pub terminal_weights: Option<DVector<f64>>,
}

/// Which contact kinematic row families are emitted for active contacts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactRows {
    pub height: bool,
    pub velocity: bool,
    pub acceleration: bool,
    /// Height rows only at nodes shared by two phases.
    pub transition: bool,
}

impl ContactRows {
    pub const ALL: ContactRows = ContactRows {
        height: true,
        velocity: true,
        acceleration: true,
        transition: false,
    };
    pub const NONE: ContactRows = ContactRows {
        height: false,
        velocity: false,
        acceleration: false,
        transition: false,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub gravity: Option<Vector3<f64>>,
    pub phases: Vec<ContactPhase>,
    pub cost: CostSpec,
    pub x_min: DVector<f64>,
    pub x_max: DVector<f64>,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    pub initial: DVector<f64>,
    pub final_min: DVector<f64>,
    pub final_max: DVector<f64>,
    pub final_guess: Option<DVector<f64>>,
    pub contact_rows: ContactRows,
    pub swing_clearance: Option<f64>,
    pub friction_epsilon: f64,
}

impl TaskSpec {
    /// Model with the task's gravity applied.
    pub fn effective_model(&self, model: &RobotModel) -> RobotModel {
        match self.gravity {
            Some(g) => model.with_gravity(g),
            None => model.clone(),
        }
    }

    pub fn total_nodes(&self) -> usize {
        self.phases.iter().map(|p| p.nodes).sum::<usize>() + 1 - self.phases.len()
    }

    /// Sets every phase's node count, keeping the task otherwise unchanged.
    pub fn with_nodes(mut self, nodes: usize) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::InvalidTask("a phase needs at least 2 nodes".into()));
        }
        for p in &mut self.phases {
            p.nodes = nodes;
        }
        Ok(self)
    }

    pub fn with_friction(mut self, mu: f64) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::InvalidTask(format!("friction coefficient {mu} must be positive")));
        }
        for p in &mut self.phases {
            p.friction = mu;
        }
        Ok(self)
    }

    pub fn validate(&self, model: &RobotModel) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidTask(m));
        let (nx, nu) = (model.nx(), model.nu());
        if self.phases.is_empty() {
            return invalid("task has no phases".into());
        }
        for p in &self.phases {
            if p.nodes < 2 {
                return invalid(format!("phase `{}` needs at least 2 nodes", p.name));
            }
            let (lo, hi) = p.duration;
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return invalid(format!("phase `{}` duration bounds must satisfy 0 < min <= max", p.name));
            }
            if !(p.friction.is_finite() && p.friction > 0.0) {
                return invalid(format!("phase `{}` friction must be positive", p.name));
            }
            if p.contacts.iter().any(|&c| c >= model.contact_points().len()) {
                return invalid(format!("phase `{}` names a missing contact", p.name));
            }
        }
        for w in self.phases.windows(2) {
            let (mut a, mut b) = (w[0].contacts.clone(), w[1].contacts.clone());
            a.sort_unstable();
            b.sort_unstable();
            if a == b {
                return invalid(format!(
                    "consecutive phases `{}` and `{}` have the same contact set",
                    w[0].name, w[1].name
                ));
            }
        }
        let dims: [(&'static str, usize, usize); 11] = [
            ("state_weights", nx, self.cost.state_weights.len()),
            ("control_weights", nu, self.cost.control_weights.len()),
            ("x_nominal", nx, self.cost.x_nominal.len()),
            ("u_nominal", nu, self.cost.u_nominal.len()),
            ("x_min", nx, self.x_min.len()),
            ("x_max", nx, self.x_max.len()),
            ("u_min", nu, self.u_min.len()),
            ("u_max", nu, self.u_max.len()),
            ("initial", nx, self.initial.len()),
            ("final_min", nx, self.final_min.len()),
            ("final_max", nx, self.final_max.len()),
        ];
        for (what, expected, found) in dims {
            crate::rbd::check_dim(what, expected, found)?;
        }
        if let Some(t) = &self.cost.terminal_weights {
            crate::rbd::check_dim("terminal_weights", nx, t.len())?;
        }
        if let Some(g) = &self.final_guess {
            crate::rbd::check_dim("final_guess", nx, g.len())?;
        }
        let weights = self
            .cost
            .state_weights
            .iter()
            .chain(self.cost.control_weights.iter())
            .chain(self.cost.terminal_weights.iter().flat_map(|t| t.iter()));
        for w in weights {
            if !(w.is_finite() && *w >= 0.0) {
                return invalid(format!("cost weight {w} must be finite and non-negative"));
            }
        }
        let finite = |v: &DVector<f64>| v.iter().all(|x| x.is_finite());
        if !finite(&self.initial) || !finite(&self.cost.x_nominal) || !finite(&self.cost.u_nominal) {
            return invalid("initial state and nominals must be finite".into());
        }
        if !(self.friction_epsilon.is_finite() && self.friction_epsilon > 0.0) {
            return invalid("friction_epsilon must be positive".into());
        }
        for (name, lo, hi) in [
            ("x", &self.x_min, &self.x_max),
            ("u", &self.u_min, &self.u_max),
            ("final", &self.final_min, &self.final_max),
        ] {
            for i in 0..lo.len() {
                if lo[i].is_nan() || hi[i].is_nan() || lo[i] > hi[i] {
                    return Err(Error::InfeasibleBounds {
                        name: format!("{name}[{i}]"),
                        min: lo[i],
                        max: hi[i],
                    });
                }
            }
        }
        Ok(())
    }
}

/// Largest base pitch allowed by the default state box.
pub const DEFAULT_PITCH_LIMIT: f64 = 1.4;

/// Default state box: joint position and velocity limits, free base apart from a
/// pitch limit short of the Euler singularity.
pub fn default_state_bounds(model: &RobotModel) -> (DVector<f64>, DVector<f64>) {
    let nv = model.nv();
    let mut lo = DVector::from_element(2 * nv, f64::NEG_INFINITY);
    let mut hi = DVector::from_element(2 * nv, f64::INFINITY);
    if !model.fixed_base() {
        lo[4] = -DEFAULT_PITCH_LIMIT;
        hi[4] = DEFAULT_PITCH_LIMIT;
    }
    for (j, joint) in model.joints().iter().enumerate() {
        let d = model.joint_dof(j);
        lo[d] = joint.position_limits.0;
        hi[d] = joint.position_limits.1;
        lo[nv + d] = -joint.velocity_limit;
        hi[nv + d] = joint.velocity_limit;
    }
    (lo, hi)
}

/// Default torque box: the extreme values of each joint's torque curves.
pub fn default_control_bounds(model: &RobotModel) -> (DVector<f64>, DVector<f64>) {
    let nu = model.nu();
    let mut lo = DVector::from_element(nu, f64::NEG_INFINITY);
    let mut hi = DVector::from_element(nu, f64::INFINITY);
    for t in model.torque_limits() {
        hi[t.joint] = curve_extreme(&t.max, f64::max);
        if let Some(min) = &t.min {
            lo[t.joint] = curve_extreme(min, f64::min);
        }
    }
    (lo, hi)
}

fn curve_extreme(c: &crate::model::TorqueCurve, pick: fn(f64, f64) -> f64) -> f64 {
    match c {
        crate::model::TorqueCurve::Constant(v) => *v,
        crate::model::TorqueCurve::Table(p) => p.iter().map(|x| x.1).reduce(pick).unwrap_or(0.0),
    }
}

pub fn load_task(path: impl AsRef<Path>, model: &RobotModel) -> Result<TaskSpec> {
    let src = std::fs::read_to_string(path)?;
    parse_task(&src, model)
}

fn vector(e: &Entry, n: usize) -> Result<DVector<f64>> {
    let v = e.numbers()?;
    if v.len() != n {
        return Err(e.err(format!("expected {n} numbers, found {}", v.len())));
    }
    Ok(DVector::from_vec(v))
}

fn single<'a>(sections: &'a [Section], kind: &str) -> Result<Option<&'a Section>> {
    let mut found = sections.iter().filter(|s| s.kind == kind);
    let first = found.next();
    if let Some(dup) = found.next() {
        return Err(crate::error::Error::Parse {
            line: dup.line,
            field: None,
            message: format!("duplicate [{kind}] section"),
        });
    }
    Ok(first)
}

pub fn parse_task(src: &str, model: &RobotModel) -> Result<TaskSpec> {
    let sections = text::parse_sections(src)?;
    let (nx, nu) = (model.nx(), model.nu());
    for s in &sections {
        if !["task", "phase", "cost", "bounds", "boundary", "options"].contains(&s.kind.as_str()) {
            return Err(Error::Parse {
                line: s.line,
                field: None,
                message: format!("unknown section kind `{}`", s.kind),
            });
        }
    }

    let mut name = String::from("task");
    let mut gravity = None;
    if let Some(s) = single(&sections, "task")? {
        s.check_keys(&["name", "gravity"])?;
        if let Some(e) = s.get("name") {
            name = e.word()?.to_owned();
        }
        if let Some(e) = s.get("gravity") {
            gravity = Some(Vector3::from(e.fixed::<3>()?));
        }
    }

    let mut phases = Vec::new();
    for s in sections.iter().filter(|s| s.kind == "phase") {
        s.check_keys(&["contacts", "nodes", "duration", "friction"])?;
        let contacts_entry = s.require("contacts")?;
        let contacts = if contacts_entry.value.trim() == "none" {
            Vec::new()
        } else {
            contacts_entry
                .words()?
                .into_iter()
                .map(|w| {
                    model
                        .contact_index(w)
                        .map_err(|_| contacts_entry.err(format!("unknown contact point `{w}`")))
                })
                .collect::<Result<Vec<_>>>()?
        };
        let nodes_entry = s.require("nodes")?;
        let nodes = nodes_entry.count()?;
        if nodes < 2 {
            return Err(nodes_entry.err("a phase needs at least 2 nodes"));
        }
        let duration = match s.get("duration") {
            Some(e) => {
                let [lo, hi] = e.fixed::<2>()?;
                if !(lo > 0.0 && lo <= hi) {
                    return Err(e.err("duration bounds must satisfy 0 < min <= max"));
                }
                (lo, hi)
            }
            None => {
                let k = (nodes - 1) as f64;
                (DEFAULT_STEP_BOUNDS.0 * k, DEFAULT_STEP_BOUNDS.1 * k)
            }
        };
        let friction = match s.get("friction") {
            Some(e) => e.number()?,
            None => DEFAULT_FRICTION,
        };
        phases.push(ContactPhase {
            name: s.require_name()?.to_owned(),
            contacts,
            nodes,
            duration,
            friction,
        });
    }

    let boundary = single(&sections, "boundary")?
        .ok_or_else(|| Error::InvalidTask("missing [boundary] section".into()))?;
    boundary.check_keys(&["initial", "final_min", "final_max", "final_guess"])?;
    let initial = vector(boundary.require("initial")?, nx)?;
    let final_min = match boundary.get("final_min") {
        Some(e) => vector(e, nx)?,
        None => DVector::from_element(nx, f64::NEG_INFINITY),
    };
    let final_max = match boundary.get("final_max") {
        Some(e) => vector(e, nx)?,
        None => DVector::from_element(nx, f64::INFINITY),
    };
    let final_guess = boundary.get("final_guess").map(|e| vector(e, nx)).transpose()?;

    let (mut x_min, mut x_max) = default_state_bounds(model);
    let (mut u_min, mut u_max) = default_control_bounds(model);
    if let Some(s) = single(&sections, "bounds")? {
        s.check_keys(&["x_min", "x_max", "u_min", "u_max"])?;
        if let Some(e) = s.get("x_min") {
            x_min = vector(e, nx)?;
        }
        if let Some(e) = s.get("x_max") {
            x_max = vector(e, nx)?;
        }
        if let Some(e) = s.get("u_min") {
            u_min = vector(e, nu)?;
        }
        if let Some(e) = s.get("u_max") {
            u_max = vector(e, nu)?;
        }
    }

    let cost_s = single(&sections, "cost")?
        .ok_or_else(|| Error::InvalidTask("missing [cost] section".into()))?;
    cost_s.check_keys(&["state_weights", "control_weights", "x_nominal", "u_nominal", "terminal_weights"])?;
    let x_nominal = match cost_s.get("x_nominal") {
        Some(e) => vector(e, nx)?,
        None => initial.clone(),
    };
    let effective = match gravity {
        Some(g) => model.with_gravity(g),
        None => model.clone(),
    };
    let u_nominal = match cost_s.get("u_nominal") {
        Some(e) if e.value.trim() == "gravity" => {
            let contacts = phases.first().map(|p| p.contacts.clone()).unwrap_or_default();
            gravity_compensation(&effective, &x_nominal, &contacts).map_err(|err| e.err(err.to_string()))?
        }
        Some(e) => vector(e, nu)?,
        None => DVector::zeros(nu),
    };
    let cost = CostSpec {
        state_weights: vector(cost_s.require("state_weights")?, nx)?,
        control_weights: vector(cost_s.require("control_weights")?, nu)?,
        x_nominal,
        u_nominal,
        terminal_weights: cost_s.get("terminal_weights").map(|e| vector(e, nx)).transpose()?,
    };

    let mut contact_rows = ContactRows::ALL;
    let mut swing_clearance = None;
    let mut friction_epsilon = DEFAULT_FRICTION_EPSILON;
    if let Some(s) = single(&sections, "options")? {
        s.check_keys(&["contact_rows", "swing_clearance", "friction_epsilon"])?;
        if let Some(e) = s.get("contact_rows") {
            contact_rows = ContactRows::NONE;
            for w in e.words()? {
                match w {
                    "height" => contact_rows.height = true,
                    "velocity" => contact_rows.velocity = true,
                    "acceleration" => contact_rows.acceleration = true,
                    "transition" => contact_rows.transition = true,
                    "none" => {}
                    other => return Err(e.err(format!("unknown contact row family `{other}`"))),
                }
            }
        }
        if let Some(e) = s.get("swing_clearance") {
            swing_clearance = Some(e.number()?);
        }
        if let Some(e) = s.get("friction_epsilon") {
            friction_epsilon = e.number()?;
        }
    }

    let task = TaskSpec {
        name,
        gravity,
        phases,
        cost,
        x_min,
        x_max,
        u_min,
        u_max,
        initial,
        final_min,
        final_max,
        final_guess,
        contact_rows,
        swing_clearance,
        friction_epsilon,
    };
    task.validate(model)?;
    Ok(task)
}

/// Joint torques holding state `x` in place with the given contacts.
pub fn gravity_compensation(model: &RobotModel, x: &DVector<f64>, contacts: &[usize]) -> Result<DVector<f64>> {
    let nv = model.nv();
    crate::rbd::check_dim("x", 2 * nv, x.len())?;
    let q = x.rows(0, nv).into_owned();
    let qd = x.rows(nv, nv).into_owned();
    let (tau, _) = projection::constrained_inverse_dynamics(model, &q, &qd, &DVector::zeros(nv), contacts)?;
    Ok(tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;

    fn pendulum() -> RobotModel {
        parse_model(include_str!("../../../../assets/models/pendulum.model")).unwrap()
    }

    const SWING: &str = "
[task]
name = swing

[phase free]
contacts = none
nodes = 10
duration = 1 3

[cost]
state_weights = 0 0.1
control_weights = 0.01
x_nominal = 3.141592653589793 0

[boundary]
initial = 0 0
final_min = 3.141592653589793 0
final_max = 3.141592653589793 0

[options]
contact_rows = none
";

    #[test]
    fn parses_pendulum_task() {
        let t = parse_task(SWING, &pendulum()).unwrap();
        assert_eq!(t.phases.len(), 1);
        assert_eq!(t.total_nodes(), 10);
        assert_eq!(t.contact_rows, ContactRows::NONE);
        assert_eq!(t.u_max[0], 20.0);
        assert_eq!(t.x_max[1], 20.0);
        assert_eq!(t.cost.u_nominal[0], 0.0);
    }

    #[test]
    fn rejects_bad_tasks() {
        let m = pendulum();
        let err = parse_task(&SWING.replace("nodes = 10", "nodes = 1"), &m).unwrap_err();
        assert!(err.to_string().contains("field `nodes`"), "{err}");
        let err = parse_task(&SWING.replace("contacts = none", "contacts = heel"), &m).unwrap_err();
        assert!(err.to_string().contains("unknown contact point `heel`"), "{err}");
        let err = parse_task(&SWING.replace("control_weights = 0.01", "control_weights = -1"), &m).unwrap_err();
        assert!(err.to_string().contains("non-negative"), "{err}");
        let err = parse_task(&SWING.replace("final_max = 3.141592653589793 0", "final_max = 3 0"), &m).unwrap_err();
        assert!(matches!(err, Error::InfeasibleBounds { .. }), "{err}");
    }

    #[test]
    fn consecutive_phases_must_differ() {
        let src = SWING.replace("[cost]", "[phase again]\ncontacts = none\nnodes = 3\n\n[cost]");
        let err = parse_task(&src, &pendulum()).unwrap_err();
        assert!(err.to_string().contains("same contact set"), "{err}");
    }
}

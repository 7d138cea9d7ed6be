//! Direct transcription of a contact-scheduled task into a dense NLP.
//!
//! Decision vector: `[x_0, u_0, x_1, u_1, ..., x_{N-1}, u_{N-1}, ΔT_0, ..., ΔT_{P-1}]`,
//! one time step per phase. Consecutive phases share their boundary node, whose
//! dynamics are evaluated under the contact set of each adjacent interval.

mod solution;
mod task;

pub use solution::{NodeForces, TrajectorySolution};

pub use task::{
    default_control_bounds, default_state_bounds, gravity_compensation, load_task, parse_task,
    ContactPhase, ContactRows, CostSpec, TaskSpec, DEFAULT_FRICTION, DEFAULT_FRICTION_EPSILON,
    DEFAULT_PITCH_LIMIT, DEFAULT_STEP_BOUNDS,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{max_torque, min_torque, RobotModel};
use crate::nlpsolver::NlpProblem;
use crate::projection::{self, ProjectionCache};
use crate::rbd;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionLayout {
    pub nx: usize,
    pub nu: usize,
    pub nodes: usize,
    /// First and last global node of each phase.
    pub phase_nodes: Vec<(usize, usize)>,
}

impl DecisionLayout {
    pub fn per_node(&self) -> usize {
        self.nx + self.nu
    }

    pub fn n_phases(&self) -> usize {
        self.phase_nodes.len()
    }

    pub fn n_vars(&self) -> usize {
        self.nodes * self.per_node() + self.n_phases()
    }

    pub fn x(&self, k: usize) -> usize {
        k * self.per_node()
    }

    pub fn u(&self, k: usize) -> usize {
        k * self.per_node() + self.nx
    }

    pub fn dt(&self, p: usize) -> usize {
        self.nodes * self.per_node() + p
    }

    pub fn state(&self, y: &DVector<f64>, k: usize) -> DVector<f64> {
        y.rows(self.x(k), self.nx).into_owned()
    }

    pub fn control(&self, y: &DVector<f64>, k: usize) -> DVector<f64> {
        y.rows(self.u(k), self.nu).into_owned()
    }

    /// Phase owning the interval `k -> k+1`.
    pub fn interval_phase(&self, k: usize) -> usize {
        self.phase_nodes
            .iter()
            .position(|&(a, b)| k >= a && k < b)
            .expect("interval inside the horizon")
    }

    /// Phases whose node range contains `k` (two at a transition).
    pub fn node_phases(&self, k: usize) -> Vec<usize> {
        (0..self.n_phases())
            .filter(|&p| {
                let (a, b) = self.phase_nodes[p];
                k >= a && k <= b
            })
            .collect()
    }

    /// Time of every node for the step sizes in `y`.
    pub fn node_times(&self, y: &DVector<f64>) -> Vec<f64> {
        let mut t = vec![0.0; self.nodes];
        for k in 1..self.nodes {
            t[k] = t[k - 1] + y[self.dt(self.interval_phase(k - 1))];
        }
        t
    }
}

pub fn build_layout(model: &RobotModel, task: &TaskSpec) -> DecisionLayout {
    let mut phase_nodes = Vec::with_capacity(task.phases.len());
    let mut start = 0;
    for p in &task.phases {
        phase_nodes.push((start, start + p.nodes - 1));
        start += p.nodes - 1;
    }
    DecisionLayout {
        nx: model.nx(),
        nu: model.nu(),
        nodes: start + 1,
        phase_nodes,
    }
}

/// Rows computed from one node's variables alone.
#[derive(Debug, Clone)]
struct NodeBlock {
    start: usize,
    torque_max: Vec<usize>,
    torque_min: Vec<usize>,
    /// Contacts active at this node under any adjacent phase.
    active: Vec<usize>,
    height: bool,
    velocity: bool,
    clearance: Vec<usize>,
}

impl NodeBlock {
    fn len(&self) -> usize {
        self.torque_max.len()
            + self.torque_min.len()
            + if self.height { self.active.len() } else { 0 }
            + if self.velocity { 3 * self.active.len() } else { 0 }
            + self.clearance.len()
    }
}

/// Rows that need the dynamics of one phase at one node.
#[derive(Debug, Clone)]
struct PhaseBlock {
    start: usize,
    phase: usize,
    node: usize,
    accel: bool,
    n_contacts: usize,
}

impl PhaseBlock {
    fn len(&self) -> usize {
        if self.accel { 4 * self.n_contacts } else { self.n_contacts }
    }
}

/// Dynamics of one phase at one node.
#[derive(Debug, Clone)]
pub struct PhaseEval {
    /// State derivative.
    pub f: DVector<f64>,
    /// `Jc qdd + J̇ qd` for the phase contacts.
    pub accel: DVector<f64>,
    /// Smoothed friction cone values, one per contact.
    pub cones: DVector<f64>,
    pub forces: projection::ContactForces,
}

const HESSIAN_STEP: f64 = 2e-4;

/// Itemized per-node problem size for a single-phase node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeReport {
    pub variables_per_node: usize,
    pub defects: usize,
    pub torque_upper: usize,
    pub torque_lower: usize,
    pub height: usize,
    pub velocity: usize,
    pub acceleration: usize,
    pub friction_cones: usize,
    pub rows: ContactRows,
}

impl SizeReport {
    /// Defects plus one torque row per actuated joint.
    pub fn core_constraints(&self) -> usize {
        self.defects + self.torque_upper
    }

    pub fn all_constraints(&self) -> usize {
        self.defects
            + self.torque_upper
            + self.torque_lower
            + self.height
            + self.velocity
            + self.acceleration
            + self.friction_cones
    }

    /// Rows emitted per node with the task's contact row selection.
    pub fn emitted_constraints(&self) -> usize {
        self.defects
            + self.torque_upper
            + self.torque_lower
            + self.friction_cones
            + if self.rows.height { self.height } else { 0 }
            + if self.rows.velocity { self.velocity } else { 0 }
            + if self.rows.acceleration { self.acceleration } else { 0 }
    }
}

pub fn size_report(model: &RobotModel, task: &TaskSpec) -> SizeReport {
    let m = task.phases.first().map_or(0, |p| p.contacts.len());
    let torque_upper = model.torque_limits().len();
    let torque_lower = model.torque_limits().iter().filter(|t| t.min.is_some()).count();
    SizeReport {
        variables_per_node: model.nx() + model.nu() + 1,
        defects: model.nx(),
        torque_upper,
        torque_lower,
        height: m,
        velocity: 3 * m,
        acceleration: 3 * m,
        friction_cones: m,
        rows: task.contact_rows,
    }
}

/// `sqrt(λx² + λy² + ε²) - ε - μ λz`.
pub fn smoothed_cone(lambda: &nalgebra::Vector3<f64>, mu: f64, eps: f64) -> f64 {
    (lambda.x * lambda.x + lambda.y * lambda.y + eps * eps).sqrt() - eps - mu * lambda.z
}

/// Exact cone margin `‖λxy‖ - μ λz` (non-positive when inside).
pub fn cone_margin(lambda: &nalgebra::Vector3<f64>, mu: f64) -> f64 {
    (lambda.x * lambda.x + lambda.y * lambda.y).sqrt() - mu * lambda.z
}

/// The transcribed problem. Evaluators are pure and may be shared across threads.
#[derive(Debug, Clone)]
pub struct Transcription {
    pub model: RobotModel,
    pub task: TaskSpec,
    pub layout: DecisionLayout,
    nodes: Vec<NodeBlock>,
    phase_blocks: Vec<PhaseBlock>,
    /// `phase_block_at[k]` lists the indices into `phase_blocks` for node `k`.
    phase_block_at: Vec<Vec<usize>>,
    defect_start: usize,
    n_cons: usize,
    y_lo: DVector<f64>,
    y_hi: DVector<f64>,
}

pub fn assemble_nlp(model: &RobotModel, task: &TaskSpec) -> Result<Transcription> {
    task.validate(model)?;
    let model = task.effective_model(model);
    let layout = build_layout(&model, task);
    let rows = task.contact_rows;
    let n_contacts = model.contact_points().len();

    let mut offset = 0;
    let mut nodes = Vec::with_capacity(layout.nodes);
    let mut phase_blocks = Vec::new();
    let mut phase_block_at = vec![Vec::new(); layout.nodes];
    for k in 0..layout.nodes {
        let phases = layout.node_phases(k);
        let mut active: Vec<usize> = phases
            .iter()
            .flat_map(|&p| task.phases[p].contacts.iter().copied())
            .collect();
        active.sort_unstable();
        active.dedup();
        let clearance = match task.swing_clearance {
            Some(_) => (0..n_contacts).filter(|c| !active.contains(c)).collect(),
            None => Vec::new(),
        };
        let block = NodeBlock {
            start: offset,
            torque_max: model.torque_limits().iter().map(|t| t.joint).collect(),
            torque_min: model
                .torque_limits()
                .iter()
                .filter(|t| t.min.is_some())
                .map(|t| t.joint)
                .collect(),
            height: rows.height || (rows.transition && phases.len() > 1),
            active,
            velocity: rows.velocity,
            clearance,
        };
        offset += block.len();
        nodes.push(block);
        for p in phases {
            let b = PhaseBlock {
                start: offset,
                phase: p,
                node: k,
                accel: rows.acceleration,
                n_contacts: task.phases[p].contacts.len(),
            };
            offset += b.len();
            phase_block_at[k].push(phase_blocks.len());
            phase_blocks.push(b);
        }
    }
    let defect_start = offset;
    let n_cons = offset + (layout.nodes - 1) * layout.nx;

    let (y_lo, y_hi) = variable_bounds(&model, task, &layout)?;
    Ok(Transcription {
        model,
        task: task.clone(),
        layout,
        nodes,
        phase_blocks,
        phase_block_at,
        defect_start,
        n_cons,
        y_lo,
        y_hi,
    })
}

fn variable_bounds(
    model: &RobotModel,
    task: &TaskSpec,
    layout: &DecisionLayout,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = layout.n_vars();
    let mut lo = DVector::zeros(n);
    let mut hi = DVector::zeros(n);
    let last = layout.nodes - 1;
    for k in 0..layout.nodes {
        let (xo, uo) = (layout.x(k), layout.u(k));
        for i in 0..layout.nx {
            let (mut a, mut b) = (task.x_min[i], task.x_max[i]);
            if k == 0 {
                a = task.initial[i];
                b = task.initial[i];
                if task.initial[i] < task.x_min[i] || task.initial[i] > task.x_max[i] {
                    return Err(Error::InfeasibleBounds {
                        name: format!("initial x[{i}] outside the state box"),
                        min: task.x_min[i],
                        max: task.x_max[i],
                    });
                }
            }
            if k == last {
                a = a.max(task.final_min[i]);
                b = b.min(task.final_max[i]);
            }
            if a > b {
                return Err(Error::InfeasibleBounds {
                    name: format!("x[{i}] at node {k}"),
                    min: a,
                    max: b,
                });
            }
            lo[xo + i] = a;
            hi[xo + i] = b;
        }
        for j in 0..layout.nu {
            lo[uo + j] = task.u_min[j];
            hi[uo + j] = task.u_max[j];
        }
    }
    let _ = model;
    for (p, phase) in task.phases.iter().enumerate() {
        let steps = (phase.nodes - 1) as f64;
        lo[layout.dt(p)] = phase.duration.0 / steps;
        hi[layout.dt(p)] = phase.duration.1 / steps;
    }
    Ok((lo, hi))
}

impl Transcription {
    pub fn n_cons(&self) -> usize {
        self.n_cons
    }

    fn nv(&self) -> usize {
        self.model.nv()
    }

    /// Node-local rows: torque bounds, contact height and velocity, swing clearance.
    fn node_rows(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>, out: &mut [f64]) -> Result<()> {
        let b = &self.nodes[k];
        let nv = self.nv();
        let q = x.rows(0, nv).into_owned();
        let qd = x.rows(nv, nv).into_owned();
        let mut i = 0;
        for t in self.model.torque_limits() {
            let angle = q[self.model.joint_dof(t.joint)];
            out[i] = max_torque(t, angle) - u[t.joint];
            i += 1;
        }
        for t in self.model.torque_limits() {
            if let Some(lo) = min_torque(t, angle_of(&self.model, &q, t.joint)) {
                out[i] = u[t.joint] - lo;
                i += 1;
            }
        }
        let needs_kin = (b.height || b.velocity) && !b.active.is_empty() || !b.clearance.is_empty();
        if needs_kin {
            let kin = rbd::Kinematics::new(&self.model, &q)?;
            if b.height {
                for &c in &b.active {
                    out[i] = kin.contact_position(&self.model, c).z;
                    i += 1;
                }
            }
            if b.velocity && !b.active.is_empty() {
                let v = kin.contact_jacobian(&self.model, &b.active) * &qd;
                out[i..i + v.len()].copy_from_slice(v.as_slice());
                i += v.len();
            }
            for &c in &b.clearance {
                out[i] = kin.contact_position(&self.model, c).z;
                i += 1;
            }
        }
        debug_assert_eq!(i, b.len());
        Ok(())
    }

    /// Projected dynamics, acceleration rows and friction cones of phase `p`.
    pub fn phase_eval(&self, p: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<PhaseEval> {
        let phase = &self.task.phases[p];
        let nv = self.nv();
        let q = x.rows(0, nv).into_owned();
        let qd = x.rows(nv, nv).into_owned();
        let cache: ProjectionCache = projection::build_projection(&self.model, &q, &qd, &phase.contacts)?;
        let qdd = projection::projected_forward_dynamics(&self.model, &qd, u, &cache)?;
        let mut f = DVector::zeros(2 * nv);
        f.rows_mut(0, nv).copy_from(&rbd::pose_rate(&self.model, &q, &qd)?);
        f.rows_mut(nv, nv).copy_from(&qdd);
        let accel = &cache.jc * &qdd + &cache.jdot_qd;
        let residual = &cache.m * &qdd + &cache.h - self.model.actuation(u);
        let forces = projection::forces_from_residual(&cache.jc, &residual);
        let cones = DVector::from_iterator(
            phase.contacts.len(),
            (0..phase.contacts.len())
                .map(|c| smoothed_cone(&forces.contact(c), phase.friction, self.task.friction_epsilon)),
        );
        Ok(PhaseEval {
            f,
            accel,
            cones,
            forces,
        })
    }

    fn write_phase_rows(&self, block: &PhaseBlock, ev: &PhaseEval, out: &mut [f64]) {
        let mut i = 0;
        if block.accel {
            out[..ev.accel.len()].copy_from_slice(ev.accel.as_slice());
            i = ev.accel.len();
        }
        out[i..i + ev.cones.len()].copy_from_slice(ev.cones.as_slice());
    }

    /// All phase evaluations, indexed like `phase_blocks`.
    fn evaluate_phases(&self, y: &DVector<f64>) -> Result<Vec<PhaseEval>> {
        self.phase_blocks
            .iter()
            .map(|b| {
                let x = self.layout.state(y, b.node);
                let u = self.layout.control(y, b.node);
                self.phase_eval(b.phase, &x, &u).map_err(|e| e.at_node(b.node))
            })
            .collect()
    }

    /// Index into `phase_blocks` of phase `p` at node `k`.
    fn block_of(&self, p: usize, k: usize) -> usize {
        *self.phase_block_at[k]
            .iter()
            .find(|&&b| self.phase_blocks[b].phase == p)
            .expect("phase covers node")
    }

    /// Trapezoid defects `x_{k+1} - x_k - ΔT/2 (f_k + f_{k+1})`.
    pub fn defects(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let evals = self.evaluate_phases(y)?;
        Ok(self.defects_from(y, &evals))
    }

    fn defects_from(&self, y: &DVector<f64>, evals: &[PhaseEval]) -> DVector<f64> {
        let l = &self.layout;
        let mut out = DVector::zeros((l.nodes - 1) * l.nx);
        for k in 0..l.nodes - 1 {
            let p = l.interval_phase(k);
            let dt = y[l.dt(p)];
            let f0 = &evals[self.block_of(p, k)].f;
            let f1 = &evals[self.block_of(p, k + 1)].f;
            let d = l.state(y, k + 1) - l.state(y, k) - (f0 + f1) * (0.5 * dt);
            out.rows_mut(k * l.nx, l.nx).copy_from(&d);
        }
        out
    }

    /// Torque path rows of every node: `φ(q) - τ` then `τ - φ_min(q)`.
    pub fn torque_path_constraints(&self, y: &DVector<f64>) -> DVector<f64> {
        let l = &self.layout;
        let mut out = Vec::new();
        for k in 0..l.nodes {
            let x = l.state(y, k);
            let u = l.control(y, k);
            let q = x.rows(0, self.nv()).into_owned();
            for t in self.model.torque_limits() {
                out.push(max_torque(t, angle_of(&self.model, &q, t.joint)) - u[t.joint]);
            }
            for t in self.model.torque_limits() {
                if let Some(lo) = min_torque(t, angle_of(&self.model, &q, t.joint)) {
                    out.push(u[t.joint] - lo);
                }
            }
        }
        DVector::from_vec(out)
    }

    /// Height, `Jc qd` and `Jc qdd + J̇ qd` rows of the contacts active at every node.
    pub fn contact_kinematic_constraints(&self, y: &DVector<f64>) -> Result<ContactResiduals> {
        let l = &self.layout;
        let nv = self.nv();
        let mut res = ContactResiduals::default();
        for k in 0..l.nodes {
            let x = l.state(y, k);
            let q = x.rows(0, nv).into_owned();
            let qd = x.rows(nv, nv).into_owned();
            let active = &self.nodes[k].active;
            let kin = rbd::Kinematics::new(&self.model, &q).map_err(|e| e.at_node(k))?;
            res.height.push(active.iter().map(|&c| kin.contact_position(&self.model, c).z).collect());
            res.velocity
                .push((kin.contact_jacobian(&self.model, active) * &qd).iter().copied().collect());
            let mut acc = Vec::new();
            for &bi in &self.phase_block_at[k] {
                let b = &self.phase_blocks[bi];
                let ev = self.phase_eval(b.phase, &x, &l.control(y, k)).map_err(|e| e.at_node(k))?;
                acc.extend(ev.accel.iter().copied());
            }
            res.acceleration.push(acc);
        }
        Ok(res)
    }

    /// Smoothed friction cone rows per (phase, node) and contact.
    pub fn friction_cone_constraints(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let evals = self.evaluate_phases(y)?;
        Ok(DVector::from_iterator(
            evals.iter().map(|e| e.cones.len()).sum(),
            evals.iter().flat_map(|e| e.cones.iter().copied()),
        ))
    }

    /// Recovered contact forces per (phase, node).
    pub fn contact_forces(&self, y: &DVector<f64>) -> Result<Vec<(usize, usize, projection::ContactForces)>> {
        let evals = self.evaluate_phases(y)?;
        Ok(self
            .phase_blocks
            .iter()
            .zip(evals)
            .map(|(b, e)| (b.phase, b.node, e.forces))
            .collect())
    }

    pub fn solution(&self, y: &DVector<f64>) -> Result<TrajectorySolution> {
        let l = &self.layout;
        Ok(TrajectorySolution {
            times: l.node_times(y),
            states: (0..l.nodes).map(|k| l.state(y, k)).collect(),
            controls: (0..l.nodes).map(|k| l.control(y, k)).collect(),
            durations: (0..l.n_phases())
                .map(|p| {
                    let (a, b) = l.phase_nodes[p];
                    (b - a) as f64 * y[l.dt(p)]
                })
                .collect(),
            phase_nodes: l.phase_nodes.clone(),
            phase_contacts: self.task.phases.iter().map(|p| p.contacts.clone()).collect(),
            phase_friction: self.task.phases.iter().map(|p| p.friction).collect(),
            forces: self
                .contact_forces(y)?
                .into_iter()
                .map(|(phase, node, forces)| NodeForces { phase, node, forces })
                .collect(),
        })
    }

    fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let c = &self.task.cost;
        let xb = x - &c.x_nominal;
        let ub = u - &c.u_nominal;
        xb.component_mul(&xb).dot(&c.state_weights) + ub.component_mul(&ub).dot(&c.control_weights)
    }

    fn objective_value(&self, y: &DVector<f64>) -> f64 {
        let l = &self.layout;
        let mut j = 0.0;
        for k in 0..l.nodes - 1 {
            let dt = y[l.dt(l.interval_phase(k))];
            let a = self.stage_cost(&l.state(y, k), &l.control(y, k));
            let b = self.stage_cost(&l.state(y, k + 1), &l.control(y, k + 1));
            j += 0.5 * dt * (a + b);
        }
        if let Some(w) = &self.task.cost.terminal_weights {
            let xb = l.state(y, l.nodes - 1) - &self.task.cost.x_nominal;
            j += xb.component_mul(&xb).dot(w);
        }
        j
    }

    fn objective_gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        let l = &self.layout;
        let c = &self.task.cost;
        let mut g = DVector::zeros(l.n_vars());
        // trapezoid weight of each node
        let mut w = vec![0.0; l.nodes];
        for k in 0..l.nodes - 1 {
            let p = l.interval_phase(k);
            let dt = y[l.dt(p)];
            w[k] += 0.5 * dt;
            w[k + 1] += 0.5 * dt;
            let a = self.stage_cost(&l.state(y, k), &l.control(y, k));
            let b = self.stage_cost(&l.state(y, k + 1), &l.control(y, k + 1));
            g[l.dt(p)] += 0.5 * (a + b);
        }
        for k in 0..l.nodes {
            let xb = l.state(y, k) - &c.x_nominal;
            let ub = l.control(y, k) - &c.u_nominal;
            let mut gx = xb.component_mul(&c.state_weights) * (2.0 * w[k]);
            if k == l.nodes - 1 {
                if let Some(tw) = &c.terminal_weights {
                    gx += xb.component_mul(tw) * 2.0;
                }
            }
            g.rows_mut(l.x(k), l.nx).copy_from(&gx);
            g.rows_mut(l.u(k), l.nu)
                .copy_from(&(ub.component_mul(&c.control_weights) * (2.0 * w[k])));
        }
        g
    }

    fn all_constraints(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let l = &self.layout;
        let mut out = DVector::zeros(self.n_cons);
        for k in 0..l.nodes {
            let b = &self.nodes[k];
            let x = l.state(y, k);
            let u = l.control(y, k);
            self.node_rows(k, &x, &u, &mut out.as_mut_slice()[b.start..b.start + b.len()])
                .map_err(|e| e.at_node(k))?;
        }
        let evals = self.evaluate_phases(y)?;
        for (b, ev) in self.phase_blocks.iter().zip(&evals) {
            self.write_phase_rows(b, ev, &mut out.as_mut_slice()[b.start..b.start + b.len()]);
        }
        let d = self.defects_from(y, &evals);
        out.rows_mut(self.defect_start, d.len()).copy_from(&d);
        Ok(out)
    }

    fn constraint_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let mut lo = DVector::zeros(self.n_cons);
        let mut hi = DVector::zeros(self.n_cons);
        let inf = f64::INFINITY;
        for b in &self.nodes {
            let mut i = b.start;
            for _ in 0..b.torque_max.len() + b.torque_min.len() {
                hi[i] = inf;
                i += 1;
            }
            i += if b.height { b.active.len() } else { 0 };
            i += if b.velocity { 3 * b.active.len() } else { 0 };
            for _ in &b.clearance {
                lo[i] = self.task.swing_clearance.unwrap_or(0.0);
                hi[i] = inf;
                i += 1;
            }
        }
        for b in &self.phase_blocks {
            let cones = b.start + b.len() - b.n_contacts;
            for i in cones..b.start + b.len() {
                lo[i] = -inf;
            }
        }
        (lo, hi)
    }

    /// Row ranges `(start, len)` of each constraint family, for reporting.
    pub fn defect_rows(&self) -> (usize, usize) {
        (self.defect_start, self.n_cons - self.defect_start)
    }

    /// Jacobian by central differences of node-local evaluations, assembled through
    /// the trapezoid structure; `∂ζ/∂ΔT` is exact.
    pub fn structured_jacobian(&self, y: &DVector<f64>, step: f64) -> Result<DMatrix<f64>> {
        let l = &self.layout;
        let (nx, nu) = (l.nx, l.nu);
        let nz = nx + nu;
        let mut jac = DMatrix::zeros(self.n_cons, l.n_vars());
        let evals = self.evaluate_phases(y)?;

        for k in 0..l.nodes {
            let x0 = l.state(y, k);
            let u0 = l.control(y, k);
            let z0 = {
                let mut z = DVector::zeros(nz);
                z.rows_mut(0, nx).copy_from(&x0);
                z.rows_mut(nx, nu).copy_from(&u0);
                z
            };
            let nb = &self.nodes[k];
            let blocks = &self.phase_block_at[k];
            // d(node rows)/dz, d(phase rows)/dz, d(f_p)/dz for each phase at this node
            let mut d_node = DMatrix::zeros(nb.len(), nz);
            let mut d_phase: Vec<DMatrix<f64>> = blocks
                .iter()
                .map(|&b| DMatrix::zeros(self.phase_blocks[b].len(), nz))
                .collect();
            let mut d_f: Vec<DMatrix<f64>> = blocks.iter().map(|_| DMatrix::zeros(nx, nz)).collect();
            let mut node_p = vec![0.0; nb.len()];
            let mut node_m = vec![0.0; nb.len()];
            for i in 0..nz {
                let h = step * z0[i].abs().max(1.0);
                let mut zp = z0.clone();
                zp[i] += h;
                let mut zm = z0.clone();
                zm[i] -= h;
                let (xp, up) = (zp.rows(0, nx).into_owned(), zp.rows(nx, nu).into_owned());
                let (xm, um) = (zm.rows(0, nx).into_owned(), zm.rows(nx, nu).into_owned());
                self.node_rows(k, &xp, &up, &mut node_p).map_err(|e| e.at_node(k))?;
                self.node_rows(k, &xm, &um, &mut node_m).map_err(|e| e.at_node(k))?;
                for r in 0..nb.len() {
                    d_node[(r, i)] = (node_p[r] - node_m[r]) / (2.0 * h);
                }
                for (j, &bi) in blocks.iter().enumerate() {
                    let b = &self.phase_blocks[bi];
                    let ep = self.phase_eval(b.phase, &xp, &up).map_err(|e| e.at_node(k))?;
                    let em = self.phase_eval(b.phase, &xm, &um).map_err(|e| e.at_node(k))?;
                    d_f[j].set_column(i, &((&ep.f - &em.f) / (2.0 * h)));
                    let mut rp = vec![0.0; b.len()];
                    let mut rm = vec![0.0; b.len()];
                    self.write_phase_rows(b, &ep, &mut rp);
                    self.write_phase_rows(b, &em, &mut rm);
                    for r in 0..b.len() {
                        d_phase[j][(r, i)] = (rp[r] - rm[r]) / (2.0 * h);
                    }
                }
            }
            let xo = l.x(k);
            jac.view_mut((nb.start, xo), (nb.len(), nz)).copy_from(&d_node);
            for (j, &bi) in blocks.iter().enumerate() {
                let b = &self.phase_blocks[bi];
                jac.view_mut((b.start, xo), (b.len(), nz)).copy_from(&d_phase[j]);
            }
            let local = |p: usize| blocks.iter().position(|&b| self.phase_blocks[b].phase == p).unwrap();
            // interval k-1 -> k ends here
            if k > 0 {
                let p = l.interval_phase(k - 1);
                let dt = y[l.dt(p)];
                let row = self.defect_start + (k - 1) * nx;
                let mut blk = -&d_f[local(p)] * (0.5 * dt);
                for i in 0..nx {
                    blk[(i, i)] += 1.0;
                }
                jac.view_mut((row, xo), (nx, nz)).copy_from(&blk);
            }
            // interval k -> k+1 starts here
            if k + 1 < l.nodes {
                let p = l.interval_phase(k);
                let dt = y[l.dt(p)];
                let row = self.defect_start + k * nx;
                let mut blk = -&d_f[local(p)] * (0.5 * dt);
                for i in 0..nx {
                    blk[(i, i)] -= 1.0;
                }
                jac.view_mut((row, xo), (nx, nz)).copy_from(&blk);
            }
        }
        for k in 0..l.nodes - 1 {
            let p = l.interval_phase(k);
            let f0 = &evals[self.block_of(p, k)].f;
            let f1 = &evals[self.block_of(p, k + 1)].f;
            let col = (f0 + f1) * -0.5;
            jac.view_mut((self.defect_start + k * nx, l.dt(p)), (nx, 1)).copy_from(&col);
        }
        Ok(jac)
    }

    /// Weighted sum of the rows that depend on node `k`, with the defect rows
    /// contributing only their `-ΔT/2 f` part.
    fn node_lagrangian(&self, k: usize, z: &DVector<f64>, lambda: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        let l = &self.layout;
        let x = z.rows(0, l.nx).into_owned();
        let u = z.rows(l.nx, l.nu).into_owned();
        let nb = &self.nodes[k];
        let mut buf = vec![0.0; nb.len()];
        self.node_rows(k, &x, &u, &mut buf)?;
        let mut acc: f64 = buf.iter().enumerate().map(|(i, v)| lambda[nb.start + i] * v).sum();
        for &bi in &self.phase_block_at[k] {
            let b = &self.phase_blocks[bi];
            let ev = self.phase_eval(b.phase, &x, &u)?;
            let mut rows = vec![0.0; b.len()];
            self.write_phase_rows(b, &ev, &mut rows);
            acc += rows.iter().enumerate().map(|(i, v)| lambda[b.start + i] * v).sum::<f64>();
            acc += self.defect_weight(k, b.phase, lambda).dot(&ev.f) * (-0.5 * y[l.dt(b.phase)]);
        }
        Ok(acc)
    }

    /// Sum of the defect multipliers of the intervals of phase `p` adjacent to node `k`.
    fn defect_weight(&self, k: usize, p: usize, lambda: &DVector<f64>) -> DVector<f64> {
        let l = &self.layout;
        let mut w = DVector::zeros(l.nx);
        if k > 0 && l.interval_phase(k - 1) == p {
            w += lambda.rows(self.defect_start + (k - 1) * l.nx, l.nx);
        }
        if k + 1 < l.nodes && l.interval_phase(k) == p {
            w += lambda.rows(self.defect_start + k * l.nx, l.nx);
        }
        w
    }

    /// Hessian of the Lagrangian `J(y) - λᵀc(y)`. Node blocks come from second
    /// differences of [`Self::node_lagrangian`]; the time-step couplings from first
    /// differences of the dynamics; the objective part is exact.
    pub fn hessian_of_lagrangian(&self, y: &DVector<f64>, lambda: &DVector<f64>) -> Result<DMatrix<f64>> {
        let l = &self.layout;
        let nz = l.per_node();
        let c = &self.task.cost;
        let mut hess = DMatrix::zeros(l.n_vars(), l.n_vars());
        let mut w = vec![0.0; l.nodes];
        for k in 0..l.nodes - 1 {
            let dt = y[l.dt(l.interval_phase(k))];
            w[k] += 0.5 * dt;
            w[k + 1] += 0.5 * dt;
        }
        for k in 0..l.nodes {
            let o = l.x(k);
            let z0 = y.rows(o, nz).into_owned();
            for i in 0..l.nx {
                hess[(o + i, o + i)] += 2.0 * w[k] * c.state_weights[i];
            }
            for j in 0..l.nu {
                hess[(o + l.nx + j, o + l.nx + j)] += 2.0 * w[k] * c.control_weights[j];
            }
            if k == l.nodes - 1 {
                if let Some(tw) = &c.terminal_weights {
                    for i in 0..l.nx {
                        hess[(o + i, o + i)] += 2.0 * tw[i];
                    }
                }
            }
            // objective: d²J / dΔT dz
            let xb = l.state(y, k) - &c.x_nominal;
            let ub = l.control(y, k) - &c.u_nominal;
            let mut grad_stage = DVector::zeros(nz);
            grad_stage.rows_mut(0, l.nx).copy_from(&(xb.component_mul(&c.state_weights) * 2.0));
            grad_stage.rows_mut(l.nx, l.nu).copy_from(&(ub.component_mul(&c.control_weights) * 2.0));
            for side in [k.checked_sub(1), (k + 1 < l.nodes).then_some(k)] {
                if let Some(i) = side {
                    let p = l.dt(l.interval_phase(i));
                    for a in 0..nz {
                        hess[(p, o + a)] += 0.5 * grad_stage[a];
                        hess[(o + a, p)] += 0.5 * grad_stage[a];
                    }
                }
            }

            // constraints: second differences of the node-local Lagrangian
            let h: Vec<f64> = (0..nz).map(|i| HESSIAN_STEP * z0[i].abs().max(1.0)).collect();
            let eval = |z: &DVector<f64>| self.node_lagrangian(k, z, lambda, y).map_err(|e| e.at_node(k));
            let f0 = eval(&z0)?;
            let mut z = z0.clone();
            for i in 0..nz {
                z[i] = z0[i] + h[i];
                let fp = eval(&z)?;
                z[i] = z0[i] - h[i];
                let fm = eval(&z)?;
                z[i] = z0[i];
                hess[(o + i, o + i)] -= (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
            }
            for i in 0..nz {
                for j in i + 1..nz {
                    let mut corner = |si: f64, sj: f64| {
                        z[i] = z0[i] + si * h[i];
                        z[j] = z0[j] + sj * h[j];
                        let v = eval(&z);
                        z[i] = z0[i];
                        z[j] = z0[j];
                        v
                    };
                    let v = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)? + corner(-1.0, -1.0)?)
                        / (4.0 * h[i] * h[j]);
                    hess[(o + i, o + j)] -= v;
                    hess[(o + j, o + i)] -= v;
                }
            }

            // constraints: d²(λᵀζ) / dΔT dz = -½ wᵀ df/dz
            for &bi in &self.phase_block_at[k] {
                let p = self.phase_blocks[bi].phase;
                let wd = self.defect_weight(k, p, lambda);
                if wd.amax() == 0.0 {
                    continue;
                }
                let col = l.dt(p);
                for i in 0..nz {
                    let mut zp = z0.clone();
                    zp[i] += h[i];
                    let mut zm = z0.clone();
                    zm[i] -= h[i];
                    let fp = self.phase_eval(p, &zp.rows(0, l.nx).into_owned(), &zp.rows(l.nx, l.nu).into_owned());
                    let fm = self.phase_eval(p, &zm.rows(0, l.nx).into_owned(), &zm.rows(l.nx, l.nu).into_owned());
                    let (fp, fm) = (fp.map_err(|e| e.at_node(k))?, fm.map_err(|e| e.at_node(k))?);
                    let v = 0.5 * wd.dot(&(fp.f - fm.f)) / (2.0 * h[i]);
                    hess[(col, o + i)] += v;
                    hess[(o + i, col)] += v;
                }
            }
        }
        Ok(hess)
    }

    /// Rows touched by each decision variable.
    pub fn sparsity(&self) -> Vec<Vec<usize>> {
        let l = &self.layout;
        let mut cols = vec![Vec::new(); l.n_vars()];
        for k in 0..l.nodes {
            let mut rows: Vec<usize> = Vec::new();
            let nb = &self.nodes[k];
            rows.extend(nb.start..nb.start + nb.len());
            for &bi in &self.phase_block_at[k] {
                let b = &self.phase_blocks[bi];
                rows.extend(b.start..b.start + b.len());
            }
            if k > 0 {
                let s = self.defect_start + (k - 1) * l.nx;
                rows.extend(s..s + l.nx);
            }
            if k + 1 < l.nodes {
                let s = self.defect_start + k * l.nx;
                rows.extend(s..s + l.nx);
            }
            for i in 0..l.per_node() {
                cols[l.x(k) + i] = rows.clone();
            }
        }
        for k in 0..l.nodes - 1 {
            let s = self.defect_start + k * l.nx;
            cols[l.dt(l.interval_phase(k))].extend(s..s + l.nx);
        }
        cols
    }

    /// States linearly interpolated from the initial state to the final guess, static
    /// compensation torques, mid-range time steps.
    pub fn initial_guess(&self) -> Result<DVector<f64>> {
        let l = &self.layout;
        let x0 = &self.task.initial;
        let x1 = self.task.final_guess.as_ref().unwrap_or(x0);
        let mut y = DVector::zeros(l.n_vars());
        for k in 0..l.nodes {
            let s = if l.nodes > 1 { k as f64 / (l.nodes - 1) as f64 } else { 0.0 };
            let x = x0 + (x1 - x0) * s;
            let p = if k + 1 < l.nodes { l.interval_phase(k) } else { l.n_phases() - 1 };
            let mut u = gravity_compensation(&self.model, &x, &self.task.phases[p].contacts)
                .map_err(|e| e.at_node(k))?;
            for j in 0..l.nu {
                u[j] = u[j].clamp(self.task.u_min[j], self.task.u_max[j]);
            }
            y.rows_mut(l.x(k), l.nx).copy_from(&x);
            y.rows_mut(l.u(k), l.nu).copy_from(&u);
        }
        for p in 0..l.n_phases() {
            y[l.dt(p)] = 0.5 * (self.y_lo[l.dt(p)] + self.y_hi[l.dt(p)]);
        }
        for i in 0..y.len() {
            y[i] = y[i].clamp(self.y_lo[i], self.y_hi[i]);
        }
        Ok(y)
    }
}

fn angle_of(model: &RobotModel, q: &DVector<f64>, joint: usize) -> f64 {
    q[model.joint_dof(joint)]
}

/// Per-node contact residuals, grouped by family.
#[derive(Debug, Clone, Default)]
pub struct ContactResiduals {
    pub height: Vec<Vec<f64>>,
    pub velocity: Vec<Vec<f64>>,
    pub acceleration: Vec<Vec<f64>>,
}

impl ContactResiduals {
    fn max_abs(v: &[Vec<f64>]) -> f64 {
        v.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_height(&self) -> f64 {
        Self::max_abs(&self.height)
    }

    pub fn max_velocity(&self) -> f64 {
        Self::max_abs(&self.velocity)
    }

    pub fn max_acceleration(&self) -> f64 {
        Self::max_abs(&self.acceleration)
    }
}

impl NlpProblem for Transcription {
    fn n_vars(&self) -> usize {
        self.layout.n_vars()
    }

    fn n_cons(&self) -> usize {
        self.n_cons
    }

    fn var_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        (self.y_lo.clone(), self.y_hi.clone())
    }

    fn con_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        self.constraint_bounds()
    }

    fn objective(&self, y: &DVector<f64>) -> Result<f64> {
        Ok(self.objective_value(y))
    }

    fn gradient(&self, y: &DVector<f64>, _step: f64) -> Result<DVector<f64>> {
        Ok(self.objective_gradient(y))
    }

    fn constraints(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.all_constraints(y)
    }

    fn jacobian(&self, y: &DVector<f64>, step: f64) -> Result<DMatrix<f64>> {
        self.structured_jacobian(y, step)
    }

    fn sparsity(&self) -> Option<Vec<Vec<usize>>> {
        Some(Transcription::sparsity(self))
    }

    fn lagrangian_hessian(&self, y: &DVector<f64>, lambda: &DVector<f64>, _step: f64) -> Option<Result<DMatrix<f64>>> {
        Some(self.hessian_of_lagrangian(y, lambda))
    }
}

#[cfg(test)]
mod tests;

//! Forward rollouts of the projected dynamics with constraint-drift and
//! contact-force monitoring.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RobotModel;
use crate::projection::{self, build_projection, forces_from_residual};
use crate::rbd;
use crate::transcription::{cone_margin, TrajectorySolution};
use crate::tvlqr::GainSchedule;

pub const DEFAULT_DT: f64 = 1e-3;

/// Largest `‖Jc q̇‖` accepted at the start of a rollout.
pub const CONSISTENCY_TOL: f64 = 1e-6;

/// How torques are chosen along a rollout.
#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    /// The planned torques, interpolated linearly between nodes.
    OpenLoop,
    /// `u*(t) + K(t) (x - x*(t))`.
    Feedback(&'a GainSchedule),
}

/// Which acceleration solve drives the integrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    #[default]
    Projected,
    /// The saddle-point solve with explicit multipliers.
    Kkt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutOptions {
    pub dt: f64,
    /// Defaults to the plan horizon.
    pub duration: Option<f64>,
    pub integrator: Integrator,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        RolloutOptions {
            dt: DEFAULT_DT,
            duration: None,
            integrator: Integrator::Projected,
        }
    }
}

/// Uniformly sampled rollout. Per-contact series cover every contact point
/// of the model; forces and cone margins are zero for inactive points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutLog {
    pub times: Vec<f64>,
    pub phases: Vec<usize>,
    pub active: Vec<Vec<usize>>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub drift: Vec<f64>,
    pub heights: Vec<Vec<f64>>,
    pub forces: Vec<Vec<[f64; 3]>>,
    pub cone_margins: Vec<Vec<f64>>,
    pub tracking_error: Vec<f64>,
    pub references: Vec<DVector<f64>>,
    /// Whether the z = 0 ground applies; false for fixed-base models.
    pub ground: bool,
}

impl RolloutLog {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("non-empty log")
    }
}

struct Stepper<'a> {
    model: &'a RobotModel,
    plan: &'a TrajectorySolution,
    policy: Policy<'a>,
    integrator: Integrator,
}

impl Stepper<'_> {
    fn control(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        match self.policy {
            Policy::OpenLoop => self.plan.control_at(t),
            Policy::Feedback(s) => s.feedback(t, x),
        }
    }

    fn derivative(&self, t: f64, x: &DVector<f64>, contacts: &[usize]) -> Result<DVector<f64>> {
        self.eval(t, x, contacts).map_err(at_time(t))
    }

    fn eval(&self, t: f64, x: &DVector<f64>, contacts: &[usize]) -> Result<DVector<f64>> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "rollout state", time: t });
        }
        let u = self.control(t, x);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "control", time: t });
        }
        match self.integrator {
            Integrator::Projected => match projection::state_derivative(self.model, x, &u, contacts) {
                Err(Error::SingularConstraintInertia) if self.invertible(x, contacts)? => {
                    Err(Error::NonFinite { what: "acceleration", time: t })
                }
                other => other,
            },
            Integrator::Kkt => {
                let nv = self.model.nv();
                let q = x.rows(0, nv).into_owned();
                let qd = x.rows(nv, nv).into_owned();
                let (qdd, _) = projection::kkt_oracle(self.model, &q, &qd, &u, contacts)?;
                let mut out = DVector::zeros(2 * nv);
                out.rows_mut(0, nv).copy_from(&rbd::pose_rate(self.model, &q, &qd)?);
                out.rows_mut(nv, nv).copy_from(&qdd);
                Ok(out)
            }
        }
    }

    fn invertible(&self, x: &DVector<f64>, contacts: &[usize]) -> Result<bool> {
        let nv = self.model.nv();
        let q = x.rows(0, nv).into_owned();
        let qd = x.rows(nv, nv).into_owned();
        let mc = build_projection(self.model, &q, &qd, contacts)?.mc;
        Ok(mc.iter().all(|v| v.is_finite()) && mc.lu().is_invertible())
    }

    fn rk4(&self, t: f64, x: &DVector<f64>, h: f64, contacts: &[usize]) -> Result<DVector<f64>> {
        let k1 = self.derivative(t, x, contacts)?;
        let k2 = self.derivative(t + 0.5 * h, &(x + &k1 * (0.5 * h)), contacts)?;
        let k3 = self.derivative(t + 0.5 * h, &(x + &k2 * (0.5 * h)), contacts)?;
        let k4 = self.derivative(t + h, &(x + &k3 * h), contacts)?;
        Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
    }

    /// Times where the torque or contact set has a kink or a switch.
    fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.plan.times.clone();
        if let Policy::Feedback(s) = self.policy {
            b.extend_from_slice(&s.times);
        }
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }
}

/// Integrates from `x0` at the plan start. Contact sets switch at the planned
/// phase boundaries; steps are split at plan nodes and gain knots so each
/// sub-step sees smooth inputs.
pub fn rollout(
    model: &RobotModel,
    plan: &TrajectorySolution,
    policy: Policy<'_>,
    x0: &DVector<f64>,
    opts: &RolloutOptions,
) -> Result<RolloutLog> {
    let nv = model.nv();
    if x0.len() != 2 * nv {
        return Err(Error::Dimension {
            what: "x0",
            expected: 2 * nv,
            found: x0.len(),
        });
    }
    if !(opts.dt > 0.0) {
        return Err(Error::Solver(format!("rollout step {} must be positive", opts.dt)));
    }
    let t0 = plan.times.first().copied().unwrap_or(0.0);
    let duration = opts.duration.unwrap_or(plan.horizon() - t0);
    let steps = (duration / opts.dt).round() as usize;
    let stepper = Stepper {
        model,
        plan,
        policy,
        integrator: opts.integrator,
    };
    let breaks = stepper.breakpoints();

    let drift0 = velocity_drift(model, x0, &plan.phase_contacts[plan.phase_at(t0)])?;
    if drift0 > CONSISTENCY_TOL {
        return Err(Error::Solver(format!(
            "initial state violates the contact velocity constraint by {drift0:e}"
        )));
    }

    let mut log = RolloutLog {
        times: Vec::with_capacity(steps + 1),
        phases: Vec::new(),
        active: Vec::new(),
        states: Vec::new(),
        controls: Vec::new(),
        drift: Vec::new(),
        heights: Vec::new(),
        forces: Vec::new(),
        cone_margins: Vec::new(),
        tracking_error: Vec::new(),
        references: Vec::new(),
        ground: !model.fixed_base(),
    };
    let mut x = x0.clone();
    let mut t = t0;
    record(&stepper, &mut log, t, &x).map_err(at_time(t))?;
    for i in 1..=steps {
        let t_next = t0 + i as f64 * opts.dt;
        let cuts = breaks.iter().copied().filter(|&b| b > t && b < t_next - 1e-12 * opts.dt);
        let mut a = t;
        for b in cuts.chain(std::iter::once(t_next)) {
            let contacts = &plan.phase_contacts[plan.phase_at(a)];
            x = stepper.rk4(a, &x, b - a, contacts)?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "rollout state",
                    time: b,
                });
            }
            a = b;
        }
        t = t_next;
        record(&stepper, &mut log, t, &x).map_err(at_time(t))?;
    }
    Ok(log)
}

fn at_time(time: f64) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } | Error::AtTime { .. } => e,
        other => Error::AtTime {
            time,
            source: Box::new(other),
        },
    }
}

fn velocity_drift(model: &RobotModel, x: &DVector<f64>, contacts: &[usize]) -> Result<f64> {
    let nv = model.nv();
    let q = x.rows(0, nv).into_owned();
    let jc = rbd::contact_jacobian(model, &q, contacts)?;
    Ok((jc * x.rows(nv, nv)).norm())
}

fn record(st: &Stepper<'_>, log: &mut RolloutLog, t: f64, x: &DVector<f64>) -> Result<()> {
    let model = st.model;
    let nv = model.nv();
    let p = st.plan.phase_at(t);
    let contacts = &st.plan.phase_contacts[p];
    let u = st.control(t, x);
    let q = x.rows(0, nv).into_owned();
    let qd = x.rows(nv, nv).into_owned();
    let cache = build_projection(model, &q, &qd, contacts)?;
    let qdd = projection::projected_forward_dynamics(model, &qd, &u, &cache)?;
    let b = &cache.m * &qdd + &cache.h - model.actuation(&u);
    let lambda = forces_from_residual(&cache.jc, &b);
    let mu = st.plan.phase_friction.get(p).copied().unwrap_or(f64::INFINITY);

    let n_points = model.contact_points().len();
    let mut forces = vec![[0.0; 3]; n_points];
    let mut margins = vec![0.0; n_points];
    for (k, &c) in contacts.iter().enumerate() {
        let f = lambda.contact(k);
        forces[c] = [f.x, f.y, f.z];
        margins[c] = cone_margin(&f, mu);
    }
    let heights = (0..n_points)
        .map(|c| rbd::contact_height(model, &q, c))
        .collect::<Result<Vec<_>>>()?;
    let reference = st.plan.state_at(t);

    log.times.push(t);
    log.phases.push(p);
    log.active.push(contacts.clone());
    log.drift.push((&cache.jc * &qd).norm());
    log.heights.push(heights);
    log.forces.push(forces);
    log.cone_margins.push(margins);
    log.tracking_error.push((x - &reference).norm());
    log.references.push(reference);
    log.states.push(x.clone());
    log.controls.push(u);
    Ok(())
}

/// A maximum over the log and the first sample where it occurs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub value: f64,
    pub time: f64,
}

impl Peak {
    fn over(times: &[f64], values: impl Iterator<Item = f64>) -> Peak {
        let mut best = Peak { value: 0.0, time: times.first().copied().unwrap_or(0.0) };
        for (&t, v) in times.iter().zip(values) {
            if v > best.value || v.is_nan() {
                best = Peak { value: v, time: t };
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    /// `‖Jc q̇‖` over active contacts.
    pub drift: Peak,
    /// Positive part of `‖λ_t‖ - μ λ_n`.
    pub cone_violation: Peak,
    /// Depth of any contact point below the ground (floating-base models only).
    pub penetration: Peak,
    /// `|z|` of active contact points.
    pub contact_height: Peak,
}

pub fn drift_report(log: &RolloutLog) -> DriftReport {
    let active_max = |series: &Vec<Vec<f64>>, f: fn(f64) -> f64| -> Vec<f64> {
        series
            .iter()
            .zip(&log.active)
            .map(|(row, act)| act.iter().map(|&c| f(row[c])).fold(0.0, f64::max))
            .collect()
    };
    let cone = active_max(&log.cone_margins, |m| m.max(0.0));
    let height = active_max(&log.heights, f64::abs);
    DriftReport {
        drift: Peak::over(&log.times, log.drift.iter().copied()),
        cone_violation: Peak::over(&log.times, cone.into_iter()),
        penetration: Peak::over(
            &log.times,
            log.heights
                .iter()
                .map(|h| if log.ground { h.iter().map(|z| -z).fold(0.0, f64::max) } else { 0.0 }),
        ),
        contact_height: Peak::over(&log.times, height.into_iter()),
    }
}

/// Shifts each coordinate of `x` by about `fraction` of its magnitude (at
/// least `fraction * 0.1`), with alternating signs, along generalized
/// velocities that leave the active contacts fixed to first order.
pub fn perturb_state(model: &RobotModel, x: &DVector<f64>, contacts: &[usize], fraction: f64) -> Result<DVector<f64>> {
    let nv = model.nv();
    let q = x.rows(0, nv).into_owned();
    let qd = x.rows(nv, nv).into_owned();
    let jc = rbd::contact_jacobian(model, &q, contacts)?;
    let (pinv, _) = projection::pseudo_inverse(&jc, projection::PINV_CUTOFF);
    let project = |v: DVector<f64>| &v - &pinv * (&jc * &v);
    let shift = |v: &DVector<f64>| {
        DVector::from_fn(nv, |i, _| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            sign * fraction * v[i].abs().max(0.1)
        })
    };
    let dq = rbd::pose_rate(model, &q, &project(shift(&q)))?;
    let mut out = x.clone();
    out.rows_mut(0, nv).copy_from(&(&q + dq));
    let q1 = out.rows(0, nv).into_owned();
    let jc1 = rbd::contact_jacobian(model, &q1, contacts)?;
    let (pinv1, _) = projection::pseudo_inverse(&jc1, projection::PINV_CUTOFF);
    let v = &qd + shift(&qd);
    out.rows_mut(nv, nv).copy_from(&(&v - pinv1 * (&jc1 * &v)));
    Ok(out)
}

/// Kinetic energy `½ q̇ᵀ M q̇`.
pub fn kinetic_energy(model: &RobotModel, x: &DVector<f64>) -> Result<f64> {
    let nv = model.nv();
    let q = x.rows(0, nv).into_owned();
    let qd = x.rows(nv, nv).into_owned();
    let m: DMatrix<f64> = rbd::mass_matrix(model, &q)?;
    Ok(0.5 * qd.dot(&(m * &qd)))
}

/// Ratio of successive terminal-state differences under step halving
/// (`dt`, `dt/2`, `dt/4`); a fourth-order integrator gives about 16.
pub fn convergence_ratio(
    model: &RobotModel,
    plan: &TrajectorySolution,
    policy: Policy<'_>,
    x0: &DVector<f64>,
    dt: f64,
) -> Result<f64> {
    let end = |h: f64| -> Result<DVector<f64>> {
        let opts = RolloutOptions { dt: h, ..Default::default() };
        Ok(rollout(model, plan, policy, x0, &opts)?.final_state().clone())
    };
    let (x1, x2, x3) = (end(dt)?, end(dt / 2.0)?, end(dt / 4.0)?);
    Ok((&x1 - &x2).norm() / (&x2 - &x3).norm())
}

#[cfg(test)]
mod tests;

//! Time-varying LQR around a planned trajectory.
//!
//! Feedback is `u = u*(t) + K(t) (x - x*(t))` with `K = -R⁻¹ Bᵀ S` and
//! `-dS/dt = AᵀS + SA - S B R⁻¹ Bᵀ S + Q`, `S(t_f) = Q_f`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RobotModel;
use crate::projection;
use crate::rbd::check_dim;
use crate::transcription::{CostSpec, TrajectorySolution};

pub const LINEARIZATION_STEP: f64 = 1e-6;

/// `A = ∂f/∂x`, `B = ∂f/∂u` of the projected dynamics by central differences.
pub fn linearize(
    model: &RobotModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    contacts: &[usize],
    step: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_dim("x", model.nx(), x.len())?;
    check_dim("u", model.nu(), u.len())?;
    let nx = x.len();
    let f = |x: &DVector<f64>, u: &DVector<f64>| projection::state_derivative(model, x, u, contacts);
    let mut a = DMatrix::zeros(nx, nx);
    let mut xp = x.clone();
    for i in 0..nx {
        let h = step * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp, u)?;
        xp[i] = x[i] - h;
        let fm = f(&xp, u)?;
        xp[i] = x[i];
        a.set_column(i, &((fp - fm) / (2.0 * h)));
    }
    let mut b = DMatrix::zeros(nx, u.len());
    let mut up = u.clone();
    for j in 0..u.len() {
        let h = step * u[j].abs().max(1.0);
        up[j] = u[j] + h;
        let fp = f(x, &up)?;
        up[j] = u[j] - h;
        let fm = f(x, &up)?;
        up[j] = u[j];
        b.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    Ok((a, b))
}

/// Linear model `(A, B)` at each point of a time grid.
#[derive(Debug, Clone)]
pub struct LinearizedPath {
    pub times: Vec<f64>,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
}

impl LinearizedPath {
    pub fn time_invariant(a: DMatrix<f64>, b: DMatrix<f64>, times: Vec<f64>) -> Self {
        let n = times.len();
        LinearizedPath {
            times,
            a: vec![a; n],
            b: vec![b; n],
        }
    }

    fn at(&self, k: usize, s: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        if s == 0.0 {
            return (self.a[k].clone(), self.b[k].clone());
        }
        (
            &self.a[k] * (1.0 - s) + &self.a[k + 1] * s,
            &self.b[k] * (1.0 - s) + &self.b[k + 1] * s,
        )
    }
}

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub times: Vec<f64>,
    pub s: Vec<DMatrix<f64>>,
    pub gains: Vec<DMatrix<f64>>,
    /// Largest relative asymmetry of `S` before each symmetrization.
    pub max_asymmetry: f64,
}

struct Weights {
    q: DMatrix<f64>,
    r_inv: DMatrix<f64>,
}

impl Weights {
    fn new(q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<Self> {
        let chol = r.clone().cholesky().ok_or(Error::RiccatiWeight)?;
        Ok(Weights {
            q: q.clone(),
            r_inv: chol.inverse(),
        })
    }

    /// `AᵀS + SA - S B R⁻¹ Bᵀ S + Q`, which equals `-dS/dt`.
    fn rhs(&self, s: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let sa = s * a;
        let sb = s * b;
        &sa + sa.transpose() - &sb * &self.r_inv * sb.transpose() + &self.q
    }

    fn gain(&self, s: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        -(&self.r_inv * b.transpose() * s)
    }
}

/// Sub-steps keeping `h ‖A - B R⁻¹ BᵀS‖` inside the RK4 stability region.
fn substeps(w: &Weights, s: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>, h: f64) -> usize {
    let closed = a - b * &w.r_inv * b.transpose() * s;
    let rate = closed.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    ((2.0 * h * rate).ceil() as usize).clamp(1, 100_000)
}

/// Backward RK4 sweep from `S(t_f) = Q_f`. Zero-length grid intervals carry `S` unchanged.
pub fn riccati_backward(
    path: &LinearizedPath,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    qf: &DMatrix<f64>,
) -> Result<RiccatiSolution> {
    let n = path.times.len();
    if n == 0 {
        return Err(Error::Solver("empty Riccati grid".into()));
    }
    let nx = q.nrows();
    check_dim("Q_f", nx, qf.nrows())?;
    check_dim("A", nx, path.a[0].nrows())?;
    check_dim("R", path.b[0].ncols(), r.nrows())?;
    if path.times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Solver("Riccati grid is not increasing".into()));
    }
    let w = Weights::new(q, r)?;
    let mut s = vec![DMatrix::zeros(nx, nx); n];
    s[n - 1] = (qf + qf.transpose()) * 0.5;
    let mut max_asym: f64 = 0.0;
    for k in (0..n - 1).rev() {
        let span = path.times[k + 1] - path.times[k];
        let mut sk = s[k + 1].clone();
        if span > 0.0 {
            let m = substeps(&w, &sk, &path.a[k + 1], &path.b[k + 1], span);
            let h = span / m as f64;
            for j in (0..m).rev() {
                // integrate in reversed time from fraction (j+1)/m down to j/m of the interval
                let s_hi = (j + 1) as f64 / m as f64;
                let s_mid = (j as f64 + 0.5) / m as f64;
                let s_lo = j as f64 / m as f64;
                let (a1, b1) = path.at(k, s_hi);
                let (a2, b2) = path.at(k, s_mid);
                let (a3, b3) = path.at(k, s_lo);
                let k1 = w.rhs(&sk, &a1, &b1);
                let k2 = w.rhs(&(&sk + &k1 * (0.5 * h)), &a2, &b2);
                let k3 = w.rhs(&(&sk + &k2 * (0.5 * h)), &a2, &b2);
                let k4 = w.rhs(&(&sk + &k3 * h), &a3, &b3);
                sk += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
                let asym = (&sk - sk.transpose()).amax() / (1.0 + sk.amax());
                max_asym = max_asym.max(asym);
                sk = (&sk + sk.transpose()) * 0.5;
            }
        }
        if sk.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "Riccati solution",
                time: path.times[k],
            });
        }
        s[k] = sk;
    }
    let gains = (0..n).map(|k| w.gain(&s[k], &path.b[k])).collect();
    Ok(RiccatiSolution {
        times: path.times.clone(),
        s,
        gains,
        max_asymmetry: max_asym,
    })
}

/// Scaled ODE residual at every interval midpoint, from the cubic Hermite
/// interpolant of the grid values and their slopes. Zero-length intervals report 0.
pub fn riccati_residual(path: &LinearizedPath, q: &DMatrix<f64>, r: &DMatrix<f64>, sol: &RiccatiSolution) -> Result<Vec<f64>> {
    let w = Weights::new(q, r)?;
    let mut out = Vec::new();
    for k in 0..sol.times.len().saturating_sub(1) {
        let h = sol.times[k + 1] - sol.times[k];
        if h <= 0.0 {
            out.push(0.0);
            continue;
        }
        let (s0, s1) = (&sol.s[k], &sol.s[k + 1]);
        let d0 = -w.rhs(s0, &path.a[k], &path.b[k]);
        let d1 = -w.rhs(s1, &path.a[k + 1], &path.b[k + 1]);
        let s_mid = (s0 + s1) * 0.5 + (&d0 - &d1) * (h / 8.0);
        let ds_mid = (s1 - s0) * (1.5 / h) - (&d0 + &d1) * 0.25;
        let (am, bm) = path.at(k, 0.5);
        let f = w.rhs(&s_mid, &am, &bm);
        let scale = 1.0 + f.amax().max(ds_mid.amax()).max(q.amax());
        out.push((ds_mid + f).amax() / scale);
    }
    Ok(out)
}

/// Gains and reference on a time grid. A phase transition appears as two
/// grid points with the same time; the later one applies from then on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub times: Vec<f64>,
    pub phases: Vec<usize>,
    pub gains: Vec<DMatrix<f64>>,
    pub x_ref: Vec<DVector<f64>>,
    pub u_ref: Vec<DVector<f64>>,
}

impl GainSchedule {
    pub fn horizon(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().expect("non-empty schedule"))
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.times.len();
        if n < 2 || t <= self.times[0] {
            return (0, 0.0);
        }
        let idx = self.times.partition_point(|&tk| tk <= t);
        if idx >= n {
            return (n - 1, 0.0);
        }
        let k = idx - 1;
        let span = self.times[k + 1] - self.times[k];
        (k, if span > 0.0 { (t - self.times[k]) / span } else { 0.0 })
    }

    fn lerp<T>(v: &[T], k: usize, s: f64) -> T
    where
        T: Clone + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
    {
        if s == 0.0 {
            return v[k].clone();
        }
        v[k].clone() * (1.0 - s) + v[k + 1].clone() * s
    }

    pub fn gain_at(&self, t: f64) -> DMatrix<f64> {
        let (k, s) = self.locate(t);
        Self::lerp(&self.gains, k, s)
    }

    pub fn reference_at(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        let (k, s) = self.locate(t);
        (Self::lerp(&self.x_ref, k, s), Self::lerp(&self.u_ref, k, s))
    }

    /// `u*(t) + K(t) (x - x*(t))`, with `t` clamped to the horizon.
    pub fn feedback(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        let (k, s) = self.locate(t);
        let kk = Self::lerp(&self.gains, k, s);
        let xr = Self::lerp(&self.x_ref, k, s);
        let ur = Self::lerp(&self.u_ref, k, s);
        ur + kk * (x - xr)
    }
}

/// Diagonal Riccati weights from the task cost.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrWeights {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
}

impl LqrWeights {
    pub fn from_cost(cost: &CostSpec) -> Self {
        let q = DMatrix::from_diagonal(&cost.state_weights);
        let qf = match &cost.terminal_weights {
            Some(w) => DMatrix::from_diagonal(w),
            None => q.clone(),
        };
        LqrWeights {
            q,
            r: DMatrix::from_diagonal(&cost.control_weights),
            qf,
        }
    }
}

/// Grid with at most `max_step` spacing inside each phase.
pub fn phase_grid(traj: &TrajectorySolution, max_step: f64) -> (Vec<f64>, Vec<usize>) {
    let mut times = Vec::new();
    let mut phases = Vec::new();
    for p in 0..traj.n_phases() {
        let (t0, t1) = traj.phase_window(p);
        let m = (((t1 - t0) / max_step).ceil() as usize).max(1);
        for i in 0..=m {
            times.push(if i == m { t1 } else { t0 + (t1 - t0) * i as f64 / m as f64 });
            phases.push(p);
        }
    }
    (times, phases)
}

/// Midpoint residual the synthesized schedule is refined to.
pub const RESIDUAL_TARGET: f64 = 5e-5;
const MAX_REFINEMENTS: usize = 16;

struct Knot {
    t: f64,
    phase: usize,
    x: DVector<f64>,
    u: DVector<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

fn knot(model: &RobotModel, traj: &TrajectorySolution, t: f64, phase: usize) -> Result<Knot> {
    let x = traj.state_at(t);
    let u = traj.control_at(t);
    let (a, b) = linearize(model, &x, &u, &traj.phase_contacts[phase], LINEARIZATION_STEP)?;
    Ok(Knot { t, phase, x, u, a, b })
}

/// Linearizes along the plan and solves the Riccati equation backwards.
/// Intervals whose midpoint residual exceeds [`RESIDUAL_TARGET`] are bisected
/// and re-solved.
pub fn synthesize(
    model: &RobotModel,
    traj: &TrajectorySolution,
    weights: &LqrWeights,
    max_step: f64,
) -> Result<(GainSchedule, LinearizedPath, RiccatiSolution)> {
    let (times, phases) = phase_grid(traj, max_step);
    let mut knots = times
        .iter()
        .zip(&phases)
        .map(|(&t, &p)| knot(model, traj, t, p))
        .collect::<Result<Vec<_>>>()?;
    let mut round = 0;
    loop {
        let path = LinearizedPath {
            times: knots.iter().map(|k| k.t).collect(),
            a: knots.iter().map(|k| k.a.clone()).collect(),
            b: knots.iter().map(|k| k.b.clone()).collect(),
        };
        let sol = riccati_backward(&path, &weights.q, &weights.r, &weights.qf)?;
        let residual = riccati_residual(&path, &weights.q, &weights.r, &sol)?;
        let coarse: Vec<usize> = (0..knots.len() - 1)
            .filter(|&k| knots[k + 1].t > knots[k].t && residual[k] > RESIDUAL_TARGET)
            .collect();
        if coarse.is_empty() || round == MAX_REFINEMENTS {
            if !coarse.is_empty() {
                log::warn!("Riccati residual above {RESIDUAL_TARGET:e} on {} intervals", coarse.len());
            }
            let schedule = GainSchedule {
                times: path.times.clone(),
                phases: knots.iter().map(|k| k.phase).collect(),
                gains: sol.gains.clone(),
                x_ref: knots.iter().map(|k| k.x.clone()).collect(),
                u_ref: knots.iter().map(|k| k.u.clone()).collect(),
            };
            return Ok((schedule, path, sol));
        }
        for &k in coarse.iter().rev() {
            let mid = knot(model, traj, 0.5 * (knots[k].t + knots[k + 1].t), knots[k].phase)?;
            knots.insert(k + 1, mid);
        }
        round += 1;
    }
}

//! Dense strictly convex QP by the Goldfarb–Idnani dual active-set method.
//!
//! minimize ½ dᵀHd + gᵀd  subject to  nᵢᵀd = bᵢ (equalities), nᵢᵀd ≥ bᵢ (inequalities).
//! Constraint normals are sparse rows or signed unit vectors (variable bounds).

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub enum Normal {
    Sparse(Vec<(usize, f64)>),
    /// `sign * e_i`.
    Unit(usize, f64),
}

impl Normal {
    pub fn dot(&self, x: &DVector<f64>) -> f64 {
        match self {
            Normal::Sparse(v) => v.iter().map(|&(i, a)| a * x[i]).sum(),
            Normal::Unit(i, s) => s * x[*i],
        }
    }

    fn norm_squared(&self) -> f64 {
        match self {
            Normal::Sparse(v) => v.iter().map(|&(_, a)| a * a).sum(),
            Normal::Unit(_, s) => s * s,
        }
    }

    /// `Jᵀ n`.
    fn project(&self, j: &DMatrix<f64>, out: &mut DVector<f64>) {
        out.fill(0.0);
        match self {
            Normal::Sparse(v) => {
                for &(i, a) in v {
                    out.axpy(a, &j.row(i).transpose(), 1.0);
                }
            }
            Normal::Unit(i, s) => out.axpy(*s, &j.row(*i).transpose(), 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub normal: Normal,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub eq: Vec<Constraint>,
    pub ineq: Vec<Constraint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
    /// `H` is not positive definite.
    NotConvex,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub status: QpStatus,
    pub d: DVector<f64>,
    /// Multipliers of the equalities, in order.
    pub eq_mult: DVector<f64>,
    /// Non-negative multipliers of the inequalities, in order.
    pub ineq_mult: DVector<f64>,
}

const DEP_TOL: f64 = 1e-10;

struct Factors {
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    r_norm: f64,
}

impl Factors {
    /// Columns `iq..n` of `J` times `d[iq..n]`.
    fn primal_direction(&self, d: &DVector<f64>, iq: usize) -> DVector<f64> {
        let n = d.len();
        self.j.columns(iq, n - iq) * d.rows(iq, n - iq)
    }

    fn dual_direction(&self, d: &DVector<f64>, iq: usize) -> DVector<f64> {
        let mut r = DVector::zeros(iq);
        for i in (0..iq).rev() {
            let mut s = d[i];
            for k in i + 1..iq {
                s -= self.r[(i, k)] * r[k];
            }
            r[i] = s / self.r[(i, i)];
        }
        r
    }

    /// Rotate `d[iq..]` into `d[iq]`, append it as column `iq` of `R`.
    fn add(&mut self, d: &mut DVector<f64>, iq: usize) -> bool {
        let n = d.len();
        for j in (iq + 1..n).rev() {
            let (mut cc, mut ss) = (d[j - 1], d[j]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            d[j] = 0.0;
            ss /= h;
            cc /= h;
            if cc < 0.0 {
                cc = -cc;
                ss = -ss;
                d[j - 1] = -h;
            } else {
                d[j - 1] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in 0..n {
                let t1 = self.j[(k, j - 1)];
                let t2 = self.j[(k, j)];
                let a = t1 * cc + t2 * ss;
                self.j[(k, j - 1)] = a;
                self.j[(k, j)] = xny * (t1 + a) - t2;
            }
        }
        for i in 0..=iq {
            self.r[(i, iq)] = d[i];
        }
        if d[iq].abs() <= f64::EPSILON * self.r_norm {
            return false;
        }
        self.r_norm = self.r_norm.max(d[iq].abs());
        true
    }

    /// Remove active column `qq` of `R` (out of `iq`), restoring triangularity.
    fn remove(&mut self, qq: usize, iq: usize) {
        let n = self.j.nrows();
        for i in qq..iq - 1 {
            for k in 0..=i + 1 {
                self.r[(k, i)] = self.r[(k, i + 1)];
            }
        }
        for k in 0..iq {
            self.r[(k, iq - 1)] = 0.0;
        }
        let iq = iq - 1;
        for j in qq..iq {
            let (mut cc, mut ss) = (self.r[(j, j)], self.r[(j + 1, j)]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            cc /= h;
            ss /= h;
            self.r[(j + 1, j)] = 0.0;
            if cc < 0.0 {
                self.r[(j, j)] = -h;
                cc = -cc;
                ss = -ss;
            } else {
                self.r[(j, j)] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in j + 1..iq {
                let t1 = self.r[(j, k)];
                let t2 = self.r[(j + 1, k)];
                let a = t1 * cc + t2 * ss;
                self.r[(j, k)] = a;
                self.r[(j + 1, k)] = xny * (t1 + a) - t2;
            }
            for k in 0..n {
                let t1 = self.j[(k, j)];
                let t2 = self.j[(k, j + 1)];
                let a = t1 * cc + t2 * ss;
                self.j[(k, j)] = a;
                self.j[(k, j + 1)] = xny * (a + t1) - t2;
            }
        }
    }
}

/// Active constraint: equality `i` or inequality `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Active {
    Eq(usize),
    Ineq(usize),
}

pub fn solve_qp(qp: &QpProblem, max_iter: usize) -> QpSolution {
    let n = qp.g.len();
    let fail = |status| QpSolution {
        status,
        d: DVector::zeros(n),
        eq_mult: DVector::zeros(qp.eq.len()),
        ineq_mult: DVector::zeros(qp.ineq.len()),
    };
    let Some(chol) = qp.h.clone().cholesky() else {
        return fail(QpStatus::NotConvex);
    };
    let lt = chol.l().transpose();
    let Some(j) = lt.solve_upper_triangular(&DMatrix::identity(n, n)) else {
        return fail(QpStatus::NotConvex);
    };
    let mut f = Factors {
        j,
        r: DMatrix::zeros(n + 1, n + 1),
        r_norm: 1.0,
    };
    let mut x = -chol.solve(&qp.g);
    let mut active: Vec<Active> = Vec::with_capacity(n);
    let mut u: Vec<f64> = Vec::with_capacity(n + 1);
    let mut d = DVector::zeros(n);
    let mut eq_mult = DVector::zeros(qp.eq.len());

    for (i, c) in qp.eq.iter().enumerate() {
        let iq = active.len();
        c.normal.project(&f.j, &mut d);
        let tail = d.rows(iq, n - iq).norm();
        let resid = c.rhs - c.normal.dot(&x);
        if tail <= DEP_TOL * d.norm().max(c.normal.norm_squared().sqrt()) {
            // dependent on the active equalities
            if resid.abs() > 1e-8 * (1.0 + c.rhs.abs()) {
                return fail(QpStatus::Infeasible);
            }
            continue;
        }
        let z = f.primal_direction(&d, iq);
        let r = f.dual_direction(&d, iq);
        let t2 = resid / c.normal.dot(&z);
        x.axpy(t2, &z, 1.0);
        for k in 0..iq {
            u[k] -= t2 * r[k];
        }
        u.push(t2);
        if !f.add(&mut d, iq) {
            u.pop();
            continue;
        }
        active.push(Active::Eq(i));
    }
    let n_eq_active = active.len();

    let mut iter = 0;
    let slack = |x: &DVector<f64>, i: usize| qp.ineq[i].normal.dot(x) - qp.ineq[i].rhs;
    let mut is_active = vec![false; qp.ineq.len()];
    loop {
        // most violated inequality, scaled by its normal
        let mut worst = None;
        let mut worst_s = 0.0;
        for i in 0..qp.ineq.len() {
            if is_active[i] {
                continue;
            }
            let s = slack(&x, i);
            let scale = qp.ineq[i].normal.norm_squared().sqrt().max(1e-300);
            let tol = 1e-12 * (1.0 + qp.ineq[i].rhs.abs());
            if s < -tol && s / scale < worst_s {
                worst_s = s / scale;
                worst = Some(i);
            }
        }
        let Some(ip) = worst else { break };
        let mut s_ip = slack(&x, ip);
        let np = &qp.ineq[ip].normal;
        u.push(0.0);
        loop {
            iter += 1;
            if iter > max_iter {
                return QpSolution {
                    status: QpStatus::IterationLimit,
                    ..collect(&x, &active, &u, qp, eq_mult)
                };
            }
            let iq = active.len();
            np.project(&f.j, &mut d);
            let z = f.primal_direction(&d, iq);
            let r = f.dual_direction(&d, iq);
            // dual (partial) step
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for k in n_eq_active..iq {
                if r[k] > 0.0 {
                    let t = u[k] / r[k];
                    if t < t1 {
                        t1 = t;
                        drop = Some(k);
                    }
                }
            }
            let zn = np.dot(&z);
            let z_small = z.norm() <= DEP_TOL * (1.0 + d.norm());
            let t2 = if z_small || zn <= 0.0 { f64::INFINITY } else { -s_ip / zn };
            let t = t1.min(t2);
            if !t.is_finite() {
                return fail(QpStatus::Infeasible);
            }
            if t2.is_infinite() {
                for k in 0..iq {
                    u[k] -= t * r[k];
                }
                u[iq] += t;
                let k = drop.expect("finite dual step");
                remove_active(&mut f, &mut active, &mut u, &mut is_active, k);
                continue;
            }
            x.axpy(t, &z, 1.0);
            for k in 0..iq {
                u[k] -= t * r[k];
            }
            u[iq] += t;
            if t == t2 {
                if !f.add(&mut d, iq) {
                    return fail(QpStatus::Infeasible);
                }
                active.push(Active::Ineq(ip));
                is_active[ip] = true;
                break;
            }
            let k = drop.expect("partial step drops a constraint");
            remove_active(&mut f, &mut active, &mut u, &mut is_active, k);
            s_ip = slack(&x, ip);
        }
    }
    for (k, a) in active.iter().enumerate() {
        if let Active::Eq(i) = a {
            eq_mult[*i] = u[k];
        }
    }
    QpSolution {
        status: QpStatus::Optimal,
        ..collect(&x, &active, &u, qp, eq_mult)
    }
}

fn remove_active(f: &mut Factors, active: &mut Vec<Active>, u: &mut Vec<f64>, is_active: &mut [bool], k: usize) {
    let iq = active.len();
    if let Active::Ineq(i) = active[k] {
        is_active[i] = false;
    }
    active.remove(k);
    u.remove(k);
    f.remove(k, iq);
}

fn collect(x: &DVector<f64>, active: &[Active], u: &[f64], qp: &QpProblem, mut eq_mult: DVector<f64>) -> QpSolution {
    let mut ineq_mult = DVector::zeros(qp.ineq.len());
    for (k, a) in active.iter().enumerate() {
        match a {
            Active::Eq(i) => eq_mult[*i] = u[k],
            Active::Ineq(i) => ineq_mult[*i] = u[k],
        }
    }
    QpSolution {
        status: QpStatus::Optimal,
        d: x.clone(),
        eq_mult,
        ineq_mult,
    }
}

//! Bound- and range-constrained nonlinear programming.
//!
//! minimize f(y)  subject to  lo ≤ y ≤ hi,  c_lo ≤ c(y) ≤ c_hi.

pub mod qp;
mod sqp;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use sqp::solve;

/// A smooth NLP. Derivatives default to finite differences.
pub trait NlpProblem {
    fn n_vars(&self) -> usize;
    fn n_cons(&self) -> usize;
    fn var_bounds(&self) -> (DVector<f64>, DVector<f64>);
    fn con_bounds(&self) -> (DVector<f64>, DVector<f64>);
    fn objective(&self, y: &DVector<f64>) -> Result<f64>;
    fn constraints(&self, y: &DVector<f64>) -> Result<DVector<f64>>;

    fn gradient(&self, y: &DVector<f64>, step: f64) -> Result<DVector<f64>> {
        fd_gradient(|y| self.objective(y), y, step)
    }

    fn jacobian(&self, y: &DVector<f64>, step: f64) -> Result<DMatrix<f64>> {
        fd_jacobian(|y| self.constraints(y), y, step, self.sparsity().as_deref())
    }

    /// Hessian of `f(y) - λᵀc(y)`. `None` selects a quasi-Newton approximation.
    fn lagrangian_hessian(&self, _y: &DVector<f64>, _lambda: &DVector<f64>, _step: f64) -> Option<Result<DMatrix<f64>>> {
        None
    }

    /// Rows that each variable can affect; lets finite differences perturb
    /// structurally orthogonal columns together.
    fn sparsity(&self) -> Option<Vec<Vec<usize>>> {
        None
    }
}

fn fd_step(step: f64, v: f64) -> f64 {
    step * v.abs().max(1.0)
}

/// Central-difference gradient.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> Result<f64>, y: &DVector<f64>, step: f64) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(y.len());
    let mut yp = y.clone();
    for i in 0..y.len() {
        let h = fd_step(step, y[i]);
        yp[i] = y[i] + h;
        let fp = f(&yp)?;
        yp[i] = y[i] - h;
        let fm = f(&yp)?;
        yp[i] = y[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Greedy partition of columns into groups with pairwise disjoint row sets.
pub fn column_groups(sparsity: &[Vec<usize>], n_rows: usize) -> Vec<Vec<usize>> {
    let mut groups: Vec<(Vec<usize>, Vec<bool>)> = Vec::new();
    for (col, rows) in sparsity.iter().enumerate() {
        let slot = groups.iter().position(|(_, used)| rows.iter().all(|&r| !used[r]));
        let (cols, used) = match slot {
            Some(s) => &mut groups[s],
            None => {
                groups.push((Vec::new(), vec![false; n_rows]));
                groups.last_mut().expect("just pushed")
            }
        };
        cols.push(col);
        for &r in rows {
            used[r] = true;
        }
    }
    groups.into_iter().map(|(c, _)| c).collect()
}

/// Forward-difference Jacobian. With a sparsity pattern, each group of
/// structurally orthogonal columns costs one evaluation.
pub fn fd_jacobian(
    c: impl Fn(&DVector<f64>) -> Result<DVector<f64>>,
    y: &DVector<f64>,
    step: f64,
    sparsity: Option<&[Vec<usize>]>,
) -> Result<DMatrix<f64>> {
    let c0 = c(y)?;
    let m = c0.len();
    let mut jac = DMatrix::zeros(m, y.len());
    let mut yp = y.clone();
    match sparsity {
        None => {
            for i in 0..y.len() {
                yp[i] = y[i] + fd_step(step, y[i]);
                let h = yp[i] - y[i];
                let cp = c(&yp)?;
                yp[i] = y[i];
                jac.set_column(i, &((cp - &c0) / h));
            }
        }
        Some(pattern) => {
            for group in column_groups(pattern, m) {
                for &i in &group {
                    yp[i] = y[i] + fd_step(step, y[i]);
                }
                let cp = c(&yp)?;
                for &i in &group {
                    let h = yp[i] - y[i];
                    for &r in &pattern[i] {
                        jac[(r, i)] = (cp[r] - c0[r]) / h;
                    }
                    yp[i] = y[i];
                }
            }
        }
    }
    Ok(jac)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub max_iterations: usize,
    pub fd_step: f64,
    pub qp_max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            feasibility_tol: 1e-6,
            optimality_tol: 1e-4,
            max_iterations: 500,
            fd_step: 1e-6,
            qp_max_iterations: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverStatus {
    Optimal,
    FeasibleNotOptimal,
    Infeasible,
    IterationLimit,
}

impl SolverStatus {
    pub fn is_feasible(self) -> bool {
        matches!(self, SolverStatus::Optimal | SolverStatus::FeasibleNotOptimal)
    }
}

impl std::fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolverStatus::Optimal => "optimal",
            SolverStatus::FeasibleNotOptimal => "feasible-not-optimal",
            SolverStatus::Infeasible => "infeasible",
            SolverStatus::IterationLimit => "iteration-limit",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    pub status: SolverStatus,
    pub y: Vec<f64>,
    pub objective: f64,
    /// Largest bound violation of `c(y)`.
    pub violation: f64,
    pub kkt_error: f64,
    pub iterations: usize,
    pub wall_time: f64,
    /// Constraint multipliers, positive when a lower bound is active.
    pub multipliers: Vec<f64>,
}

/// Largest violation of `lo ≤ v ≤ hi`.
pub fn max_violation(v: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> f64 {
    v.iter()
        .zip(lo.iter().zip(hi.iter()))
        .map(|(&x, (&a, &b))| if x.is_finite() { (a - x).max(x - b).max(0.0) } else { f64::INFINITY })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests;

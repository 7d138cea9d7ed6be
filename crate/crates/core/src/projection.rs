//! Null-space projected dynamics.
//!
//! With `P = I - Jc⁺ Jc` the contact forces drop out of `P (M qdd + h - Sᵀτ) = 0`, and
//! the remaining constrained directions obey `(I - P) qdd = C qd` with `C = dP/dt`.
//! Both are combined through the constraint inertia `Mc = M + PM - (PM)ᵀ`.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RobotModel;
use crate::rbd::{self, check_dim, DynamicsTerms};

/// Relative singular value cutoff defining the rank of `Jc`.
pub const PINV_CUTOFF: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ProjectionCache {
    pub contacts: Vec<usize>,
    pub m: DMatrix<f64>,
    pub h: DVector<f64>,
    pub jc: DMatrix<f64>,
    pub jc_dot: DMatrix<f64>,
    pub jdot_qd: DVector<f64>,
    pub jc_pinv: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub mc: DMatrix<f64>,
    pub cc: DMatrix<f64>,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactForces {
    /// Stacked `[λx, λy, λz]` per contact, in contact order.
    pub lambda: DVector<f64>,
    pub rank: usize,
    pub rank_deficient: bool,
}

impl ContactForces {
    pub fn contact(&self, k: usize) -> Vector3<f64> {
        self.lambda.fixed_rows::<3>(3 * k).into_owned()
    }

    pub fn len(&self) -> usize {
        self.lambda.len() / 3
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }
}

/// Minimum-norm least-squares solution of `b x = rhs` through a complete
/// orthogonal decomposition (column-pivoted QR, then QR of the kept rows).
/// Pivots below `cutoff` times the largest are treated as zero.
fn min_norm_solve(b: &DMatrix<f64>, rhs: &DMatrix<f64>, cutoff: f64) -> (DMatrix<f64>, usize) {
    let n = b.ncols();
    let qr = b.clone().col_piv_qr();
    let r = qr.r();
    let qm = qr.q();
    let diag = r.nrows().min(r.ncols());
    let r00 = if diag > 0 { r[(0, 0)].abs() } else { 0.0 };
    let rank = (0..diag)
        .take_while(|&i| r00 > 0.0 && r[(i, i)].abs() > cutoff * r00)
        .count();
    let mut z = DMatrix::zeros(n, rhs.ncols());
    if rank > 0 {
        let qtb = qm.columns(0, rank).transpose() * rhs;
        let top = r.rows(0, rank).into_owned();
        if rank == n {
            z = top.solve_upper_triangular(&qtb).expect("nonzero pivots");
        } else {
            // [R11 R12]ᵀ = Z T gives the shortest z.
            let qr2 = top.transpose().qr();
            let w = qr2
                .r()
                .transpose()
                .solve_lower_triangular(&qtb)
                .expect("nonzero pivots");
            z = qr2.q() * w;
        }
    }
    qr.p().inv_permute_rows(&mut z);
    (z, rank)
}

/// Thresholded pseudoinverse and numerical rank.
pub fn pseudo_inverse(a: &DMatrix<f64>, cutoff: f64) -> (DMatrix<f64>, usize) {
    if a.is_empty() {
        return (DMatrix::zeros(a.ncols(), a.nrows()), 0);
    }
    let (x, rank) = min_norm_solve(&a.transpose(), &DMatrix::identity(a.ncols(), a.ncols()), cutoff);
    (x.transpose(), rank)
}

pub fn build_projection(
    model: &RobotModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    contacts: &[usize],
) -> Result<ProjectionCache> {
    let terms = rbd::dynamics_terms(model, q, qd, contacts)?;
    Ok(ProjectionCache::from_terms(terms, contacts))
}

impl ProjectionCache {
    pub fn from_terms(terms: DynamicsTerms, contacts: &[usize]) -> Self {
        let DynamicsTerms {
            m,
            h,
            jc,
            jc_dot,
            jdot_qd,
        } = terms;
        let nv = m.nrows();
        let (jc_pinv, rank) = pseudo_inverse(&jc, PINV_CUTOFF);
        let mut p = DMatrix::identity(nv, nv) - &jc_pinv * &jc;
        p = (&p + p.transpose()) * 0.5;
        let g = &jc_pinv * &jc_dot * &p;
        let c = -(&g + g.transpose());
        let pm = &p * &m;
        let mc = &m + &pm - pm.transpose();
        let cc = &m * &c;
        ProjectionCache {
            contacts: contacts.to_vec(),
            m,
            h,
            jc,
            jc_dot,
            jdot_qd,
            jc_pinv,
            p,
            c,
            mc,
            cc,
            rank,
        }
    }
}

/// `qdd = Mc⁻¹ (P (Sᵀτ - h) + Cc qd)`.
pub fn projected_forward_dynamics(
    model: &RobotModel,
    qd: &DVector<f64>,
    tau: &DVector<f64>,
    cache: &ProjectionCache,
) -> Result<DVector<f64>> {
    check_dim("tau", model.nu(), tau.len())?;
    check_dim("qd", model.nv(), qd.len())?;
    let rhs = &cache.p * (model.actuation(tau) - &cache.h) + &cache.cc * qd;
    let qdd = cache
        .mc
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularConstraintInertia)?;
    if qdd.iter().all(|v| v.is_finite()) {
        Ok(qdd)
    } else {
        Err(Error::SingularConstraintInertia)
    }
}

/// Saddle-point solve of `[[M, Jcᵀ], [Jc, 0]] [qdd; -λ] = [Sᵀτ - h; -J̇ qd]` with a
/// thresholded SVD, giving the minimum-norm multiplier for redundant contacts.
pub fn kkt_oracle(
    model: &RobotModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    tau: &DVector<f64>,
    contacts: &[usize],
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_dim("tau", model.nu(), tau.len())?;
    let t = rbd::dynamics_terms(model, q, qd, contacts)?;
    let nv = model.nv();
    let nc = t.jc.nrows();
    let mut k = DMatrix::zeros(nv + nc, nv + nc);
    k.view_mut((0, 0), (nv, nv)).copy_from(&t.m);
    k.view_mut((0, nv), (nv, nc)).copy_from(&t.jc.transpose());
    k.view_mut((nv, 0), (nc, nv)).copy_from(&t.jc);
    let mut rhs = DVector::zeros(nv + nc);
    rhs.rows_mut(0, nv).copy_from(&(model.actuation(tau) - &t.h));
    rhs.rows_mut(nv, nc).copy_from(&-&t.jdot_qd);
    let svd = k.svd(true, true);
    let tol = 1e-11 * svd.singular_values.max();
    let sol = svd.solve(&rhs, tol).map_err(|e| Error::Solver(e.into()))?;
    let qdd = sol.rows(0, nv).into_owned();
    let lambda = -sol.rows(nv, nc).into_owned();
    Ok((qdd, lambda))
}

/// Contact forces from `Jcᵀ λ = M qdd + h - Sᵀτ` through a rank-revealing QR of `Jcᵀ`.
pub fn recover_contact_forces(
    model: &RobotModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    tau: &DVector<f64>,
    qdd: &DVector<f64>,
    contacts: &[usize],
) -> Result<ContactForces> {
    check_dim("tau", model.nu(), tau.len())?;
    check_dim("qdd", model.nv(), qdd.len())?;
    let t = rbd::dynamics_terms(model, q, qd, contacts)?;
    let b = &t.m * qdd + &t.h - model.actuation(tau);
    Ok(forces_from_residual(&t.jc, &b))
}

/// Minimum-norm solution of `Jcᵀ λ = b` (least squares in the constrained directions).
pub fn forces_from_residual(jc: &DMatrix<f64>, b: &DVector<f64>) -> ContactForces {
    let nc = jc.nrows();
    if nc == 0 {
        return ContactForces {
            lambda: DVector::zeros(0),
            rank: 0,
            rank_deficient: false,
        };
    }
    let (z, rank) = min_norm_solve(&jc.transpose(), &DMatrix::from_column_slice(b.len(), 1, b.as_slice()), PINV_CUTOFF);
    let z = z.column(0).into_owned();
    ContactForces {
        lambda: z,
        rank,
        rank_deficient: rank < nc,
    }
}

/// Joint torques and minimum-norm contact forces that realize `qdd` at this state:
/// the base rows of `M qdd + h = Sᵀτ + Jcᵀλ` fix λ, the joint rows give τ.
pub fn constrained_inverse_dynamics(
    model: &RobotModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    qdd: &DVector<f64>,
    contacts: &[usize],
) -> Result<(DVector<f64>, ContactForces)> {
    check_dim("qdd", model.nv(), qdd.len())?;
    let t = rbd::dynamics_terms(model, q, qd, contacts)?;
    let nb = model.base_dofs();
    let n = model.n_joints();
    let g = &t.m * qdd + &t.h;
    let forces = if nb > 0 && !contacts.is_empty() {
        let jb = t.jc.columns(0, nb).into_owned();
        forces_from_residual(&jb, &g.rows(0, nb).into_owned())
    } else {
        forces_from_residual(&DMatrix::zeros(0, nb), &DVector::zeros(nb))
    };
    let lambda = if forces.lambda.is_empty() {
        DVector::zeros(t.jc.nrows())
    } else {
        forces.lambda.clone()
    };
    let tau = g.rows(nb, n) - t.jc.columns(nb, n).transpose() * &lambda;
    Ok((
        tau,
        ContactForces {
            lambda,
            ..forces
        },
    ))
}

/// `dx/dt = [pose_rate(q, qd); qdd]` under the projected dynamics.
pub fn state_derivative(
    model: &RobotModel,
    x: &DVector<f64>,
    tau: &DVector<f64>,
    contacts: &[usize],
) -> Result<DVector<f64>> {
    let nv = model.nv();
    check_dim("x", 2 * nv, x.len())?;
    let q = x.rows(0, nv).into_owned();
    let qd = x.rows(nv, nv).into_owned();
    let cache = build_projection(model, &q, &qd, contacts)?;
    let qdd = projected_forward_dynamics(model, &qd, tau, &cache)?;
    let mut out = DVector::zeros(2 * nv);
    out.rows_mut(0, nv).copy_from(&rbd::pose_rate(model, &q, &qd)?);
    out.rows_mut(nv, nv).copy_from(&qdd);
    Ok(out)
}

//! Rigid-body dynamics kernels for the floating-base tree.
//!
//! Everything is computed in world coordinates with spatial vectors taken about the
//! world origin, so motion subspace columns of the whole tree live in one frame and
//! the mass matrix is a plain `s_i^T Ic s_j` sum.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3};

use crate::error::{Error, Result};
use crate::model::RobotModel;
use crate::spatial::{
    angular, axis_rotation, cross_force, cross_motion, euler_rates, euler_xyz, linear, motion,
    skew, spatial_inertia, Motion,
};

/// States closer than this (rad) to pitch = ±π/2 are rejected.
pub const EULER_MARGIN: f64 = 1e-3;

/// Link poses and motion subspace for one configuration.
#[derive(Debug, Clone)]
pub struct Kinematics {
    rot: Vec<Matrix3<f64>>,
    pos: Vec<Vector3<f64>>,
    /// Motion subspace column of each dof.
    axes: Vec<Motion>,
    /// World spatial inertia of each link.
    inertia: Vec<Matrix6<f64>>,
}

/// Link velocities and axis rates for one state.
#[derive(Debug, Clone)]
pub struct Velocities {
    link: Vec<Motion>,
    axis_rate: Vec<Motion>,
}

/// Everything the projected dynamics needs at one state.
#[derive(Debug, Clone)]
pub struct DynamicsTerms {
    pub m: DMatrix<f64>,
    pub h: DVector<f64>,
    /// Stacked contact point Jacobians (`3 m_c x nv`).
    pub jc: DMatrix<f64>,
    pub jc_dot: DMatrix<f64>,
    pub jdot_qd: DVector<f64>,
}

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            found,
        })
    }
}

pub fn check_euler(pitch: f64) -> Result<()> {
    let d = (pitch - FRAC_PI_2).rem_euclid(PI);
    if d.min(PI - d) < EULER_MARGIN || !pitch.is_finite() {
        return Err(Error::EulerSingularity {
            pitch,
            margin: EULER_MARGIN,
        });
    }
    Ok(())
}

fn check_contacts(model: &RobotModel, contacts: &[usize]) -> Result<()> {
    match contacts.iter().find(|&&c| c >= model.contact_points().len()) {
        Some(c) => Err(Error::UnknownContact(format!("#{c}"))),
        None => Ok(()),
    }
}

impl Kinematics {
    pub fn new(model: &RobotModel, q: &DVector<f64>) -> Result<Self> {
        check_dim("q", model.nv(), q.len())?;
        let nl = model.links().len();
        let nb = model.base_dofs();
        let mut rot = vec![Matrix3::identity(); nl];
        let mut pos = vec![Vector3::zeros(); nl];
        let mut axes = Vec::with_capacity(model.nv());
        if nb == 6 {
            let p = Vector3::new(q[0], q[1], q[2]);
            let ang = Vector3::new(q[3], q[4], q[5]);
            check_euler(ang.y)?;
            let r = euler_xyz(&ang);
            let b = model.base_link();
            rot[b] = r;
            pos[b] = p;
            for i in 0..3 {
                axes.push(motion(&Vector3::zeros(), &r.column(i).into_owned()));
            }
            let pr = skew(&p) * r;
            for i in 0..3 {
                axes.push(motion(&r.column(i).into_owned(), &pr.column(i).into_owned()));
            }
        }
        for (j, joint) in model.joints().iter().enumerate() {
            let (rp, pp) = (rot[joint.parent], pos[joint.parent]);
            let rj = rp * joint.origin_rotation();
            let pj = pp + rp * joint.origin;
            let a = rj * joint.axis;
            rot[joint.child] = rj * axis_rotation(&joint.axis, q[nb + j]);
            pos[joint.child] = pj;
            axes.push(motion(&a, &pj.cross(&a)));
        }
        let inertia = model
            .links()
            .iter()
            .enumerate()
            .map(|(l, link)| {
                let r = rot[l];
                spatial_inertia(link.mass, &(pos[l] + r * link.com), &(r * link.inertia * r.transpose()))
            })
            .collect();
        Ok(Kinematics {
            rot,
            pos,
            axes,
            inertia,
        })
    }

    pub fn link_rotation(&self, link: usize) -> &Matrix3<f64> {
        &self.rot[link]
    }

    pub fn link_position(&self, link: usize) -> &Vector3<f64> {
        &self.pos[link]
    }

    pub fn contact_position(&self, model: &RobotModel, contact: usize) -> Vector3<f64> {
        let c = &model.contact_points()[contact];
        self.pos[c.link] + self.rot[c.link] * c.offset
    }

    pub fn velocities(&self, model: &RobotModel, qd: &DVector<f64>) -> Velocities {
        let nb = model.base_dofs();
        let mut link = vec![Motion::zeros(); model.links().len()];
        let mut axis_rate = vec![Motion::zeros(); model.nv()];
        let vb = (0..nb).fold(Motion::zeros(), |acc, i| acc + self.axes[i] * qd[i]);
        link[model.base_link()] = vb;
        for i in 0..nb {
            axis_rate[i] = cross_motion(&vb, &self.axes[i]);
        }
        for (j, joint) in model.joints().iter().enumerate() {
            let d = nb + j;
            let v = link[joint.parent] + self.axes[d] * qd[d];
            link[joint.child] = v;
            axis_rate[d] = cross_motion(&v, &self.axes[d]);
        }
        Velocities { link, axis_rate }
    }

    /// Link accelerations for the given `qdd` (or zero) on top of a root acceleration.
    fn accelerations(
        &self,
        model: &RobotModel,
        vel: &Velocities,
        qd: &DVector<f64>,
        qdd: Option<&DVector<f64>>,
        root: Motion,
    ) -> Vec<Motion> {
        let nb = model.base_dofs();
        let term = |d: usize| {
            let mut a = vel.axis_rate[d] * qd[d];
            if let Some(qdd) = qdd {
                a += self.axes[d] * qdd[d];
            }
            a
        };
        let mut acc = vec![Motion::zeros(); model.links().len()];
        acc[model.base_link()] = (0..nb).fold(root, |a, d| a + term(d));
        for (j, joint) in model.joints().iter().enumerate() {
            acc[joint.child] = acc[joint.parent] + term(nb + j);
        }
        acc
    }

    /// Composite-rigid-body mass matrix.
    pub fn mass_matrix(&self, model: &RobotModel) -> DMatrix<f64> {
        let mut ic = self.inertia.clone();
        for joint in model.joints().iter().rev() {
            let child = ic[joint.child];
            ic[joint.parent] += child;
        }
        let nv = model.nv();
        let mut m = DMatrix::zeros(nv, nv);
        for i in 0..nv {
            let li = model.dof_link(i);
            let f = ic[li] * self.axes[i];
            for &j in model.support(li) {
                let v = self.axes[j].dot(&f);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// Recursive Newton-Euler inverse dynamics, `M qdd + h`.
    pub fn inverse_dynamics(
        &self,
        model: &RobotModel,
        vel: &Velocities,
        qd: &DVector<f64>,
        qdd: Option<&DVector<f64>>,
        gravity: &Vector3<f64>,
    ) -> DVector<f64> {
        let root = motion(&Vector3::zeros(), &-gravity);
        let acc = self.accelerations(model, vel, qd, qdd, root);
        let mut f: Vec<Motion> = (0..model.links().len())
            .map(|l| {
                let iv = self.inertia[l] * vel.link[l];
                self.inertia[l] * acc[l] + cross_force(&vel.link[l], &iv)
            })
            .collect();
        for joint in model.joints().iter().rev() {
            let child = f[joint.child];
            f[joint.parent] += child;
        }
        DVector::from_iterator(
            model.nv(),
            (0..model.nv()).map(|d| self.axes[d].dot(&f[model.dof_link(d)])),
        )
    }

    /// Stacked translational point Jacobians of `contacts`.
    pub fn contact_jacobian(&self, model: &RobotModel, contacts: &[usize]) -> DMatrix<f64> {
        let mut jc = DMatrix::zeros(3 * contacts.len(), model.nv());
        for (k, &c) in contacts.iter().enumerate() {
            let p = self.contact_position(model, c);
            for &d in model.support(model.contact_points()[c].link) {
                let s = &self.axes[d];
                let col = linear(s) + angular(s).cross(&p);
                jc.fixed_view_mut::<3, 1>(3 * k, d).copy_from(&col);
            }
        }
        jc
    }

    /// Time derivative of [`Kinematics::contact_jacobian`] along `vel`.
    pub fn contact_jacobian_derivative(
        &self,
        model: &RobotModel,
        vel: &Velocities,
        contacts: &[usize],
    ) -> DMatrix<f64> {
        let mut jd = DMatrix::zeros(3 * contacts.len(), model.nv());
        for (k, &c) in contacts.iter().enumerate() {
            let link = model.contact_points()[c].link;
            let p = self.contact_position(model, c);
            let v = &vel.link[link];
            let pdot = linear(v) + angular(v).cross(&p);
            for &d in model.support(link) {
                let (s, sd) = (&self.axes[d], &vel.axis_rate[d]);
                let col = linear(sd) + angular(sd).cross(&p) + angular(s).cross(&pdot);
                jd.fixed_view_mut::<3, 1>(3 * k, d).copy_from(&col);
            }
        }
        jd
    }

    /// Contact point acceleration at zero `qdd` and zero gravity.
    pub fn jdot_qd(
        &self,
        model: &RobotModel,
        vel: &Velocities,
        qd: &DVector<f64>,
        contacts: &[usize],
    ) -> DVector<f64> {
        let acc = self.accelerations(model, vel, qd, None, Motion::zeros());
        let mut out = DVector::zeros(3 * contacts.len());
        for (k, &c) in contacts.iter().enumerate() {
            let link = model.contact_points()[c].link;
            let p = self.contact_position(model, c);
            let (v, a) = (&vel.link[link], &acc[link]);
            let pdot = linear(v) + angular(v).cross(&p);
            let pdd = linear(a) + angular(a).cross(&p) + angular(v).cross(&pdot);
            out.fixed_rows_mut::<3>(3 * k).copy_from(&pdd);
        }
        out
    }
}

pub fn mass_matrix(model: &RobotModel, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    Ok(Kinematics::new(model, q)?.mass_matrix(model))
}

pub fn bias_vector(
    model: &RobotModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    gravity: &Vector3<f64>,
) -> Result<DVector<f64>> {
    check_dim("qd", model.nv(), qd.len())?;
    let kin = Kinematics::new(model, q)?;
    let vel = kin.velocities(model, qd);
    Ok(kin.inverse_dynamics(model, &vel, qd, None, gravity))
}

/// `M(q) qdd + h(q, qd)` using the model's gravity.
pub fn inverse_dynamics(
    model: &RobotModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    qdd: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim("qd", model.nv(), qd.len())?;
    check_dim("qdd", model.nv(), qdd.len())?;
    let kin = Kinematics::new(model, q)?;
    let vel = kin.velocities(model, qd);
    Ok(kin.inverse_dynamics(model, &vel, qd, Some(qdd), &model.gravity()))
}

pub fn contact_jacobian(model: &RobotModel, q: &DVector<f64>, contacts: &[usize]) -> Result<DMatrix<f64>> {
    check_contacts(model, contacts)?;
    Ok(Kinematics::new(model, q)?.contact_jacobian(model, contacts))
}

pub fn jdot_qd(
    model: &RobotModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    contacts: &[usize],
) -> Result<DVector<f64>> {
    check_contacts(model, contacts)?;
    check_dim("qd", model.nv(), qd.len())?;
    let kin = Kinematics::new(model, q)?;
    let vel = kin.velocities(model, qd);
    Ok(kin.jdot_qd(model, &vel, qd, contacts))
}

/// World z of a contact point (flat ground at z = 0).
pub fn contact_height(model: &RobotModel, q: &DVector<f64>, contact: usize) -> Result<f64> {
    check_contacts(model, &[contact])?;
    Ok(Kinematics::new(model, q)?.contact_position(model, contact).z)
}

/// `dq/dt` for a generalized velocity: base position rate in world, Euler rates, joint rates.
pub fn pose_rate(model: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("q", model.nv(), q.len())?;
    check_dim("qd", model.nv(), qd.len())?;
    let mut out = qd.clone();
    if !model.fixed_base() {
        let ang = Vector3::new(q[3], q[4], q[5]);
        check_euler(ang.y)?;
        let v = euler_xyz(&ang) * Vector3::new(qd[0], qd[1], qd[2]);
        let rates = euler_rates(&ang, &Vector3::new(qd[3], qd[4], qd[5]));
        out.fixed_rows_mut::<3>(0).copy_from(&v);
        out.fixed_rows_mut::<3>(3).copy_from(&rates);
    }
    Ok(out)
}

pub fn dynamics_terms(
    model: &RobotModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    contacts: &[usize],
) -> Result<DynamicsTerms> {
    check_contacts(model, contacts)?;
    check_dim("qd", model.nv(), qd.len())?;
    let kin = Kinematics::new(model, q)?;
    let vel = kin.velocities(model, qd);
    Ok(DynamicsTerms {
        m: kin.mass_matrix(model),
        h: kin.inverse_dynamics(model, &vel, qd, None, &model.gravity()),
        jc: kin.contact_jacobian(model, contacts),
        jc_dot: kin.contact_jacobian_derivative(model, &vel, contacts),
        jdot_qd: kin.jdot_qd(model, &vel, qd, contacts),
    })
}

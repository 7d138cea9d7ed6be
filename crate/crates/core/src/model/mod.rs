//! Robot description: a rigid-link tree rooted at a (floating or welded) base, revolute
//! joints, point contacts and configuration-dependent torque limits.
//!
//! Generalized coordinates for a floating base are `[p (3); XYZ Euler (3); joints (n)]`.
//! The generalized velocity pairs the base twist in the base frame
//! `[linear (3); angular (3)]` with the joint rates.

mod format;
mod torque;

pub use format::{load_model, parse_model, serialize_model};
pub use torque::{max_torque, min_torque, TorqueCurve, TorqueLimitCurve};

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::spatial;

#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub name: String,
    pub mass: f64,
    /// Center of mass in the link frame.
    pub com: Vector3<f64>,
    /// Rotational inertia about the COM, link-frame axes.
    pub inertia: Matrix3<f64>,
    /// Joint connecting this link to its parent; `None` for the base.
    pub parent_joint: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub name: String,
    pub parent: usize,
    pub child: usize,
    /// Unit rotation axis in the joint frame.
    pub axis: Vector3<f64>,
    /// Joint frame origin in the parent link frame.
    pub origin: Vector3<f64>,
    /// Fixed roll/pitch/yaw of the joint frame relative to the parent link.
    pub rpy: Vector3<f64>,
    pub position_limits: (f64, f64),
    pub velocity_limit: f64,
    origin_rotation: Matrix3<f64>,
}

impl JointSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        parent: usize,
        child: usize,
        axis: Vector3<f64>,
        origin: Vector3<f64>,
        rpy: Vector3<f64>,
        position_limits: (f64, f64),
        velocity_limit: f64,
    ) -> Self {
        JointSpec {
            name: name.into(),
            parent,
            child,
            axis,
            origin,
            rpy,
            position_limits,
            velocity_limit,
            origin_rotation: spatial::rpy(&rpy),
        }
    }

    pub fn origin_rotation(&self) -> &Matrix3<f64> {
        &self.origin_rotation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactPointSpec {
    pub label: String,
    pub link: usize,
    /// Offset of the contact point in the link frame.
    pub offset: Vector3<f64>,
}

/// Validated, immutable robot description.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    name: String,
    fixed_base: bool,
    gravity: Vector3<f64>,
    links: Vec<LinkSpec>,
    joints: Vec<JointSpec>,
    contact_points: Vec<ContactPointSpec>,
    torque_limits: Vec<TorqueLimitCurve>,
    base: usize,
    /// Ancestor dofs of each link, root first, including the link's own dofs.
    support: Vec<Vec<usize>>,
}

pub const DEFAULT_GRAVITY: [f64; 3] = [0.0, 0.0, -9.81];

impl RobotModel {
    /// Builds a model and checks every structural and physical invariant.
    pub fn new(
        name: impl Into<String>,
        fixed_base: bool,
        gravity: Vector3<f64>,
        mut links: Vec<LinkSpec>,
        joints: Vec<JointSpec>,
        contact_points: Vec<ContactPointSpec>,
        mut torque_limits: Vec<TorqueLimitCurve>,
    ) -> Result<Self> {
        let name = name.into();
        let invalid = |msg: String| Error::InvalidModel(msg);
        if links.is_empty() {
            return Err(invalid("model has no links".into()));
        }
        if !gravity.iter().all(|g| g.is_finite()) {
            return Err(invalid("gravity must be finite".into()));
        }
        unique_names(links.iter().map(|l| l.name.as_str()), "link")?;
        unique_names(joints.iter().map(|j| j.name.as_str()), "joint")?;
        unique_names(contact_points.iter().map(|c| c.label.as_str()), "contact point")?;

        for link in &links {
            if !(link.mass.is_finite() && link.mass > 0.0) {
                return Err(invalid(format!(
                    "link `{}` mass must be positive, found {}",
                    link.name, link.mass
                )));
            }
            if !link.com.iter().all(|v| v.is_finite()) {
                return Err(invalid(format!("link `{}` COM is not finite", link.name)));
            }
            check_inertia(&link.name, &link.inertia)?;
        }

        let mut parent_joint = vec![None; links.len()];
        let mut attached = vec![false; links.len()];
        for (j, joint) in joints.iter().enumerate() {
            if joint.parent >= links.len() || joint.child >= links.len() {
                return Err(invalid(format!("joint `{}` references a missing link", joint.name)));
            }
            if joint.parent == joint.child {
                return Err(invalid(format!("joint `{}` connects a link to itself", joint.name)));
            }
            if parent_joint[joint.child].is_some() {
                return Err(invalid(format!(
                    "link `{}` has more than one parent joint",
                    links[joint.child].name
                )));
            }
            parent_joint[joint.child] = Some(j);
            if (joint.axis.norm() - 1.0).abs() > 1e-9 {
                return Err(invalid(format!("joint `{}` axis is not a unit vector", joint.name)));
            }
            if !joint.origin.iter().chain(joint.rpy.iter()).all(|v| v.is_finite()) {
                return Err(invalid(format!("joint `{}` origin is not finite", joint.name)));
            }
            let (lo, hi) = joint.position_limits;
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(invalid(format!("joint `{}` position limits are not ordered", joint.name)));
            }
            if !(joint.velocity_limit > 0.0) {
                return Err(invalid(format!("joint `{}` velocity limit must be positive", joint.name)));
            }
        }
        let roots: Vec<usize> = (0..links.len()).filter(|&l| parent_joint[l].is_none()).collect();
        if roots.len() != 1 {
            return Err(invalid(format!(
                "expected exactly one base link without a parent joint, found {}",
                roots.len()
            )));
        }
        let base = roots[0];
        // Joints must appear parent-first, which also rules out cycles.
        attached[base] = true;
        for joint in &joints {
            if !attached[joint.parent] {
                return Err(invalid(format!(
                    "joint `{}`: parent link `{}` is not attached to the base by an earlier joint",
                    joint.name, links[joint.parent].name
                )));
            }
            attached[joint.child] = true;
        }
        for (link, pj) in links.iter_mut().zip(&parent_joint) {
            link.parent_joint = *pj;
        }
        if !fixed_base && !is_positive_definite(&links[base].inertia) {
            return Err(invalid(
                "a floating base link needs a positive definite rotational inertia".into(),
            ));
        }

        for c in &contact_points {
            if c.link >= links.len() {
                return Err(invalid(format!("contact `{}` references a missing link", c.label)));
            }
            if !c.offset.iter().all(|v| v.is_finite()) {
                return Err(invalid(format!("contact `{}` offset is not finite", c.label)));
            }
        }

        torque_limits.sort_by_key(|t| t.joint);
        for w in torque_limits.windows(2) {
            if w[0].joint == w[1].joint {
                return Err(invalid(format!(
                    "joint `{}` has more than one torque limit",
                    joints[w[0].joint].name
                )));
            }
        }
        for t in &torque_limits {
            if t.joint >= joints.len() {
                return Err(invalid("torque limit references a missing joint".into()));
            }
            let jname = &joints[t.joint].name;
            t.max
                .validate()
                .map_err(|m| invalid(format!("torque limit of `{jname}`: {m}")))?;
            if let Some(min) = &t.min {
                min.validate()
                    .map_err(|m| invalid(format!("torque limit of `{jname}`: {m}")))?;
            }
        }

        let base_dofs = if fixed_base { 0 } else { 6 };
        let mut support = vec![Vec::new(); links.len()];
        support[base] = (0..base_dofs).collect();
        for (j, joint) in joints.iter().enumerate() {
            let mut s = support[joint.parent].clone();
            s.push(base_dofs + j);
            support[joint.child] = s;
        }

        Ok(RobotModel {
            name,
            fixed_base,
            gravity,
            links,
            joints,
            contact_points,
            torque_limits,
            base,
            support,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn fixed_base(&self) -> bool {
        self.fixed_base
    }

    pub fn gravity(&self) -> Vector3<f64> {
        self.gravity
    }

    /// Same model with a different gravity vector.
    pub fn with_gravity(&self, gravity: Vector3<f64>) -> Self {
        RobotModel {
            gravity,
            ..self.clone()
        }
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    pub fn contact_points(&self) -> &[ContactPointSpec] {
        &self.contact_points
    }

    pub fn torque_limits(&self) -> &[TorqueLimitCurve] {
        &self.torque_limits
    }

    pub fn torque_limit(&self, joint: usize) -> Option<&TorqueLimitCurve> {
        self.torque_limits.iter().find(|t| t.joint == joint)
    }

    pub fn base_link(&self) -> usize {
        self.base
    }

    /// Number of actuated joints `n`.
    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    /// Number of unactuated base coordinates (6, or 0 for a welded base).
    pub fn base_dofs(&self) -> usize {
        if self.fixed_base {
            0
        } else {
            6
        }
    }

    /// Generalized coordinate / velocity dimension (`n + 6`, or `n` for a welded base).
    pub fn nv(&self) -> usize {
        self.base_dofs() + self.n_joints()
    }

    pub fn nx(&self) -> usize {
        2 * self.nv()
    }

    pub fn nu(&self) -> usize {
        self.n_joints()
    }

    pub fn joint_dof(&self, joint: usize) -> usize {
        self.base_dofs() + joint
    }

    pub(crate) fn support(&self, link: usize) -> &[usize] {
        &self.support[link]
    }

    /// Link whose motion a dof describes.
    pub(crate) fn dof_link(&self, dof: usize) -> usize {
        if dof < self.base_dofs() {
            self.base
        } else {
            self.joints[dof - self.base_dofs()].child
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    pub fn contact_index(&self, label: &str) -> Result<usize> {
        self.contact_points
            .iter()
            .position(|c| c.label == label)
            .ok_or_else(|| Error::UnknownContact(label.to_owned()))
    }

    /// Actuation selection `S` (`n x nv`).
    pub fn selection_matrix(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.n_joints(), self.nv());
        for j in 0..self.n_joints() {
            s[(j, self.joint_dof(j))] = 1.0;
        }
        s
    }

    /// `S^T tau`: joint torques as a generalized force.
    pub fn actuation(&self, tau: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.nv());
        out.rows_mut(self.base_dofs(), self.n_joints()).copy_from(tau);
        out
    }
}

fn unique_names<'a>(names: impl Iterator<Item = &'a str>, what: &str) -> Result<()> {
    let mut seen: Vec<&str> = Vec::new();
    for n in names {
        if seen.contains(&n) {
            return Err(Error::InvalidModel(format!("duplicate {what} name `{n}`")));
        }
        seen.push(n);
    }
    Ok(())
}

fn check_inertia(name: &str, inertia: &Matrix3<f64>) -> Result<()> {
    if !inertia.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidModel(format!("link `{name}` inertia is not finite")));
    }
    let scale = inertia.abs().max().max(1e-300);
    if (inertia - inertia.transpose()).abs().max() > 1e-12 * scale {
        return Err(Error::InvalidModel(format!("link `{name}` inertia is not symmetric")));
    }
    // Point masses (zero rotational inertia) are allowed.
    let eig = SymmetricEigen::new(*inertia).eigenvalues;
    if eig.min() < -1e-12 * scale {
        return Err(Error::InvalidModel(format!(
            "link `{name}` inertia is not positive semidefinite"
        )));
    }
    Ok(())
}

fn is_positive_definite(m: &Matrix3<f64>) -> bool {
    m.cholesky().is_some()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn pendulum(fixed_base: bool) -> RobotModel {
        let links = vec![
            LinkSpec {
                name: "base".into(),
                mass: 1.0,
                com: Vector3::zeros(),
                inertia: Matrix3::identity() * 0.01,
                parent_joint: None,
            },
            LinkSpec {
                name: "bob".into(),
                mass: 1.0,
                com: Vector3::new(0.0, 0.0, -1.0),
                inertia: Matrix3::zeros(),
                parent_joint: None,
            },
        ];
        let joints = vec![JointSpec::new(
            "hinge",
            0,
            1,
            Vector3::y(),
            Vector3::zeros(),
            Vector3::zeros(),
            (-10.0, 10.0),
            20.0,
        )];
        RobotModel::new(
            "pendulum",
            fixed_base,
            Vector3::from(DEFAULT_GRAVITY),
            links,
            joints,
            vec![],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn coordinate_counts() {
        let m = pendulum(true);
        assert_eq!((m.n_joints(), m.nv(), m.nx()), (1, 1, 2));
        let m = pendulum(false);
        assert_eq!((m.n_joints(), m.nv(), m.nx()), (1, 7, 14));
        assert_eq!(m.joint_dof(0), 6);
        assert_eq!(m.support(1), &[0, 1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn selection_zeroes_base_coordinates() {
        let m = pendulum(false);
        let tau = DVector::from_element(1, 3.5);
        let g = m.actuation(&tau);
        assert!(g.rows(0, 6).iter().all(|v| *v == 0.0));
        assert_eq!(g[6], 3.5);
        assert_eq!(m.selection_matrix().transpose() * &tau, g);
    }

    #[test]
    fn rejects_negative_mass() {
        let m = pendulum(true);
        let mut links = m.links().to_vec();
        links[1].mass = -1.0;
        let err = RobotModel::new("p", true, m.gravity(), links, m.joints().to_vec(), vec![], vec![])
            .unwrap_err();
        assert!(err.to_string().contains("mass must be positive"), "{err}");
    }

    #[test]
    fn rejects_two_roots_and_cycles() {
        let m = pendulum(true);
        let err = RobotModel::new("p", true, m.gravity(), m.links().to_vec(), vec![], vec![], vec![])
            .unwrap_err();
        assert!(err.to_string().contains("exactly one base"), "{err}");
        let mut joints = m.joints().to_vec();
        let mut back = joints[0].clone();
        back.name = "back".into();
        back.parent = 1;
        back.child = 0;
        joints.push(back);
        assert!(RobotModel::new("p", true, m.gravity(), m.links().to_vec(), joints, vec![], vec![])
            .is_err());
    }

    #[test]
    fn rejects_asymmetric_inertia() {
        let m = pendulum(true);
        let mut links = m.links().to_vec();
        links[1].inertia[(0, 1)] = 0.3;
        assert!(RobotModel::new("p", true, m.gravity(), links, m.joints().to_vec(), vec![], vec![])
            .is_err());
    }
}

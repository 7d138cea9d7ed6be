//! Random fixtures and independent reference computations used by the test suites.
//!
//! The oracles here rebuild kinematics from `nalgebra` isometries and classical
//! geometric Jacobians; they share no code with the spatial-algebra kernels.

pub mod fixtures {
    use nalgebra::{DVector, Matrix3, Vector3};
    use rand::Rng;

    use crate::model::{
        ContactPointSpec, JointSpec, LinkSpec, RobotModel, DEFAULT_GRAVITY,
    };

    fn vec3(rng: &mut impl Rng, r: f64) -> Vector3<f64> {
        Vector3::from_fn(|_, _| rng.random_range(-r..r))
    }

    fn inertia(rng: &mut impl Rng) -> Matrix3<f64> {
        let a = Matrix3::from_fn(|_, _| rng.random_range(-0.3..0.3));
        a * a.transpose() + Matrix3::identity() * 0.02
    }

    /// Random tree with `n_joints` revolute joints, one contact point per link.
    pub fn random_tree(rng: &mut impl Rng, n_joints: usize, floating: bool) -> RobotModel {
        let links: Vec<LinkSpec> = (0..=n_joints)
            .map(|l| LinkSpec {
                name: format!("l{l}"),
                mass: rng.random_range(0.5..3.0),
                com: vec3(rng, 0.3),
                inertia: inertia(rng),
                parent_joint: None,
            })
            .collect();
        let joints = (0..n_joints)
            .map(|j| {
                let parent = rng.random_range(0..=j);
                let axis = loop {
                    let a = vec3(rng, 1.0);
                    if a.norm() > 0.1 {
                        break a.normalize();
                    }
                };
                JointSpec::new(
                    format!("j{j}"),
                    parent,
                    j + 1,
                    axis,
                    vec3(rng, 0.5),
                    vec3(rng, 1.0),
                    (f64::NEG_INFINITY, f64::INFINITY),
                    f64::INFINITY,
                )
            })
            .collect();
        let contacts = (0..=n_joints)
            .map(|l| ContactPointSpec {
                label: format!("c{l}"),
                link: l,
                offset: vec3(rng, 0.4),
            })
            .collect();
        RobotModel::new(
            "random",
            !floating,
            Vector3::from(DEFAULT_GRAVITY),
            links,
            joints,
            contacts,
            vec![],
        )
        .expect("random tree is valid")
    }

    /// Random `(q, qd)` with base pitch well away from the Euler singularity.
    pub fn random_state(rng: &mut impl Rng, model: &RobotModel) -> (DVector<f64>, DVector<f64>) {
        let q = DVector::from_fn(model.nv(), |_, _| rng.random_range(-1.2..1.2));
        let qd = DVector::from_fn(model.nv(), |_, _| rng.random_range(-1.0..1.0));
        (q, qd)
    }

    /// Symmetric four-foot stance of the bundled quadruped with feet on the ground
    /// below the hips and the trunk at `height`.
    pub fn quadruped_stance(model: &RobotModel, height: f64) -> DVector<f64> {
        let leg = 0.7;
        let theta = (height / leg).acos();
        let mut q = DVector::zeros(model.nv());
        q[2] = height;
        for l in 0..4 {
            let sign = if l < 2 { 1.0 } else { -1.0 };
            q[6 + 3 * l + 1] = sign * theta;
            q[6 + 3 * l + 2] = -sign * 2.0 * theta;
        }
        q
    }
}

pub mod oracle {
    use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, Point3, Translation3, UnitQuaternion, Vector3};

    use crate::model::RobotModel;

    /// Base pose from `[p; XYZ Euler]`, composed from elementary quaternions.
    pub fn base_pose(model: &RobotModel, q: &DVector<f64>) -> Isometry3<f64> {
        if model.fixed_base() {
            return Isometry3::identity();
        }
        let r = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), q[3])
            * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), q[4])
            * UnitQuaternion::from_axis_angle(&Vector3::z_axis(), q[5]);
        Isometry3::from_parts(Translation3::new(q[0], q[1], q[2]), r)
    }

    /// World pose of every link frame and of every joint frame (before joint rotation).
    pub fn forward_kinematics(
        model: &RobotModel,
        base: &Isometry3<f64>,
        joint_angles: &[f64],
    ) -> (Vec<Isometry3<f64>>, Vec<Isometry3<f64>>) {
        let mut links = vec![Isometry3::identity(); model.links().len()];
        let mut frames = Vec::with_capacity(model.n_joints());
        links[model.base_link()] = *base;
        for (j, joint) in model.joints().iter().enumerate() {
            let offset = Isometry3::from_parts(
                Translation3::from(joint.origin),
                UnitQuaternion::from_euler_angles(joint.rpy.x, joint.rpy.y, joint.rpy.z),
            );
            let frame = links[joint.parent] * offset;
            links[joint.child] = frame * Isometry3::rotation(joint.axis * joint_angles[j]);
            frames.push(frame);
        }
        (links, frames)
    }

    struct Pose {
        links: Vec<Isometry3<f64>>,
        frames: Vec<Isometry3<f64>>,
    }

    fn pose_at(model: &RobotModel, base: Isometry3<f64>, joints: &[f64]) -> Pose {
        let (links, frames) = forward_kinematics(model, &base, joints);
        Pose { links, frames }
    }

    /// Linear (3 x nv) and angular (3 x nv) Jacobian of a world point fixed to `link`.
    fn point_jacobian(model: &RobotModel, pose: &Pose, link: usize, p: &Vector3<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let nv = model.nv();
        let nb = model.base_dofs();
        let mut jv = DMatrix::zeros(3, nv);
        let mut jw = DMatrix::zeros(3, nv);
        let mut l = link;
        while let Some(j) = model.links()[l].parent_joint {
            let joint = &model.joints()[j];
            let frame = &pose.frames[j];
            let a = frame.rotation * joint.axis;
            let o = frame.translation.vector;
            jv.set_column(nb + j, &a.cross(&(p - o)));
            jw.set_column(nb + j, &a);
            l = joint.parent;
        }
        if nb == 6 {
            let base = &pose.links[model.base_link()];
            let r = base.rotation.to_rotation_matrix().into_inner();
            let pb = base.translation.vector;
            for i in 0..3 {
                let e = r.column(i).into_owned();
                jv.set_column(i, &e);
                jv.set_column(3 + i, &e.cross(&(p - pb)));
                jw.set_column(3 + i, &e);
            }
        }
        (jv, jw)
    }

    fn joint_angles(model: &RobotModel, q: &DVector<f64>) -> Vec<f64> {
        q.rows(model.base_dofs(), model.n_joints()).iter().copied().collect()
    }

    fn com_and_inertia(model: &RobotModel, pose: &Pose, l: usize) -> (Vector3<f64>, Matrix3<f64>) {
        let link = &model.links()[l];
        let iso = &pose.links[l];
        let r = iso.rotation.to_rotation_matrix().into_inner();
        ((iso * Point3::from(link.com)).coords, r * link.inertia * r.transpose())
    }

    /// `sum_l m_l Jv_l^T Jv_l + Jw_l^T I_l Jw_l` over all links.
    pub fn mass_matrix_by_jacobians(model: &RobotModel, q: &DVector<f64>) -> DMatrix<f64> {
        let pose = pose_at(model, base_pose(model, q), &joint_angles(model, q));
        let mut m = DMatrix::zeros(model.nv(), model.nv());
        for (l, link) in model.links().iter().enumerate() {
            let (c, i) = com_and_inertia(model, &pose, l);
            let (jv, jw) = point_jacobian(model, &pose, l, &c);
            let iw = DMatrix::from_column_slice(3, 3, i.as_slice());
            m += link.mass * jv.transpose() * &jv + jw.transpose() * iw * &jw;
        }
        m
    }

    fn contact_point(model: &RobotModel, pose: &Pose, c: usize) -> Vector3<f64> {
        let cp = &model.contact_points()[c];
        (pose.links[cp.link] * Point3::from(cp.offset)).coords
    }

    fn contact_jacobian(model: &RobotModel, pose: &Pose, contacts: &[usize]) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(3 * contacts.len(), model.nv());
        for (k, &c) in contacts.iter().enumerate() {
            let p = contact_point(model, pose, c);
            let (jv, _) = point_jacobian(model, pose, model.contact_points()[c].link, &p);
            j.rows_mut(3 * k, 3).copy_from(&jv);
        }
        j
    }

    /// Configuration reached after moving for `eps` along the generalized velocity
    /// `qd`, to first order (body-frame base twist held fixed).
    fn displaced(model: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>, eps: f64) -> Pose {
        let mut base = base_pose(model, q);
        if !model.fixed_base() {
            let v = Vector3::new(qd[0], qd[1], qd[2]);
            let w = Vector3::new(qd[3], qd[4], qd[5]);
            let dp = base.rotation * v * eps;
            base = Isometry3::from_parts(
                Translation3::from(base.translation.vector + dp),
                base.rotation * UnitQuaternion::from_scaled_axis(w * eps),
            );
        }
        let nb = model.base_dofs();
        let joints: Vec<f64> = (0..model.n_joints()).map(|j| q[nb + j] + eps * qd[nb + j]).collect();
        pose_at(model, base, &joints)
    }

    const FD_STEP: f64 = 1e-5;

    /// Central-difference velocity of the stacked contact points.
    pub fn fd_contact_velocity(
        model: &RobotModel,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        contacts: &[usize],
    ) -> DVector<f64> {
        let (plus, minus) = (displaced(model, q, qd, FD_STEP), displaced(model, q, qd, -FD_STEP));
        let mut out = DVector::zeros(3 * contacts.len());
        for (k, &c) in contacts.iter().enumerate() {
            let d = (contact_point(model, &plus, c) - contact_point(model, &minus, c)) / (2.0 * FD_STEP);
            out.fixed_rows_mut::<3>(3 * k).copy_from(&d);
        }
        out
    }

    /// `(Jc(q + eps qd) - Jc(q - eps qd)) / (2 eps) * qd`.
    pub fn fd_jdot_qd(model: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>, contacts: &[usize]) -> DVector<f64> {
        let jp = contact_jacobian(model, &displaced(model, q, qd, FD_STEP), contacts);
        let jm = contact_jacobian(model, &displaced(model, q, qd, -FD_STEP), contacts);
        (jp - jm) / (2.0 * FD_STEP) * qd
    }

    fn energy(model: &RobotModel, pose: &Pose, qd: &DVector<f64>) -> f64 {
        let g = model.gravity();
        let mut e = 0.0;
        for (l, link) in model.links().iter().enumerate() {
            let (c, i) = com_and_inertia(model, pose, l);
            let (jv, jw) = point_jacobian(model, pose, l, &c);
            let v = jv * qd;
            let w = jw * qd;
            let w3 = Vector3::new(w[0], w[1], w[2]);
            e += 0.5 * link.mass * v.norm_squared() + 0.5 * w3.dot(&(i * w3)) - link.mass * g.dot(&c);
        }
        e
    }

    /// Relative mismatch between the power `qd^T (M qdd + h)` and the rate of change of
    /// kinetic plus potential energy for a fixed, arbitrary `qdd`.
    pub fn energy_balance_error(model: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>) -> f64 {
        let qdd = DVector::from_fn(model.nv(), |i, _| ((i as f64) * 1.7 + 0.3).cos());
        let generalized_force = crate::rbd::inverse_dynamics(model, q, qd, &qdd).expect("valid state");
        let power = qd.dot(&generalized_force);
        let e_plus = energy(model, &displaced(model, q, qd, FD_STEP), &(qd + &qdd * FD_STEP));
        let e_minus = energy(model, &displaced(model, q, qd, -FD_STEP), &(qd - &qdd * FD_STEP));
        let de = (e_plus - e_minus) / (2.0 * FD_STEP);
        (power - de).abs() / (1.0 + power.abs())
    }

    /// `X` with `Acᵀ X + X Ac + W = 0`, through the Kronecker form.
    pub fn lyapunov(ac: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
        let n = ac.nrows();
        let eye = DMatrix::<f64>::identity(n, n);
        let act = ac.transpose();
        let kron = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
            DMatrix::from_fn(n * n, n * n, |i, j| a[(i / n, j / n)] * b[(i % n, j % n)])
        };
        let op = kron(&eye, &act) + kron(&act, &eye);
        let rhs = DVector::from_iterator(n * n, (-w).iter().copied());
        let x = op.lu().solve(&rhs).expect("stable closed loop");
        DMatrix::from_column_slice(n, n, x.as_slice())
    }

    /// Kleinman iteration for the continuous algebraic Riccati equation, from a
    /// stabilizing `k0` in the convention `u = -K x`. Returns `(P, K)`.
    pub fn care_kleinman(
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
        k0: &DMatrix<f64>,
        iterations: usize,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let r_inv = r.clone().try_inverse().expect("R invertible");
        let mut k = k0.clone();
        let mut p = DMatrix::zeros(a.nrows(), a.nrows());
        for _ in 0..iterations {
            let ac = a - b * &k;
            p = lyapunov(&ac, &(q + k.transpose() * r * &k));
            k = &r_inv * b.transpose() * &p;
        }
        (p, k)
    }

    /// Closed-form solution of `-ds/dt = 2as - (b²/r) s² + q`, `s(t_f) = qf`,
    /// at time-to-go `tau`.
    pub fn scalar_riccati(a: f64, b: f64, q: f64, r: f64, qf: f64, tau: f64) -> f64 {
        let root = (a * a + b * b * q / r).sqrt();
        let s1 = r * (a + root) / (b * b);
        let s2 = r * (a - root) / (b * b);
        let w = (qf - s1) / (qf - s2) * (-2.0 * root * tau).exp();
        (s1 - w * s2) / (1.0 - w)
    }
}

//! Spatial vector helpers in world coordinates, ordered `[angular; linear]`.
//!
//! Motion vectors are taken about the world origin: a body rotating with `w` whose
//! origin-coincident point moves with `v` has motion vector `[w; v]`.

use nalgebra::{Matrix3, Matrix6, Rotation3, Vector3, Vector6};

pub type Motion = Vector6<f64>;
pub type Force = Vector6<f64>;

#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[inline]
pub fn angular(m: &Motion) -> Vector3<f64> {
    m.fixed_rows::<3>(0).into_owned()
}

#[inline]
pub fn linear(m: &Motion) -> Vector3<f64> {
    m.fixed_rows::<3>(3).into_owned()
}

#[inline]
pub fn motion(ang: &Vector3<f64>, lin: &Vector3<f64>) -> Motion {
    Vector6::new(ang.x, ang.y, ang.z, lin.x, lin.y, lin.z)
}

/// `v ×` applied to a motion vector.
#[inline]
pub fn cross_motion(v: &Motion, m: &Motion) -> Motion {
    let (w, vo) = (angular(v), linear(v));
    let (mw, mv) = (angular(m), linear(m));
    motion(&w.cross(&mw), &(w.cross(&mv) + vo.cross(&mw)))
}

/// `v ×*` applied to a force vector `[moment; force]`.
#[inline]
pub fn cross_force(v: &Motion, f: &Force) -> Force {
    let (w, vo) = (angular(v), linear(v));
    let (n, fl) = (angular(f), linear(f));
    motion(&(w.cross(&n) + vo.cross(&fl)), &w.cross(&fl))
}

/// Spatial inertia about the world origin of a body with mass `mass`, world COM `com`
/// and world-aligned rotational inertia `inertia_com` about the COM.
pub fn spatial_inertia(mass: f64, com: &Vector3<f64>, inertia_com: &Matrix3<f64>) -> Matrix6<f64> {
    let c = skew(com);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(inertia_com + mass * c * c.transpose()));
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(mass * c));
    out.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(mass * c.transpose()));
    out.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(Matrix3::identity() * mass));
    out
}

/// `Rx(a) * Ry(b) * Rz(c)`: body-to-world rotation for XYZ Euler angles.
pub fn euler_xyz(angles: &Vector3<f64>) -> Matrix3<f64> {
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), angles.x);
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), angles.y);
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), angles.z);
    (rx * ry * rz).into_inner()
}

/// Fixed-axis roll/pitch/yaw (`Rz(y) * Ry(p) * Rx(r)`), used for joint frame offsets.
pub fn rpy(angles: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::from_euler_angles(angles.x, angles.y, angles.z).into_inner()
}

/// Maps XYZ Euler rates to body-frame angular velocity: `w_body = E * rates`.
pub fn euler_rate_matrix(angles: &Vector3<f64>) -> Matrix3<f64> {
    let (sb, cb) = angles.y.sin_cos();
    let (sc, cc) = angles.z.sin_cos();
    Matrix3::new(cb * cc, sc, 0.0, -cb * sc, cc, 0.0, sb, 0.0, 1.0)
}

/// Inverse of [`euler_rate_matrix`] applied to a body angular velocity.
/// Caller guarantees `cos(pitch) != 0`.
pub fn euler_rates(angles: &Vector3<f64>, w_body: &Vector3<f64>) -> Vector3<f64> {
    let (sb, cb) = angles.y.sin_cos();
    let (sc, cc) = angles.z.sin_cos();
    let a = (cc * w_body.x - sc * w_body.y) / cb;
    let b = sc * w_body.x + cc * w_body.y;
    Vector3::new(a, b, w_body.z - sb * a)
}

/// Rotation about a unit axis.
pub fn axis_rotation(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = skew(axis);
    let (s, c) = angle.sin_cos();
    Matrix3::identity() + s * k + (1.0 - c) * k * k
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn euler_rates_invert_rate_matrix() {
        let ang = Vector3::new(0.3, -0.7, 1.9);
        let rates = Vector3::new(0.2, -1.1, 0.4);
        let w = euler_rate_matrix(&ang) * rates;
        assert_relative_eq!(euler_rates(&ang, &w), rates, epsilon = 1e-12);
    }

    #[test]
    fn euler_rate_matrix_matches_rotation_derivative() {
        let ang = Vector3::new(-0.4, 0.9, 0.25);
        let rates = Vector3::new(0.7, 0.3, -0.5);
        let eps = 1e-6;
        let r = euler_xyz(&ang);
        let rdot = (euler_xyz(&(ang + eps * rates)) - euler_xyz(&(ang - eps * rates))) / (2.0 * eps);
        // R^T Rdot = [w_body]x
        let wx = r.transpose() * rdot;
        let w = Vector3::new(wx[(2, 1)], wx[(0, 2)], wx[(1, 0)]);
        assert_relative_eq!(w, euler_rate_matrix(&ang) * rates, epsilon = 1e-8);
    }

    #[test]
    fn axis_rotation_agrees_with_nalgebra() {
        let axis = Vector3::new(1.0, 2.0, -0.5).normalize();
        let r = axis_rotation(&axis, 0.8);
        let expected = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), 0.8);
        assert_relative_eq!(r, expected.into_inner(), epsilon = 1e-14);
    }

    #[test]
    fn cross_duality() {
        // (v x*) = -(v x)^T
        let v = Motion::new(0.1, -0.3, 0.7, 1.0, 2.0, -0.5);
        let m = Motion::new(0.4, 0.2, -0.9, 0.3, -1.2, 0.8);
        let f = Force::new(-0.6, 0.5, 0.1, 2.0, -0.2, 0.9);
        assert_relative_eq!(f.dot(&cross_motion(&v, &m)), -cross_force(&v, &f).dot(&m), epsilon = 1e-14);
    }
}

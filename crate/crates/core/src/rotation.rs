//! Rotation-vector / unit-quaternion conversions and their derivatives.
//!
//! Quaternions are stored as nalgebra [`UnitQuaternion`]s and read as
//! `(v, u_x, u_y, u_z)` with `v` the real part. Rotation vectors are
//! `phi * n_hat` with `phi` in `[0, pi]`.

use nalgebra::{Matrix3, Matrix4x3, Quaternion, Rotation3, UnitQuaternion, Vector3, Vector4};

/// Angle below which series expansions replace the closed forms.
const SERIES_EPS: f64 = 1e-8;

/// Quaternion components as `(v, u_x, u_y, u_z)`.
pub fn quat_coords(q: &UnitQuaternion<f64>) -> Vector4<f64> {
    Vector4::new(q.w, q.i, q.j, q.k)
}

/// Builds a unit quaternion from `(v, u_x, u_y, u_z)`, renormalizing.
pub fn quat_from_coords(c: &Vector4<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(c[0], c[1], c[2], c[3]))
}

/// Flips the sign so the real part is nonnegative.
pub fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// `p = (cos(phi/2), sin(phi/2) n_hat)` with `phi = |r|`.
pub fn quat_from_rotvec(r: &Vector3<f64>) -> UnitQuaternion<f64> {
    let phi = r.norm();
    let half = 0.5 * phi;
    // sin(phi/2)/phi, stable near zero
    let k = if phi < SERIES_EPS {
        0.5 - phi * phi / 48.0
    } else {
        half.sin() / phi
    };
    UnitQuaternion::new_unchecked(Quaternion::new(half.cos(), k * r.x, k * r.y, k * r.z))
}

/// Rotation vector of `q`, taking the representative with nonnegative real part.
pub fn rotvec_from_quat(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let q = canonical(*q);
    let u = Vector3::new(q.i, q.j, q.k);
    let s = u.norm();
    if s < SERIES_EPS {
        // phi ~ 2s, u/s * phi ~ 2u
        return 2.0 * u;
    }
    let phi = 2.0 * s.atan2(q.w);
    u * (phi / s)
}

pub fn rotvec_from_rotation(r: &Rotation3<f64>) -> Vector3<f64> {
    rotvec_from_quat(&UnitQuaternion::from_rotation_matrix(r))
}

/// Jacobian of the quaternion with respect to the rotation vector, `dp/dr_o^T`
/// (4x3). Rows follow `(v, u_x, u_y, u_z)`. Singular at `r = 0`; callers must
/// stay above a small-angle cutoff.
pub fn quat_rotvec_jacobian(r: &Vector3<f64>) -> Matrix4x3<f64> {
    let phi = r.norm();
    let (s, c) = (0.5 * phi).sin_cos();
    let phi2 = phi * phi;
    let phi3 = phi2 * phi;
    let mut j = Matrix4x3::zeros();
    for i in 0..3 {
        // A_i
        j[(0, i)] = -r[i] / (2.0 * phi) * s;
    }
    for i in 0..3 {
        for k in 0..3 {
            j[(i + 1, k)] = if i == k {
                // B_ijk
                let others = phi2 - r[i] * r[i];
                r[i] * r[i] / (2.0 * phi2) * c + others / phi3 * s
            } else {
                // C_ik
                r[i] * r[k] / (2.0 * phi2) * c - r[i] * r[k] / phi3 * s
            };
        }
    }
    j
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of the SO(3) left Jacobian: maps a world-frame angular velocity to
/// the rate of the rotation vector, `r_o_dot = J_l^{-1}(r_o) * omega`.
pub fn left_jacobian_inverse(r: &Vector3<f64>) -> Matrix3<f64> {
    let theta = r.norm();
    let k = skew(r);
    let coeff = if theta < 1e-4 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - 0.5 * k + coeff * k * k
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rotvec_roundtrip() {
        let r = Vector3::new(0.3, -1.2, 0.7);
        let back = rotvec_from_quat(&quat_from_rotvec(&r));
        assert_relative_eq!(back, r, epsilon = 1e-12);
    }

    #[test]
    fn negated_quaternion_maps_to_same_rotvec() {
        let r = Vector3::new(0.1, 0.2, -0.4);
        let q = quat_from_rotvec(&r);
        let neg = UnitQuaternion::new_unchecked(-q.into_inner());
        assert_relative_eq!(rotvec_from_quat(&neg), r, epsilon = 1e-12);
    }

    #[test]
    fn quat_jacobian_matches_finite_differences() {
        let r = Vector3::new(0.4, -0.9, 1.3);
        let j = quat_rotvec_jacobian(&r);
        let h = 1e-6;
        for col in 0..3 {
            let mut e = Vector3::zeros();
            e[col] = h;
            let fd = (quat_coords(&quat_from_rotvec(&(r + e)))
                - quat_coords(&quat_from_rotvec(&(r - e))))
                / (2.0 * h);
            for row in 0..4 {
                assert!((fd[row] - j[(row, col)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn left_jacobian_inverse_maps_angular_velocity() {
        let r = Vector3::new(0.5, 0.2, -0.8);
        let omega = Vector3::new(0.3, -0.1, 0.6);
        let h = 1e-6;
        let rot = Rotation3::from_scaled_axis(r);
        let ahead = Rotation3::from_scaled_axis(omega * h) * rot;
        let behind = Rotation3::from_scaled_axis(-omega * h) * rot;
        let fd = (rotvec_from_rotation(&ahead) - rotvec_from_rotation(&behind)) / (2.0 * h);
        assert_relative_eq!(fd, left_jacobian_inverse(&r) * omega, epsilon = 1e-7);
    }
}

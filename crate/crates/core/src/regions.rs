//! Region functions, their clamped potentials, and the regional feedback
//! vectors `xi_q` (joint space), `xi_r` (Cartesian space) and `xi_x` (image).
//!
//! Every region is an inequality `f <= 0`. Joint regions mark configurations to
//! stay out of and repel; the Cartesian box and orientation cone attract from
//! outside and go quiet inside; the image ellipse attracts only from inside.

use nalgebra::{DVector, UnitQuaternion, Vector2, Vector3, Vector4};
use thiserror::Error;

use crate::kinematics::{JacobianKind, Pose, TaskSpace};
use crate::rotation;

/// Below this rotation-vector norm the analytic orientation path is not used.
pub const DEFAULT_ANGLE_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegionError {
    #[error("rotation vector norm {norm:.3e} is below the analytic cutoff; use the geometric path")]
    SmallAngle { norm: f64 },
    #[error("invalid region: {0}")]
    Invalid(String),
}

/// `f(q) = sum_j w_j (q_{idx_j} - c_j)^2 - R^2` with a concentric reference
/// region of radius `R_ref > R`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointRegion {
    pub joints: Vec<usize>,
    pub weights: Vec<f64>,
    pub center: Vec<f64>,
    pub radius: f64,
    pub reference_radius: f64,
    pub k_q: f64,
    pub k_r: f64,
}

impl JointRegion {
    /// Single-joint region around a limit: `(q_i - q_lim)^2 - radius^2 <= 0`.
    pub fn around(joint: usize, q_lim: f64, radius: f64, reference_radius: f64, k_q: f64, k_r: f64) -> Self {
        Self {
            joints: vec![joint],
            weights: vec![1.0],
            center: vec![q_lim],
            radius,
            reference_radius,
            k_q,
            k_r,
        }
    }

    pub fn validate(&self, n_dof: usize) -> Result<(), RegionError> {
        if self.joints.is_empty()
            || self.weights.len() != self.joints.len()
            || self.center.len() != self.joints.len()
        {
            return Err(RegionError::Invalid("joint region needs matching joints/weights/center".into()));
        }
        if let Some(j) = self.joints.iter().find(|&&j| j >= n_dof) {
            return Err(RegionError::Invalid(format!("joint index {j} out of range")));
        }
        if !(self.k_q > 0.0 && self.k_r > 0.0) {
            return Err(RegionError::Invalid("joint region gains must be positive".into()));
        }
        if !(self.radius > 0.0 && self.reference_radius > self.radius) {
            return Err(RegionError::Invalid("reference region must strictly enclose the inner region".into()));
        }
        if self.weights.iter().any(|w| !(*w > 0.0)) {
            return Err(RegionError::Invalid("joint region weights must be positive".into()));
        }
        Ok(())
    }

    fn quadratic(&self, q: &[f64]) -> f64 {
        self.joints
            .iter()
            .zip(&self.weights)
            .zip(&self.center)
            .map(|((&j, w), c)| w * (q[j] - c).powi(2))
            .sum()
    }

    pub fn value(&self, q: &[f64]) -> f64 {
        self.quadratic(q) - self.radius * self.radius
    }

    pub fn reference_value(&self, q: &[f64]) -> f64 {
        self.quadratic(q) - self.reference_radius * self.reference_radius
    }

    pub fn potential(&self, q: &[f64]) -> f64 {
        let inner = self.value(q).min(0.0);
        let outer = self.reference_value(q).min(0.0);
        0.5 * self.k_q * inner * inner + 0.5 * self.k_r * outer * outer
    }

    fn accumulate_gradient(&self, q: &[f64], out: &mut DVector<f64>) {
        let inner = self.value(q).min(0.0);
        let outer = self.reference_value(q).min(0.0);
        let scale = self.k_q * inner + self.k_r * outer;
        if scale == 0.0 {
            return;
        }
        for ((&j, w), c) in self.joints.iter().zip(&self.weights).zip(&self.center) {
            out[j] += scale * 2.0 * w * (q[j] - c);
        }
    }
}

/// `P_s(q)`.
pub fn joint_potential(regions: &[JointRegion], q: &[f64]) -> f64 {
    regions.iter().map(|r| r.potential(q)).sum()
}

/// `xi_q = dP_s/dq`; zero outside every reference region.
pub fn joint_feedback(regions: &[JointRegion], q: &[f64]) -> DVector<f64> {
    let mut xi = DVector::zeros(q.len());
    for region in regions {
        region.accumulate_gradient(q, &mut xi);
    }
    xi
}

/// Axis-aligned box `((r_i - r_ci)/c_i)^2 - 1 <= 0` in world translation.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianBoxRegion {
    pub center: Vector3<f64>,
    pub half_sizes: Vector3<f64>,
    pub gains: Vector3<f64>,
}

impl CartesianBoxRegion {
    pub fn validate(&self) -> Result<(), RegionError> {
        if self.half_sizes.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(RegionError::Invalid("half_sizes must be positive".into()));
        }
        if self.gains.iter().any(|k| !(*k >= 0.0 && k.is_finite())) {
            return Err(RegionError::Invalid("gains must be nonnegative".into()));
        }
        if !self.center.iter().all(|v| v.is_finite()) {
            return Err(RegionError::Invalid("center must be finite".into()));
        }
        Ok(())
    }

    pub fn value(&self, r_t: &Vector3<f64>) -> Vector3<f64> {
        (r_t - self.center).component_div(&self.half_sizes).map(|s| s * s - 1.0)
    }

    pub fn contains(&self, r_t: &Vector3<f64>) -> bool {
        self.value(r_t).iter().all(|f| *f <= 0.0)
    }

    /// `P_t`, summed over the first `axes` coordinates.
    pub fn potential_axes(&self, r_t: &Vector3<f64>, axes: usize) -> f64 {
        let f = self.value(r_t);
        (0..axes).map(|i| 0.5 * self.gains[i] * f[i].max(0.0).powi(2)).sum()
    }

    pub fn potential(&self, r_t: &Vector3<f64>) -> f64 {
        self.potential_axes(r_t, 3)
    }
}

/// `dP_t/dr_t = 2 k_c * max(0, f_c) * (r_t - r_c) / c^2`, elementwise.
pub fn box_feedback(region: &CartesianBoxRegion, r_t: &Vector3<f64>) -> Vector3<f64> {
    let f = region.value(r_t);
    let delta = r_t - region.center;
    Vector3::from_fn(|i, _| {
        2.0 * region.gains[i] * f[i].max(0.0) * delta[i] / (region.half_sizes[i] * region.half_sizes[i])
    })
}

/// Tolerance cone `alpha_o * |log(p * p_g^{-1})| - 1 <= 0` around a goal orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationConeRegion {
    pub goal: UnitQuaternion<f64>,
    pub alpha: f64,
    pub k_o: f64,
}

impl OrientationConeRegion {
    pub fn validate(&self) -> Result<(), RegionError> {
        if !(self.alpha > 0.0 && self.k_o > 0.0) {
            return Err(RegionError::Invalid("alpha and k_o must be positive".into()));
        }
        if !self.goal.coords.iter().all(|v| v.is_finite()) {
            return Err(RegionError::Invalid("goal must be finite".into()));
        }
        Ok(())
    }

    /// Goal with its sign matched to `p`'s hemisphere, so `p . goal >= 0`.
    fn aligned_goal(&self, p: &UnitQuaternion<f64>) -> Vector4<f64> {
        let g = rotation::quat_coords(&self.goal);
        if rotation::quat_coords(p).dot(&g) < 0.0 {
            -g
        } else {
            g
        }
    }

    /// Error quaternion `p * p_g^{-1}` with nonnegative real part.
    pub fn error(&self, p: &UnitQuaternion<f64>) -> UnitQuaternion<f64> {
        let g = rotation::quat_from_coords(&self.aligned_goal(p));
        p * g.inverse()
    }

    pub fn value(&self, p: &UnitQuaternion<f64>) -> f64 {
        orientation_region_value(self, p)
    }

    pub fn potential(&self, p: &UnitQuaternion<f64>) -> f64 {
        let f = self.value(p).max(0.0);
        0.5 * self.k_o * f * f
    }
}

/// Unit-quaternion logarithm: `arccos(v) u/|u|`, or zero when `u = 0`.
pub fn quaternion_log(p: &UnitQuaternion<f64>) -> Vector3<f64> {
    let c = rotation::quat_coords(p);
    let c = c / c.norm();
    let u = Vector3::new(c[1], c[2], c[3]);
    let norm = u.norm();
    if norm > 0.0 {
        norm.atan2(c[0]) * u / norm
    } else {
        Vector3::zeros()
    }
}

/// `f_o = alpha_o * arccos(v_e) * I(|u_e| > 0) - 1`.
pub fn orientation_region_value(cone: &OrientationConeRegion, p: &UnitQuaternion<f64>) -> f64 {
    let e = cone.error(p);
    let indicator = if e.imag().norm() > 0.0 { 1.0 } else { 0.0 };
    cone.alpha * e.w.clamp(-1.0, 1.0).acos() * indicator - 1.0
}

/// `dP_o/dr_o` by the chain rule through the quaternion: `dP_o/dp^T * dp/dr_o^T`.
///
/// `p` is rebuilt from `r_o`, so the result is the exact gradient of
/// `P_o(quat(r_o))`.
pub fn orientation_feedback_analytic(
    cone: &OrientationConeRegion,
    r_o: &Vector3<f64>,
    angle_eps: f64,
) -> Result<Vector3<f64>, RegionError> {
    let p = rotation::quat_from_rotvec(r_o);
    let f = orientation_region_value(cone, &p);
    if f <= 0.0 {
        return Ok(Vector3::zeros());
    }
    let norm = r_o.norm();
    if norm <= angle_eps {
        return Err(RegionError::SmallAngle { norm });
    }
    let e = cone.error(&p);
    let u_norm = e.imag().norm();
    // v_e = p . goal, so dv_e/dp = goal
    let dv_dp = cone.aligned_goal(&p);
    let dp_rot = -cone.alpha * cone.k_o * f / u_norm * dv_dp;
    Ok(rotation::quat_rotvec_jacobian(r_o).transpose() * dp_rot)
}

/// `alpha_o k_o max(0, f_o) r_e` with `r_e` the rotation vector of the error.
pub fn orientation_feedback_geometric(cone: &OrientationConeRegion, p: &UnitQuaternion<f64>) -> Vector3<f64> {
    let f = orientation_region_value(cone, p);
    if f <= 0.0 {
        return Vector3::zeros();
    }
    let r_e = rotation::rotvec_from_quat(&cone.error(p));
    cone.alpha * cone.k_o * f * r_e
}

/// `xi_r = [dP_t/dr_t; dP_o/dr_o]`, restricted to the pose's task coordinates.
/// The orientation part follows `kind`, which must match the controller's
/// Jacobian flavor.
pub fn cartesian_feedback(
    region: &CartesianBoxRegion,
    cone: &OrientationConeRegion,
    pose: &Pose,
    kind: JacobianKind,
    angle_eps: f64,
) -> Result<DVector<f64>, RegionError> {
    let trans = box_feedback(region, &pose.r_t);
    let rot = match kind {
        JacobianKind::Analytic => orientation_feedback_analytic(cone, &pose.r_o, angle_eps)?,
        JacobianKind::Geometric => orientation_feedback_geometric(cone, &pose.p),
    };
    Ok(match pose.task {
        TaskSpace::Spatial => DVector::from_iterator(6, trans.iter().chain(rot.iter()).copied()),
        TaskSpace::Planar => DVector::from_vec(vec![trans.x, trans.y, rot.z]),
    })
}

/// `P_c = P_t + P_o` over the pose's task coordinates.
pub fn cartesian_potential(region: &CartesianBoxRegion, cone: &OrientationConeRegion, pose: &Pose) -> f64 {
    let axes = match pose.task {
        TaskSpace::Spatial => 3,
        TaskSpace::Planar => 2,
    };
    region.potential_axes(&pose.r_t, axes) + cone.potential(&pose.p)
}

/// Image-space ellipse around the desired pixel `x_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisionEllipseRegion {
    pub x_d: Vector2<f64>,
    pub half_sizes: Vector2<f64>,
    pub k_v: f64,
}

impl VisionEllipseRegion {
    pub fn validate(&self) -> Result<(), RegionError> {
        if self.half_sizes.iter().any(|b| !(*b > 0.0)) || !(self.k_v > 0.0) {
            return Err(RegionError::Invalid("half_sizes and k_v must be positive".into()));
        }
        Ok(())
    }

    pub fn value(&self, x: &Vector2<f64>) -> f64 {
        (x - self.x_d).component_div(&self.half_sizes).norm_squared() - 1.0
    }

    /// `P_v = k_v/2 (1 - min(0, f_v)^2)`; the ceiling `k_v/2` when unseen.
    pub fn potential(&self, x: &Vector2<f64>, visible: bool) -> f64 {
        if !visible {
            return 0.5 * self.k_v;
        }
        let f = self.value(x).min(0.0);
        0.5 * self.k_v * (1.0 - f * f)
    }
}

/// `xi_x = dP_v/dx = -k_v min(0, f_v) df_v/dx`, forced to zero when the
/// feature (or target) is not visible.
pub fn vision_feedback(region: &VisionEllipseRegion, x: &Vector2<f64>, visible: bool) -> Vector2<f64> {
    if !visible {
        return Vector2::zeros();
    }
    let f = region.value(x);
    if f > 0.0 {
        return Vector2::zeros();
    }
    let grad_f = 2.0 * (x - region.x_d).component_div(&region.half_sizes.component_mul(&region.half_sizes));
    -region.k_v * f * grad_f
}

/// All regions acting on one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    pub joint_regions: Vec<JointRegion>,
    pub cartesian_box: CartesianBoxRegion,
    pub cone: OrientationConeRegion,
    pub vision: VisionEllipseRegion,
}

impl RegionSet {
    pub fn validate(&self, n_dof: usize) -> Result<(), RegionError> {
        for r in &self.joint_regions {
            r.validate(n_dof)?;
        }
        self.cartesian_box.validate()?;
        self.cone.validate()?;
        self.vision.validate()
    }

    /// Joint-limit schema: one region per limit with inner radius
    /// `inner` and reference radius `reference`.
    pub fn limit_regions(limits: &[[f64; 2]], inner: f64, reference: f64, k_q: f64, k_r: f64) -> Vec<JointRegion> {
        limits
            .iter()
            .enumerate()
            .flat_map(|(i, [lo, hi])| {
                [
                    JointRegion::around(i, *lo, inner, reference, k_q, k_r),
                    JointRegion::around(i, *hi, inner, reference, k_q, k_r),
                ]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Quaternion;

    fn default_cone() -> OrientationConeRegion {
        OrientationConeRegion {
            goal: UnitQuaternion::from_quaternion(Quaternion::new(-0.28, 0.63, 0.66, 0.28)),
            alpha: 15.0,
            k_o: 1.0,
        }
    }

    #[test]
    fn joint_feedback_vanishes_outside_reference() {
        let r = JointRegion::around(1, 0.0, 0.1, 0.3, 10.0, 1.0);
        assert_eq!(joint_feedback(&[r], &[0.0, 0.5]).norm(), 0.0);
    }

    #[test]
    fn joint_boundary_only_reference_term() {
        let r = JointRegion::around(0, 0.0, 0.1, 0.3, 10.0, 1.0);
        let q = [0.1];
        assert_eq!(r.value(&q).min(0.0), 0.0);
        let xi = joint_feedback(std::slice::from_ref(&r), &q);
        let expected = 1.0 * r.reference_value(&q) * 2.0 * 0.1;
        assert!((xi[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn joint_feedback_repels_from_limit() {
        let r = JointRegion::around(0, -1.0, 0.1, 0.3, 10.0, 1.0);
        // above the lower limit the descent direction -xi points up
        assert!(joint_feedback(&[r], &[-0.95])[0] < 0.0);
    }

    #[test]
    fn box_feedback_zero_inside() {
        let b = CartesianBoxRegion {
            center: Vector3::new(0.2, 0.5, 0.2),
            half_sizes: Vector3::new(0.1, 0.1, 0.1),
            gains: Vector3::new(4e-4, 4e-4, 4e-5),
        };
        assert_eq!(box_feedback(&b, &b.center), Vector3::zeros());
        assert_eq!(box_feedback(&b, &Vector3::new(0.25, 0.45, 0.29)), Vector3::zeros());
        assert!(box_feedback(&b, &Vector3::new(0.5, 0.5, 0.2)).x > 0.0);
    }

    #[test]
    fn log_of_identity_and_z_rotation() {
        assert_eq!(quaternion_log(&UnitQuaternion::identity()), Vector3::zeros());
        let phi = 1.1;
        let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), phi);
        assert!((quaternion_log(&q) - Vector3::new(0.0, 0.0, phi / 2.0)).norm() < 1e-12);
        let cone = default_cone();
        assert!(quaternion_log(&cone.error(&cone.goal)).norm() < 1e-15);
    }

    #[test]
    fn region_value_at_goal_and_boundary() {
        let cone = default_cone();
        assert!((orientation_region_value(&cone, &cone.goal) + 1.0).abs() < 1e-12);
        // phi = 2/alpha puts arccos(v_e) = 1/alpha on the boundary
        let axis = Vector3::new(0.3, -0.2, 0.9).normalize();
        let off = UnitQuaternion::from_scaled_axis(axis * (2.0 / 15.0)) * cone.goal;
        assert!(orientation_region_value(&cone, &off).abs() < 1e-9);
    }

    #[test]
    fn feedback_inside_cone_is_zero() {
        let cone = default_cone();
        let near = UnitQuaternion::from_scaled_axis(Vector3::new(0.0, 0.05, 0.0)) * cone.goal;
        assert_eq!(orientation_feedback_geometric(&cone, &near), Vector3::zeros());
        let r_o = rotation::rotvec_from_quat(&near);
        assert_eq!(orientation_feedback_analytic(&cone, &r_o, DEFAULT_ANGLE_EPS).unwrap(), Vector3::zeros());
    }

    #[test]
    fn analytic_gradient_is_along_z_for_z_error() {
        let cone = OrientationConeRegion { goal: UnitQuaternion::identity(), alpha: 15.0, k_o: 1.0 };
        let r_o = Vector3::new(0.0, 0.0, 0.8);
        let g = orientation_feedback_analytic(&cone, &r_o, DEFAULT_ANGLE_EPS).unwrap();
        assert!(g.x.abs() < 1e-8 && g.y.abs() < 1e-8 && g.z > 0.0);
    }

    #[test]
    fn small_angle_requests_fallback() {
        let cone = OrientationConeRegion {
            goal: UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 1.0),
            alpha: 15.0,
            k_o: 1.0,
        };
        let err = orientation_feedback_analytic(&cone, &Vector3::new(1e-7, 0.0, 0.0), DEFAULT_ANGLE_EPS);
        assert!(matches!(err, Err(RegionError::SmallAngle { .. })));
    }

    #[test]
    fn geometric_direction_matches_log() {
        let cone = default_cone();
        let p = UnitQuaternion::from_scaled_axis(Vector3::new(0.4, -0.3, 0.2)) * cone.goal;
        let g = orientation_feedback_geometric(&cone, &p);
        let log = quaternion_log(&cone.error(&p));
        assert!((g.normalize() - log.normalize()).norm() < 1e-9);
    }

    #[test]
    fn translation_violation_leaves_rotation_rows_zero() {
        let b = CartesianBoxRegion {
            center: Vector3::zeros(),
            half_sizes: Vector3::new(0.1, 0.1, 0.1),
            gains: Vector3::new(1.0, 1.0, 1.0),
        };
        let cone = OrientationConeRegion { goal: UnitQuaternion::identity(), alpha: 15.0, k_o: 1.0 };
        let iso = nalgebra::Isometry3::translation(0.5, 0.0, 0.0);
        let pose = Pose::from_isometry(&iso, TaskSpace::Spatial);
        let xi = cartesian_feedback(&b, &cone, &pose, JacobianKind::Geometric, DEFAULT_ANGLE_EPS).unwrap();
        assert!(xi[0] > 0.0);
        assert_eq!(xi.rows(3, 3).norm(), 0.0);
    }

    #[test]
    fn vision_feedback_cases() {
        let v = VisionEllipseRegion { x_d: Vector2::new(700.0, 500.0), half_sizes: Vector2::new(1440.0, 1080.0), k_v: 0.3 };
        assert_eq!(vision_feedback(&v, &v.x_d, true), Vector2::zeros());
        assert_eq!(vision_feedback(&v, &Vector2::new(5000.0, 500.0), true), Vector2::zeros());
        assert_eq!(vision_feedback(&v, &Vector2::new(710.0, 500.0), false), Vector2::zeros());
        assert!(vision_feedback(&v, &Vector2::new(710.0, 500.0), true).x > 0.0);
        assert_eq!(v.potential(&v.x_d, true), 0.0);
    }
}

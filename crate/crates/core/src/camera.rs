//! Synthetic pinhole camera.
//!
//! This is the ground truth the controller never sees: the simulator projects
//! the tracked end-effector point through it and hands the controller nothing
//! but pixels and visibility flags.

use nalgebra::{DMatrix, Matrix2x3, Rotation3, Vector2, Vector3};
use thiserror::Error;

use crate::kinematics::{Pose, TaskSpace};

/// Points closer than this along the optical axis are not imaged.
pub const DEPTH_MIN: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("feature is not visible")]
    NotVisible,
    #[error("invalid camera: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    /// Camera origin in the world frame.
    pub position: Vector3<f64>,
    /// World-from-camera rotation. Camera z is the optical axis.
    pub rotation: Rotation3<f64>,
}

/// Pixel measurement of a tracked point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feature {
    pub x: Vector2<f64>,
    pub visible: bool,
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::Invalid("focal lengths must be positive".into()));
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(CameraError::Invalid("image size must be positive".into()));
        }
        let m = self.rotation.matrix();
        let err = (m.transpose() * m - nalgebra::Matrix3::identity()).abs().max();
        if !(err <= 1e-9) {
            return Err(CameraError::Invalid("rotation is not orthonormal".into()));
        }
        if !self.position.iter().chain([self.cx, self.cy].iter()).all(|v| v.is_finite()) {
            return Err(CameraError::Invalid("camera parameters must be finite".into()));
        }
        Ok(())
    }

    fn to_camera(&self, point_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (point_world - self.position)
    }

    /// Perspective projection. Points at depth `<= DEPTH_MIN` are reported
    /// invisible, with the pixel computed at the clamped depth so it stays finite.
    pub fn project(&self, point_world: &Vector3<f64>) -> Feature {
        let pc = self.to_camera(point_world);
        let depth = pc.z.max(DEPTH_MIN);
        let x = Vector2::new(self.cx + self.fx * pc.x / depth, self.cy + self.fy * pc.y / depth);
        let visible = pc.z > DEPTH_MIN && self.in_fov(&x);
        Feature { x, visible }
    }

    /// Inclusive image-rectangle membership.
    pub fn in_fov(&self, x: &Vector2<f64>) -> bool {
        (0.0..=self.width).contains(&x.x) && (0.0..=self.height).contains(&x.y)
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(self.width / 2.0, self.height / 2.0)
    }

    /// Ground-truth image Jacobian `J_s(r)` of the end-effector origin,
    /// `2 x task_dim`. Rotations about the tracked origin do not move it, so the
    /// rotational columns are zero.
    pub fn true_image_jacobian(&self, pose: &Pose) -> Result<DMatrix<f64>, CameraError> {
        if !self.project(&pose.r_t).visible {
            return Err(CameraError::NotVisible);
        }
        let pc = self.to_camera(&pose.r_t);
        let z = pc.z;
        let d_pix = Matrix2x3::new(
            self.fx / z,
            0.0,
            -self.fx * pc.x / (z * z),
            0.0,
            self.fy / z,
            -self.fy * pc.y / (z * z),
        );
        let d_world = d_pix * self.rotation.inverse().matrix();
        let m = pose.task_dim();
        let mut js = DMatrix::zeros(2, m);
        match pose.task {
            TaskSpace::Spatial => js.view_mut((0, 0), (2, 3)).copy_from(&d_world),
            TaskSpace::Planar => js.view_mut((0, 0), (2, 2)).copy_from(&d_world.fixed_view::<2, 2>(0, 0)),
        }
        Ok(js)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::Pose;
    use nalgebra::{Isometry3, Translation3, UnitQuaternion};

    /// Looking straight down from 1 m; image u along -x, v along +y.
    fn overhead() -> CameraModel {
        CameraModel {
            fx: 1000.0,
            fy: 1000.0,
            cx: 720.0,
            cy: 540.0,
            width: 1440.0,
            height: 1080.0,
            position: Vector3::new(0.0, 0.0, 1.0),
            rotation: Rotation3::from_axis_angle(&Vector3::y_axis(), std::f64::consts::PI),
        }
    }

    #[test]
    fn principal_point_on_axis() {
        let f = overhead().project(&Vector3::zeros());
        assert!(f.visible);
        assert!((f.x - Vector2::new(720.0, 540.0)).norm() < 1e-9);
    }

    #[test]
    fn focal_length_scales_offset() {
        let mut cam = overhead();
        let p = Vector3::new(0.1, 0.0, 0.0);
        let a = cam.project(&p).x.x - cam.cx;
        cam.fx *= 2.0;
        let b = cam.project(&p).x.x - cam.cx;
        assert!((b - 2.0 * a).abs() < 1e-9);
    }

    #[test]
    fn behind_camera_is_invisible() {
        assert!(!overhead().project(&Vector3::new(0.0, 0.0, 2.0)).visible);
    }

    #[test]
    fn fov_bounds_are_inclusive() {
        let cam = overhead();
        assert!(cam.in_fov(&Vector2::new(0.0, 0.0)));
        assert!(!cam.in_fov(&Vector2::new(1441.0, 0.0)));
        assert!(cam.in_fov(&cam.center()));
    }

    #[test]
    fn planar_jacobian_is_diagonal_for_axis_aligned_camera() {
        let cam = overhead();
        let iso = Isometry3::from_parts(Translation3::new(0.05, -0.02, 0.0), UnitQuaternion::identity());
        let pose = Pose::from_isometry(&iso, TaskSpace::Planar);
        let js = cam.true_image_jacobian(&pose).unwrap();
        // z = 1: d(u)/dx = -f, d(v)/dy = f
        assert!((js[(0, 0)] + 1000.0).abs() < 1e-9);
        assert!((js[(1, 1)] - 1000.0).abs() < 1e-9);
        assert!(js[(0, 1)].abs() < 1e-9 && js[(1, 0)].abs() < 1e-9);
        assert_eq!(js[(0, 2)], 0.0);
    }

    #[test]
    fn centered_feature_ignores_axial_motion() {
        let cam = overhead();
        let pose = Pose::from_isometry(&Isometry3::identity(), TaskSpace::Spatial);
        let js = cam.true_image_jacobian(&pose).unwrap();
        assert!(js[(0, 2)].abs() < 1e-12 && js[(1, 2)].abs() < 1e-12);
    }

    #[test]
    fn invisible_pose_has_no_jacobian() {
        let cam = overhead();
        let iso = Isometry3::translation(0.0, 5.0, 0.0);
        let pose = Pose::from_isometry(&iso, TaskSpace::Spatial);
        assert_eq!(cam.true_image_jacobian(&pose), Err(CameraError::NotVisible));
    }
}

//! Serial-chain kinematics for revolute arms.
//!
//! A chain is a list of joints, each given by a fixed offset from the previous
//! joint frame followed by a rotation about a unit axis (product-of-exponentials
//! style, no D-H tables). A final tool offset locates the end effector.

use nalgebra::{DMatrix, DVector, Isometry3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rotation;

/// Default threshold on the smallest singular value of `J`.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("dimension mismatch: expected {expected} entries, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("jacobian is rank deficient (smallest singular value {sigma_min:.3e})")]
    Singular { sigma_min: f64 },
    #[error("invalid robot model: {0}")]
    InvalidModel(String),
}

/// Which end-effector coordinates the controller regulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TaskSpace {
    /// Translation plus rotation vector, 6 coordinates.
    #[default]
    Spatial,
    /// `(x, y, yaw)` for chains whose joints all rotate about world z.
    Planar,
}

impl TaskSpace {
    pub fn dim(self) -> usize {
        match self {
            TaskSpace::Spatial => 6,
            TaskSpace::Planar => 3,
        }
    }
}

/// How the rotational rows of the Jacobian are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JacobianKind {
    /// Rates of the rotation vector `r_o`.
    Analytic,
    /// World-frame angular velocity.
    #[default]
    Geometric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub axis: Unit<Vector3<f64>>,
    /// Offset from the previous joint frame (or the base) to this joint, meters.
    pub offset: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    joints: Vec<Joint>,
    limits: Vec<[f64; 2]>,
    tool_offset: Vector3<f64>,
    task: TaskSpace,
}

impl RobotModel {
    pub fn new(
        joints: Vec<Joint>,
        limits: Vec<[f64; 2]>,
        tool_offset: Vector3<f64>,
        task: TaskSpace,
    ) -> Result<Self, KinematicsError> {
        if joints.is_empty() {
            return Err(KinematicsError::InvalidModel("no joints".into()));
        }
        if limits.len() != joints.len() {
            return Err(KinematicsError::DimensionMismatch {
                expected: joints.len(),
                got: limits.len(),
            });
        }
        for (i, j) in joints.iter().enumerate() {
            if !j.offset.iter().all(|v| v.is_finite()) || !j.axis.iter().all(|v| v.is_finite()) {
                return Err(KinematicsError::InvalidModel(format!("joint {i} is not finite")));
            }
            if task == TaskSpace::Planar && (j.axis.z - 1.0).abs() > 1e-12 {
                return Err(KinematicsError::InvalidModel(format!(
                    "planar chains need +z joint axes (joint {i})"
                )));
            }
        }
        for (i, [lo, hi]) in limits.iter().enumerate() {
            if !(lo < hi) {
                return Err(KinematicsError::InvalidModel(format!(
                    "joint {i} limits must satisfy min < max"
                )));
            }
        }
        if !tool_offset.iter().all(|v| v.is_finite()) {
            return Err(KinematicsError::InvalidModel("tool offset is not finite".into()));
        }
        Ok(Self { joints, limits, tool_offset, task })
    }

    /// Planar chain of unit-z joints with links of the given lengths along x.
    pub fn planar(link_lengths: &[f64]) -> Result<Self, KinematicsError> {
        let n = link_lengths.len();
        let mut joints = Vec::with_capacity(n);
        for i in 0..n {
            let offset = if i == 0 { 0.0 } else { link_lengths[i - 1] };
            joints.push(Joint { axis: Vector3::z_axis(), offset: Vector3::new(offset, 0.0, 0.0) });
        }
        let tool = Vector3::new(*link_lengths.last().unwrap_or(&0.0), 0.0, 0.0);
        Self::new(joints, vec![[-std::f64::consts::PI, std::f64::consts::PI]; n], tool, TaskSpace::Planar)
    }

    pub fn n_dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn limits(&self) -> &[[f64; 2]] {
        &self.limits
    }

    pub fn tool_offset(&self) -> &Vector3<f64> {
        &self.tool_offset
    }

    pub fn task(&self) -> TaskSpace {
        self.task
    }

    pub fn task_dim(&self) -> usize {
        self.task.dim()
    }

    fn check_q(&self, q: &[f64]) -> Result<(), KinematicsError> {
        if q.len() != self.n_dof() {
            return Err(KinematicsError::DimensionMismatch { expected: self.n_dof(), got: q.len() });
        }
        Ok(())
    }

    /// World frames of every joint (after its offset, before its rotation) and
    /// the tool frame as the last element. Length is `n_dof + 1`.
    pub fn frames(&self, q: &[f64]) -> Result<Vec<Isometry3<f64>>, KinematicsError> {
        self.check_q(q)?;
        let mut t = Isometry3::identity();
        let mut out = Vec::with_capacity(self.n_dof() + 1);
        for (joint, &angle) in self.joints.iter().zip(q) {
            t *= Translation3::from(joint.offset);
            out.push(t);
            t *= UnitQuaternion::from_axis_angle(&joint.axis, angle);
        }
        t *= Translation3::from(self.tool_offset);
        out.push(t);
        Ok(out)
    }

    /// World position of joint origins followed by the tool point.
    pub fn joint_positions(&self, q: &[f64]) -> Result<Vec<Vector3<f64>>, KinematicsError> {
        Ok(self.frames(q)?.iter().map(|f| f.translation.vector).collect())
    }
}

/// Joint angles (rad) and rates (rad/s).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JointState {
    pub q: Vec<f64>,
    pub q_dot: Vec<f64>,
}

impl JointState {
    pub fn at_rest(q: Vec<f64>) -> Self {
        let n = q.len();
        Self { q, q_dot: vec![0.0; n] }
    }

    pub fn validate(&self, model: &RobotModel) -> Result<(), KinematicsError> {
        model.check_q(&self.q)?;
        model.check_q(&self.q_dot)?;
        if !self.q.iter().chain(&self.q_dot).all(|v| v.is_finite()) {
            return Err(KinematicsError::InvalidModel("joint state is not finite".into()));
        }
        Ok(())
    }
}

/// End-effector pose: translation, unit quaternion and rotation vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub r_t: Vector3<f64>,
    /// Orientation, real part kept nonnegative.
    pub p: UnitQuaternion<f64>,
    /// Rotation vector encoding the same rotation as `p`.
    pub r_o: Vector3<f64>,
    pub task: TaskSpace,
}

impl Pose {
    pub fn from_isometry(iso: &Isometry3<f64>, task: TaskSpace) -> Self {
        let p = rotation::canonical(iso.rotation);
        let r_o = rotation::rotvec_from_quat(&p);
        Self { r_t: iso.translation.vector, p, r_o, task }
    }

    pub fn task_dim(&self) -> usize {
        self.task.dim()
    }

    /// The task coordinates `r`: `[r_t, r_o]` (spatial) or `[x, y, yaw]` (planar).
    pub fn task_vector(&self) -> DVector<f64> {
        match self.task {
            TaskSpace::Spatial => DVector::from_iterator(
                6,
                self.r_t.iter().chain(self.r_o.iter()).copied(),
            ),
            TaskSpace::Planar => DVector::from_vec(vec![self.r_t.x, self.r_t.y, self.r_o.z]),
        }
    }
}

/// End-effector pose for joint angles `q`.
pub fn forward_kinematics(model: &RobotModel, q: &[f64]) -> Result<Pose, KinematicsError> {
    let frames = model.frames(q)?;
    let tool = frames.last().expect("frames always holds the tool");
    Ok(Pose::from_isometry(tool, model.task()))
}

/// Task Jacobian `J(q)` with `r_dot = J q_dot`, `task_dim x n`.
pub fn jacobian(model: &RobotModel, q: &[f64], kind: JacobianKind) -> Result<DMatrix<f64>, KinematicsError> {
    let frames = model.frames(q)?;
    let n = model.n_dof();
    let tip = frames[n].translation.vector;
    let mut linear = DMatrix::zeros(3, n);
    let mut angular = DMatrix::zeros(3, n);
    for (i, joint) in model.joints().iter().enumerate() {
        let axis = frames[i].rotation * joint.axis.into_inner();
        let lever = tip - frames[i].translation.vector;
        linear.fixed_view_mut::<3, 1>(0, i).copy_from(&axis.cross(&lever));
        angular.fixed_view_mut::<3, 1>(0, i).copy_from(&axis);
    }
    match model.task() {
        TaskSpace::Planar => {
            let mut j = DMatrix::zeros(3, n);
            j.row_mut(0).copy_from(&linear.row(0));
            j.row_mut(1).copy_from(&linear.row(1));
            j.row_mut(2).copy_from(&angular.row(2));
            Ok(j)
        }
        TaskSpace::Spatial => {
            if kind == JacobianKind::Analytic {
                let r_o = rotation::rotvec_from_quat(&frames[n].rotation);
                let map = rotation::left_jacobian_inverse(&r_o);
                angular = DMatrix::from_column_slice(3, 3, map.as_slice()) * angular;
            }
            let mut j = DMatrix::zeros(6, n);
            j.view_mut((0, 0), (3, n)).copy_from(&linear);
            j.view_mut((3, 0), (3, n)).copy_from(&angular);
            Ok(j)
        }
    }
}

/// Translational Jacobian (3 x n) of the origin of frame `index`: joint
/// `index` for `index < n`, the tool point for `index == n`. Only joints
/// before `index` move that point, so the remaining columns are zero.
pub fn point_jacobian(model: &RobotModel, q: &[f64], index: usize) -> Result<DMatrix<f64>, KinematicsError> {
    let n = model.n_dof();
    if index > n {
        return Err(KinematicsError::DimensionMismatch { expected: n + 1, got: index + 1 });
    }
    let frames = model.frames(q)?;
    let point = frames[index].translation.vector;
    let mut j = DMatrix::zeros(3, n);
    for (i, joint) in model.joints().iter().enumerate().take(index) {
        let axis = frames[i].rotation * joint.axis.into_inner();
        let col = axis.cross(&(point - frames[i].translation.vector));
        j.fixed_view_mut::<3, 1>(0, i).copy_from(&col);
    }
    Ok(j)
}

fn smallest_singular_value(j: &DMatrix<f64>) -> f64 {
    j.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Right pseudo-inverse `J^T (J J^T)^{-1}` of a wide, full-row-rank matrix.
pub fn pseudo_inverse(j: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>, KinematicsError> {
    if j.nrows() > j.ncols() {
        return Err(KinematicsError::Singular { sigma_min: 0.0 });
    }
    let sigma_min = smallest_singular_value(j);
    if !(sigma_min > rank_tol) {
        return Err(KinematicsError::Singular { sigma_min });
    }
    let gram = j * j.transpose();
    let chol = gram.cholesky().ok_or(KinematicsError::Singular { sigma_min })?;
    // (J J^T)^{-1} J, transposed
    Ok(chol.solve(j).transpose())
}

/// Null-space projector `I - J^+ J`.
pub fn null_projector(j: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>, KinematicsError> {
    let pinv = pseudo_inverse(j, rank_tol)?;
    Ok(null_projector_from(j, &pinv))
}

/// `I - J^+ J` for an already computed pseudo-inverse.
pub fn null_projector_from(j: &DMatrix<f64>, pinv: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::identity(j.ncols(), j.ncols()) - pinv * j
}

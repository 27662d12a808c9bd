//! Adaptive region-based visual servo law with null-space human efforts.
//!
//! `u = -J^+ (J_s^T xi_x + xi_r) + N c_d^{-1} (d - xi_q)`, where the image
//! Jacobian transpose is read off an RBF network `vec(J_s^T) = W theta(r)`
//! whose weights adapt online.

use nalgebra::{DMatrix, DVector, Vector2};
use thiserror::Error;

use crate::camera::Feature;
use crate::kinematics::{self, JacobianKind, KinematicsError, Pose, RobotModel, TaskSpace};
use crate::regions::{self, RegionError, RegionSet, DEFAULT_ANGLE_EPS};

/// Initial image-Jacobian guess for the spatial task (2 x 6), px per m / rad.
pub const DEFAULT_PRIOR: [[f64; 6]; 2] = [
    [-1500.0, 0.0, 0.0, 0.0, -200.0, 60.0],
    [0.0, 2400.0, 170.0, -200.0, 0.0, 180.0],
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("invalid controller setup: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub c_d: f64,
    pub mode: JacobianKind,
    pub rank_tol: f64,
    pub angle_eps: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            c_d: 3.0,
            mode: JacobianKind::Geometric,
            rank_tol: kinematics::DEFAULT_RANK_TOL,
            angle_eps: DEFAULT_ANGLE_EPS,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.c_d > 0.0 && self.c_d.is_finite()) {
            return Err(ControlError::Invalid("c_d must be positive".into()));
        }
        if !(self.rank_tol > 0.0 && self.angle_eps > 0.0) {
            return Err(ControlError::Invalid("rank_tol and angle_eps must be positive".into()));
        }
        Ok(())
    }
}

/// RBF estimator of `J_s^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveState {
    /// `2m x n_k`.
    pub w_hat: DMatrix<f64>,
    pub centers: Vec<DVector<f64>>,
    pub sigma: Vec<f64>,
    /// `n_k x n_k`, symmetric positive definite (or zero to freeze adaptation).
    pub l: DMatrix<f64>,
    /// Indices into `[r_t; r_o]` that feed the network.
    pub input_selector: Vec<usize>,
    /// Set once the weights have been seeded from the prior.
    pub initialized: bool,
}

impl AdaptiveState {
    pub fn new(
        task_dim: usize,
        centers: Vec<DVector<f64>>,
        sigma: Vec<f64>,
        l: DMatrix<f64>,
        input_selector: Vec<usize>,
    ) -> Result<Self, ControlError> {
        let state = Self {
            w_hat: DMatrix::zeros(2 * task_dim, centers.len()),
            centers,
            sigma,
            l,
            input_selector,
            initialized: false,
        };
        state.validate()?;
        Ok(state)
    }

    /// 3 x 3 grid of centers at `(0.05 + 0.15 i, 0.35 + 0.15 j)`, `sigma = 0.1`,
    /// `L = 0.25 I`, fed by the horizontal translation `(x, y)`.
    pub fn grid_defaults(task_dim: usize) -> Self {
        let mut centers = Vec::with_capacity(9);
        for a in [0.05, 0.2, 0.35] {
            for b in [0.35, 0.5, 0.65] {
                centers.push(DVector::from_vec(vec![a, b]));
            }
        }
        Self::new(task_dim, centers, vec![0.1; 9], DMatrix::identity(9, 9) * 0.25, vec![0, 1])
            .expect("grid defaults are valid")
    }

    pub fn n_k(&self) -> usize {
        self.centers.len()
    }

    pub fn task_dim(&self) -> usize {
        self.w_hat.nrows() / 2
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let n_k = self.centers.len();
        if n_k == 0 || self.sigma.len() != n_k {
            return Err(ControlError::Invalid("need one sigma per RBF center".into()));
        }
        if self.sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(ControlError::Invalid("RBF widths must be positive".into()));
        }
        if self.input_selector.is_empty() || self.input_selector.iter().any(|&i| i >= 6) {
            return Err(ControlError::Invalid("input selector indices must lie in 0..6".into()));
        }
        if self.centers.iter().any(|c| c.len() != self.input_selector.len()) {
            return Err(ControlError::Invalid("RBF center dimension must match the input selector".into()));
        }
        if self.w_hat.ncols() != n_k || self.w_hat.nrows() % 2 != 0 || self.w_hat.nrows() == 0 {
            return Err(ControlError::Invalid("weight matrix must be 2m x n_k".into()));
        }
        if self.l.shape() != (n_k, n_k) {
            return Err(ControlError::Invalid("L must be n_k x n_k".into()));
        }
        if (&self.l - self.l.transpose()).amax() > 1e-12 {
            return Err(ControlError::Invalid("L must be symmetric".into()));
        }
        // zero L is allowed: it freezes the weights
        if self.l.amax() > 0.0 && self.l.clone().cholesky().is_none() {
            return Err(ControlError::Invalid("L must be positive definite".into()));
        }
        Ok(())
    }

    /// Network input selected from `[r_t; r_o]`.
    pub fn rbf_input(&self, pose: &Pose) -> DVector<f64> {
        let full = [pose.r_t.x, pose.r_t.y, pose.r_t.z, pose.r_o.x, pose.r_o.y, pose.r_o.z];
        DVector::from_iterator(self.input_selector.len(), self.input_selector.iter().map(|&i| full[i]))
    }

    /// Seeds `W(i, j) = vec(J_s^T)(i) / sum(theta)` so that `W theta`
    /// reproduces `prior` exactly at the current pose.
    pub fn initialized_from_prior(&self, prior: &DMatrix<f64>, theta: &DVector<f64>) -> Result<Self, ControlError> {
        let m = self.task_dim();
        if prior.shape() != (2, m) {
            return Err(ControlError::Invalid(format!("prior must be 2 x {m}")));
        }
        let total: f64 = theta.sum();
        let vec_jst = prior.transpose();
        let mut next = self.clone();
        for (i, v) in vec_jst.as_slice().iter().enumerate() {
            next.w_hat.row_mut(i).fill(v / total);
        }
        next.initialized = true;
        Ok(next)
    }
}

/// `theta_i = exp(-|r_sel - c_i|^2 / (2 sigma_i^2))`.
pub fn rbf_features(state: &AdaptiveState, pose: &Pose) -> DVector<f64> {
    let x = state.rbf_input(pose);
    DVector::from_iterator(
        state.n_k(),
        state
            .centers
            .iter()
            .zip(&state.sigma)
            .map(|(c, s)| (-(&x - c).norm_squared() / (2.0 * s * s)).exp()),
    )
}

/// `J_s^T` (m x 2) from `vec(J_s^T) = W theta`, column-major.
pub fn estimate_jacobian_transpose(state: &AdaptiveState, theta: &DVector<f64>) -> DMatrix<f64> {
    let v = &state.w_hat * theta;
    DMatrix::from_column_slice(state.task_dim(), 2, v.as_slice())
}

/// `xi_x' = [xi_1 I_m, xi_2 I_m]`, so `xi_x' vec(J_s^T) = J_s^T xi_x`.
pub fn reshape_xi(xi_x: &Vector2<f64>, m: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m, 2 * m);
    for i in 0..m {
        out[(i, i)] = xi_x.x;
        out[(i, m + i)] = xi_x.y;
    }
    out
}

/// One explicit Euler step of `W_dot = -[L theta residual^T xi_x']^T`.
pub fn update_weights(
    state: &AdaptiveState,
    theta: &DVector<f64>,
    xi_x: &Vector2<f64>,
    xi_r: &DVector<f64>,
    jst: &DMatrix<f64>,
    dt: f64,
) -> AdaptiveState {
    let residual = jst * xi_x + xi_r;
    let xi_prime = reshape_xi(xi_x, state.task_dim());
    let inner = (&state.l * theta) * residual.transpose() * xi_prime;
    let mut next = state.clone();
    next.w_hat -= dt * inner.transpose();
    next
}

/// Monitored part of the Lyapunov candidate: `P_v(x) + P_c(r)`.
pub fn lyapunov_monitor(regions: &RegionSet, feature: &Feature, vision_active: bool, pose: &Pose) -> f64 {
    regions.vision.potential(&feature.x, vision_active)
        + regions::cartesian_potential(&regions.cartesian_box, &regions.cone, pose)
}

/// What the controller is allowed to observe in one step.
#[derive(Debug, Clone)]
pub struct Observation<'a> {
    pub feature: Feature,
    pub target_visible: bool,
    /// Human effort already mapped to joint space.
    pub d: &'a DVector<f64>,
    /// Replaces the network estimate of `J_s^T` (m x 2); used to test the
    /// closed loop against the true camera.
    pub jst_override: Option<&'a DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub u: DVector<f64>,
    /// `J_s^T xi_x + xi_r`.
    pub task_residual: DVector<f64>,
    pub xi_q: DVector<f64>,
    pub xi_r: DVector<f64>,
    pub xi_x: Vector2<f64>,
    pub v_monitor: f64,
    pub jst: DMatrix<f64>,
    pub theta: DVector<f64>,
    pub vision_active: bool,
    /// Orientation path actually used this step (analytic may fall back).
    pub path: JacobianKind,
    pub pose: Pose,
}

fn all_finite<'a>(mut it: impl Iterator<Item = &'a f64>) -> bool {
    it.all(|v| v.is_finite())
}

/// Evaluates the control law at `q`.
pub fn control_input(
    model: &RobotModel,
    config: &ControllerConfig,
    regions: &RegionSet,
    state: &AdaptiveState,
    q: &[f64],
    obs: &Observation<'_>,
) -> Result<ControlOutput, ControlError> {
    if !all_finite(q.iter()) {
        return Err(ControlError::NonFinite("q"));
    }
    if !all_finite(obs.d.iter()) {
        return Err(ControlError::NonFinite("d"));
    }
    if !all_finite(obs.feature.x.iter()) {
        return Err(ControlError::NonFinite("feature"));
    }
    let n = model.n_dof();
    if obs.d.len() != n {
        return Err(KinematicsError::DimensionMismatch { expected: n, got: obs.d.len() }.into());
    }
    let m = model.task_dim();
    if state.task_dim() != m {
        return Err(ControlError::Invalid(format!("estimator built for task dimension {}, robot has {m}", state.task_dim())));
    }

    let pose = kinematics::forward_kinematics(model, q)?;
    let (path, xi_r) = match regions::cartesian_feedback(&regions.cartesian_box, &regions.cone, &pose, config.mode, config.angle_eps) {
        Ok(xi) => (config.mode, xi),
        Err(RegionError::SmallAngle { .. }) => {
            let xi = regions::cartesian_feedback(
                &regions.cartesian_box,
                &regions.cone,
                &pose,
                JacobianKind::Geometric,
                config.angle_eps,
            )?;
            (JacobianKind::Geometric, xi)
        }
        Err(e) => return Err(e.into()),
    };
    // planar poses carry no analytic/geometric distinction
    let path = if model.task() == TaskSpace::Planar { JacobianKind::Geometric } else { path };

    let j = kinematics::jacobian(model, q, path)?;
    let j_pinv = kinematics::pseudo_inverse(&j, config.rank_tol)?;
    let null = kinematics::null_projector_from(&j, &j_pinv);

    let vision_active = obs.feature.visible && obs.target_visible;
    let xi_x = regions::vision_feedback(&regions.vision, &obs.feature.x, vision_active);
    let theta = rbf_features(state, &pose);
    let jst = match obs.jst_override {
        Some(o) => {
            if o.shape() != (m, 2) {
                return Err(ControlError::Invalid(format!("Jacobian override must be {m} x 2")));
            }
            o.clone()
        }
        None => estimate_jacobian_transpose(state, &theta),
    };
    let xi_q = regions::joint_feedback(&regions.joint_regions, q);

    let task_residual = &jst * xi_x + &xi_r;
    let u = -(&j_pinv * &task_residual) + &null * ((obs.d - &xi_q) / config.c_d);
    if !all_finite(u.iter()) {
        return Err(ControlError::NonFinite("u"));
    }
    let v_monitor = lyapunov_monitor(regions, &obs.feature, vision_active, &pose);
    Ok(ControlOutput { u, task_residual, xi_q, xi_r, xi_x, v_monitor, jst, theta, vision_active, path, pose })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regions::{CartesianBoxRegion, OrientationConeRegion, VisionEllipseRegion};
    use nalgebra::{UnitQuaternion, Vector3};

    fn single_center_state(m: usize) -> AdaptiveState {
        AdaptiveState::new(m, vec![DVector::from_vec(vec![0.0, 0.0])], vec![1.0], DMatrix::identity(1, 1), vec![0, 1])
            .unwrap()
    }

    #[test]
    fn rbf_center_and_one_sigma() {
        let state = AdaptiveState::grid_defaults(6);
        let mut pose = Pose::from_isometry(&nalgebra::Isometry3::translation(0.05, 0.35, 0.0), TaskSpace::Spatial);
        let th = rbf_features(&state, &pose);
        assert!((th[0] - 1.0).abs() < 1e-15);
        pose.r_t.x += 0.1;
        let th = rbf_features(&state, &pose);
        assert!((th[0] - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_give_zero_estimate() {
        let state = AdaptiveState::grid_defaults(6);
        let th = DVector::from_element(9, 0.3);
        assert_eq!(estimate_jacobian_transpose(&state, &th).norm(), 0.0);
    }

    #[test]
    fn single_neuron_picks_out_column() {
        let mut state = single_center_state(3);
        for i in 0..6 {
            state.w_hat[(i, 0)] = i as f64 + 1.0;
        }
        let jst = estimate_jacobian_transpose(&state, &DVector::from_element(1, 1.0));
        assert_eq!(jst.column(0).as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(jst.column(1).as_slice(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn prior_is_reconstructed_at_seed_pose() {
        let state = AdaptiveState::grid_defaults(6);
        let prior = DMatrix::from_row_slice(2, 6, &DEFAULT_PRIOR.concat());
        let pose = Pose::from_isometry(&nalgebra::Isometry3::translation(0.17, 0.52, 0.3), TaskSpace::Spatial);
        let th = rbf_features(&state, &pose);
        let seeded = state.initialized_from_prior(&prior, &th).unwrap();
        let jst = estimate_jacobian_transpose(&seeded, &th);
        assert!((jst.transpose() - prior).amax() < 1e-9);
    }

    #[test]
    fn reshape_xi_pick_out() {
        assert_eq!(reshape_xi(&Vector2::zeros(), 2).norm(), 0.0);
        let r = reshape_xi(&Vector2::new(1.0, 0.0), 2);
        let mut expected = DMatrix::zeros(2, 4);
        expected[(0, 0)] = 1.0;
        expected[(1, 1)] = 1.0;
        assert_eq!(r, expected);
    }

    #[test]
    fn frozen_cases_leave_weights() {
        let mut state = AdaptiveState::grid_defaults(6);
        state.w_hat = DMatrix::from_fn(12, 9, |i, j| (i * 9 + j) as f64);
        let th = DVector::from_element(9, 0.5);
        let xi_r = DVector::from_element(6, 0.1);
        let jst = estimate_jacobian_transpose(&state, &th);
        assert_eq!(update_weights(&state, &th, &Vector2::zeros(), &xi_r, &jst, 1e-3).w_hat, state.w_hat);
        state.l = DMatrix::zeros(9, 9);
        state.validate().unwrap();
        let next = update_weights(&state, &th, &Vector2::new(0.1, -0.2), &xi_r, &jst, 1e-3);
        assert_eq!(next.w_hat, state.w_hat);
    }

    #[test]
    fn non_symmetric_gain_rejected() {
        let mut state = AdaptiveState::grid_defaults(6);
        state.l[(0, 1)] = 0.1;
        assert!(state.validate().is_err());
    }

    fn planar_setup() -> (RobotModel, RegionSet) {
        let model = RobotModel::planar(&[0.5, 0.4, 0.3]).unwrap();
        let regions = RegionSet {
            joint_regions: vec![],
            cartesian_box: CartesianBoxRegion {
                center: Vector3::new(0.5, 0.5, 0.0),
                half_sizes: Vector3::new(2.0, 2.0, 2.0),
                gains: Vector3::new(1.0, 1.0, 1.0),
            },
            cone: OrientationConeRegion { goal: UnitQuaternion::identity(), alpha: 0.1, k_o: 1.0 },
            vision: VisionEllipseRegion { x_d: Vector2::new(10.0, 10.0), half_sizes: Vector2::new(100.0, 100.0), k_v: 1.0 },
        };
        (model, regions)
    }

    #[test]
    fn converged_fixed_point_is_still() {
        let (model, regions) = planar_setup();
        let state = single_center_state(3);
        let d = DVector::zeros(3);
        let obs = Observation {
            feature: Feature { x: regions.vision.x_d, visible: true },
            target_visible: true,
            d: &d,
            jst_override: None,
        };
        let out = control_input(&model, &ControllerConfig::default(), &regions, &state, &[0.3, 0.4, 0.2], &obs).unwrap();
        assert!(out.u.norm() < 1e-12);
        assert!(out.v_monitor.abs() < 1e-12);
    }

    #[test]
    fn non_finite_q_rejected() {
        let (model, regions) = planar_setup();
        let state = single_center_state(3);
        let d = DVector::zeros(3);
        let obs = Observation { feature: Feature { x: Vector2::zeros(), visible: false }, target_visible: true, d: &d, jst_override: None };
        let err = control_input(&model, &ControllerConfig::default(), &regions, &state, &[f64::NAN, 0.0, 0.0], &obs);
        assert_eq!(err, Err(ControlError::NonFinite("q")));
    }
}

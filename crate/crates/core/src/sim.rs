//! Fixed-step kinematic world and the grasp -> transfer -> place pipeline.
//!
//! The arm integrates `q_dot = u` with explicit Euler. While servoing, `u`
//! comes from the adaptive controller; during transfer and placement it tracks
//! a DMP reference, `u = (q_ref,next - q) / dt`.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::camera::{CameraError, CameraModel, Feature};
use crate::controller::{self, AdaptiveState, ControlError, ControlOutput, ControllerConfig, Observation};
use crate::dmp::{self, DmpError, DmpModel, LearnParams, Overrides, ReproduceParams, Trajectory};
use crate::kinematics::{self, JacobianKind, KinematicsError, Pose, RobotModel, TaskSpace};
use crate::regions::{CartesianBoxRegion, RegionError, RegionSet};
use crate::runlog::{self, Diagnostics, Header, Outcome, Phase, RunLog, StepRecord};

/// Truncation threshold for the drag pseudo-inverse.
const DRAG_SVD_EPS: f64 = 1e-9;
/// Duration of the synthesized transfer demonstration, seconds.
const SYNTH_DEMO_DURATION: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Dmp(#[from] DmpError),
}

/// A human pulling on one point of the arm.
#[derive(Debug, Clone, PartialEq)]
pub struct HumanEffortCommand {
    /// Frame whose origin is dragged: joint `k` for `k < n`, the tool for `k = n`.
    pub joint_index: usize,
    /// Desired velocity of that point, world frame, m/s.
    pub drag: Vector3<f64>,
    /// Seconds.
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedEffort {
    pub start: f64,
    pub command: HumanEffortCommand,
}

impl ScriptedEffort {
    fn active_at(&self, t: f64) -> bool {
        t >= self.start && t < self.start + self.command.duration
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub position: Vector3<f64>,
    /// Joint-space placement goal.
    pub shelf: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub model: RobotModel,
    pub camera: CameraModel,
    pub regions: RegionSet,
    pub controller: ControllerConfig,
    pub adaptive: AdaptiveState,
    /// Initial image-Jacobian guess, `2 x task_dim`.
    pub prior: DMatrix<f64>,
    /// Start and home configuration.
    pub q_init: Vec<f64>,
    pub objects: Vec<ObjectSpec>,
    /// Transfer primitive; learned from a synthetic demonstration when absent.
    pub transfer: Option<DmpModel>,
    pub transfer_tau: Option<f64>,
    pub efforts: Vec<ScriptedEffort>,
    pub dt: f64,
    pub seed: u64,
    /// Objects are shifted uniformly by up to this much in x and y.
    pub target_jitter: f64,
    pub phase_timeout: f64,
    pub max_time: Option<f64>,
    pub grasp_tol: f64,
    pub log_stride: usize,
    /// Substitute the true camera Jacobian for the estimate.
    pub oracle_jacobian: bool,
    /// Grasp as soon as the grasp condition holds; otherwise keep servoing.
    pub auto_grasp: bool,
}

/// True when some point of the box projects into the image.
pub fn box_overlaps_fov(camera: &CameraModel, region: &CartesianBoxRegion) -> bool {
    const N: usize = 5;
    let lerp = |i: usize, axis: usize| -> f64 {
        region.center[axis] + region.half_sizes[axis] * (2.0 * i as f64 / (N - 1) as f64 - 1.0)
    };
    (0..N).any(|i| (0..N).any(|j| (0..N).any(|k| camera.project(&Vector3::new(lerp(i, 0), lerp(j, 1), lerp(k, 2))).visible)))
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let n = self.model.n_dof();
        let m = self.model.task_dim();
        self.camera.validate()?;
        self.regions.validate(n)?;
        self.controller.validate()?;
        self.adaptive.validate()?;
        if self.adaptive.task_dim() != m {
            return Err(SimError::Invalid(format!("adaptive weights sized for task dimension {}, robot has {m}", self.adaptive.task_dim())));
        }
        if self.prior.shape() != (2, m) {
            return Err(SimError::Invalid(format!("prior image Jacobian must be 2 x {m}")));
        }
        if self.q_init.len() != n {
            return Err(KinematicsError::DimensionMismatch { expected: n, got: self.q_init.len() }.into());
        }
        if self.objects.is_empty() {
            return Err(SimError::Invalid("scenario needs at least one object".into()));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.shelf.len() != n || !o.position.iter().chain(&o.shelf).all(|v| v.is_finite()) {
                return Err(SimError::Invalid(format!("object {i}: shelf must have {n} finite joint values")));
            }
        }
        if let Some(model) = &self.transfer {
            model.validate()?;
            if model.n_dof() != n {
                return Err(SimError::Invalid(format!("transfer primitive has {} DOFs, robot has {n}", model.n_dof())));
            }
        }
        for (i, e) in self.efforts.iter().enumerate() {
            if e.command.joint_index > n || !e.command.drag.iter().all(|v| v.is_finite()) || !(e.command.duration >= 0.0) {
                return Err(SimError::Invalid(format!("effort {i}: joint index must be <= {n} with finite drag")));
            }
        }
        if !(self.dt > 0.0 && self.dt <= 0.01) {
            return Err(SimError::Invalid("dt must lie in (0, 0.01] s".into()));
        }
        if !(self.grasp_tol > 0.0 && self.phase_timeout > 0.0 && self.target_jitter >= 0.0) {
            return Err(SimError::Invalid("grasp_tol and phase_timeout must be positive, target_jitter nonnegative".into()));
        }
        if self.log_stride == 0 {
            return Err(SimError::Invalid("log_stride must be at least 1".into()));
        }
        if !box_overlaps_fov(&self.camera, &self.regions.cartesian_box) {
            return Err(SimError::Invalid("Cartesian box does not overlap the camera field of view".into()));
        }
        Ok(())
    }
}

/// Maps a Cartesian drag on one point of the arm to joint velocities,
/// `d = J_k^+ v`, using only the joints that move that point. Returns zero
/// when the point cannot move at all.
pub fn effort_to_joint_space(model: &RobotModel, q: &[f64], cmd: &HumanEffortCommand) -> Result<DVector<f64>, SimError> {
    let n = model.n_dof();
    if cmd.drag.norm() == 0.0 {
        return Ok(DVector::zeros(n));
    }
    let jk = kinematics::point_jacobian(model, q, cmd.joint_index)?;
    let (jk, v) = match model.task() {
        TaskSpace::Spatial => (jk, DVector::from_column_slice(cmd.drag.as_slice())),
        TaskSpace::Planar => (jk.rows(0, 2).into_owned(), DVector::from_vec(vec![cmd.drag.x, cmd.drag.y])),
    };
    let svd = jk.svd(true, true);
    if svd.singular_values.max() <= DRAG_SVD_EPS {
        log::warn!("drag on frame {} ignored: point cannot move", cmd.joint_index);
        return Ok(DVector::zeros(n));
    }
    let pinv = svd.pseudo_inverse(DRAG_SVD_EPS).map_err(|e| SimError::Invalid(e.to_string()))?;
    Ok(pinv * v)
}

/// Ordered inputs drained at the start of each step.
#[derive(Debug, Clone, PartialEq)]
pub enum SimCommand {
    Drag { joint_index: usize, vector: Vector3<f64>, active: bool },
    SetBox(CartesianBoxRegion),
}

/// Immutable view of the world for publishing.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub t: f64,
    pub phase: Phase,
    pub q: Vec<f64>,
    pub q_dot: Vec<f64>,
    pub ee: Pose,
    pub feature: Feature,
    pub target_px: Feature,
    pub joint_positions: Vec<Vector3<f64>>,
    pub objects: Vec<Vector3<f64>>,
    pub cartesian_box: CartesianBoxRegion,
    pub effort_active: bool,
    pub diag: Option<Diagnostics>,
}

pub struct Simulator {
    scenario: Scenario,
    regions: RegionSet,
    adaptive: AdaptiveState,
    transfer: Option<DmpModel>,
    q: Vec<f64>,
    q_dot: Vec<f64>,
    step_count: u64,
    t: f64,
    phase: Phase,
    phase_start: f64,
    objects: Vec<Vector3<f64>>,
    current: usize,
    grasped: bool,
    reference: Option<(Trajectory, usize)>,
    live_drags: BTreeMap<usize, Vector3<f64>>,
    queue: VecDeque<SimCommand>,
    log: RunLog,
    last_record: Option<StepRecord>,
    outcome: Option<Outcome>,
}

fn path_name(kind: JacobianKind) -> &'static str {
    match kind {
        JacobianKind::Analytic => "analytic",
        JacobianKind::Geometric => "geometric",
    }
}

fn diagnostics(out: &ControlOutput) -> Diagnostics {
    Diagnostics {
        residual: out.task_residual.iter().copied().collect(),
        residual_norm: out.task_residual.norm(),
        xi_q_norm: out.xi_q.norm(),
        xi_r_norm: out.xi_r.norm(),
        xi_x_norm: out.xi_x.norm(),
        v_monitor: out.v_monitor,
        vision_active: out.vision_active,
        path: path_name(out.path).into(),
    }
}

impl Simulator {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        let jitter = scenario.target_jitter;
        let objects = scenario
            .objects
            .iter()
            .map(|o| {
                let mut p = o.position;
                if jitter > 0.0 {
                    p.x += rng.random_range(-jitter..=jitter);
                    p.y += rng.random_range(-jitter..=jitter);
                }
                p
            })
            .collect();
        let transfer = match &scenario.transfer {
            Some(m) => m.clone(),
            None => {
                let demo = dmp::minimum_jerk_demo(&scenario.q_init, &scenario.objects[0].shelf, SYNTH_DEMO_DURATION, scenario.dt);
                dmp::learn(&demo, &LearnParams::default())?
            }
        };
        let header = Header {
            format: runlog::FORMAT.into(),
            version: runlog::VERSION,
            scenario: scenario.name.clone(),
            dt: scenario.dt,
            seed: scenario.seed,
            n_dof: scenario.model.n_dof(),
            task_dim: scenario.model.task_dim(),
            log_stride: scenario.log_stride,
        };
        let n = scenario.model.n_dof();
        Ok(Self {
            regions: scenario.regions.clone(),
            adaptive: scenario.adaptive.clone(),
            transfer: Some(transfer),
            q: scenario.q_init.clone(),
            q_dot: vec![0.0; n],
            step_count: 0,
            t: 0.0,
            phase: Phase::Approach,
            phase_start: 0.0,
            objects,
            current: 0,
            grasped: false,
            reference: None,
            live_drags: BTreeMap::new(),
            queue: VecDeque::new(),
            log: RunLog::new(header),
            last_record: None,
            outcome: None,
            scenario,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn regions(&self) -> &RegionSet {
        &self.regions
    }

    pub fn adaptive(&self) -> &AdaptiveState {
        &self.adaptive
    }

    pub fn outcome(&self) -> Option<&Outcome> {
        self.outcome.as_ref()
    }

    pub fn is_finished(&self) -> bool {
        self.outcome.is_some()
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn last_record(&self) -> Option<&StepRecord> {
        self.last_record.as_ref()
    }

    pub fn enqueue(&mut self, cmd: SimCommand) {
        self.queue.push_back(cmd);
    }

    /// Checks a replacement box against the region and camera invariants.
    pub fn check_box(&self, region: &CartesianBoxRegion) -> Result<(), SimError> {
        region.validate()?;
        if !box_overlaps_fov(&self.scenario.camera, region) {
            return Err(SimError::Invalid("Cartesian box does not overlap the camera field of view".into()));
        }
        Ok(())
    }

    fn pose(&self) -> Pose {
        kinematics::forward_kinematics(&self.scenario.model, &self.q).expect("q length checked at construction")
    }

    fn target_position(&self) -> Vector3<f64> {
        if self.grasped {
            self.pose().r_t
        } else {
            self.objects[self.current.min(self.objects.len() - 1)]
        }
    }

    pub fn snapshot(&self) -> WorldState {
        let ee = self.pose();
        WorldState {
            t: self.t,
            phase: self.phase,
            q: self.q.clone(),
            q_dot: self.q_dot.clone(),
            feature: self.scenario.camera.project(&ee.r_t),
            target_px: self.scenario.camera.project(&self.target_position()),
            joint_positions: self.scenario.model.joint_positions(&self.q).expect("q length checked"),
            objects: self.objects.clone(),
            cartesian_box: self.regions.cartesian_box.clone(),
            effort_active: self.effort_active(),
            diag: self.last_record.as_ref().and_then(|r| r.diag.clone()),
            ee,
        }
    }

    fn effort_active(&self) -> bool {
        !self.live_drags.is_empty() || self.scenario.efforts.iter().any(|e| e.active_at(self.t))
    }

    fn drain_commands(&mut self) {
        while let Some(cmd) = self.queue.pop_front() {
            match cmd {
                SimCommand::Drag { joint_index, vector, active } => {
                    if joint_index > self.scenario.model.n_dof() || !vector.iter().all(|v| v.is_finite()) {
                        log::warn!("ignoring malformed drag on frame {joint_index}");
                    } else if active {
                        self.live_drags.insert(joint_index, vector);
                    } else {
                        self.live_drags.remove(&joint_index);
                    }
                }
                SimCommand::SetBox(region) => match self.check_box(&region) {
                    Ok(()) => self.regions.cartesian_box = region,
                    Err(e) => log::warn!("rejected box: {e}"),
                },
            }
        }
    }

    fn human_effort(&self) -> Result<DVector<f64>, SimError> {
        let model = &self.scenario.model;
        let mut d = DVector::zeros(model.n_dof());
        let scripted = self.scenario.efforts.iter().filter(|e| e.active_at(self.t)).map(|e| e.command.clone());
        let live = self.live_drags.iter().map(|(&joint_index, &drag)| HumanEffortCommand { joint_index, drag, duration: 0.0 });
        for cmd in scripted.chain(live) {
            d += effort_to_joint_space(model, &self.q, &cmd)?;
        }
        Ok(d)
    }

    fn set_phase(&mut self, phase: Phase) {
        log::debug!("t = {:.3}: {:?} -> {:?}", self.t, self.phase, phase);
        self.phase = phase;
        self.phase_start = self.t;
    }

    fn finish(&mut self, outcome: Outcome) {
        log::info!("run finished: {outcome:?}");
        if let Some(last) = &self.last_record {
            if self.log.records.last() != Some(last) {
                self.log.records.push(last.clone());
            }
        }
        self.log.outcome = Some(outcome.clone());
        self.outcome = Some(outcome);
    }

    fn record(&mut self, u: &[f64], diag: Option<Diagnostics>) {
        let pose = self.pose();
        let feature = self.scenario.camera.project(&pose.r_t);
        let target = self.scenario.camera.project(&self.target_position());
        let rec = StepRecord {
            t: self.t,
            phase: self.phase,
            q: self.q.clone(),
            u: u.to_vec(),
            r_t: [pose.r_t.x, pose.r_t.y, pose.r_t.z],
            p: [pose.p.w, pose.p.i, pose.p.j, pose.p.k],
            r_o: [pose.r_o.x, pose.r_o.y, pose.r_o.z],
            x: [feature.x.x, feature.x.y],
            visible: feature.visible,
            target: [target.x.x, target.x.y],
            target_visible: target.visible,
            effort_active: self.effort_active(),
            diag,
        };
        if self.step_count % self.scenario.log_stride as u64 == 0 {
            self.log.records.push(rec.clone());
        }
        self.last_record = Some(rec);
    }

    fn advance_time(&mut self) {
        self.step_count += 1;
        self.t = self.step_count as f64 * self.scenario.dt;
    }

    /// Advances the world by one `dt`. No-op once finished.
    pub fn step(&mut self) {
        if self.is_finished() {
            return;
        }
        self.drain_commands();
        if let Some(max) = self.scenario.max_time {
            if self.t >= max - 0.5 * self.scenario.dt {
                self.finish(Outcome::Stopped { t: self.t, phase: self.phase });
                return;
            }
        }
        if self.t - self.phase_start > self.scenario.phase_timeout {
            self.finish(Outcome::Timeout { t: self.t, phase: self.phase });
            return;
        }
        match self.phase {
            Phase::Approach | Phase::VisualServo => self.servo_step(),
            Phase::Grasped => self.grasp_step(),
            Phase::Transfer | Phase::Place => self.reference_step(),
            Phase::Done => self.finish(Outcome::Done { t: self.t }),
        }
    }

    /// Steps until the run finishes and returns the log.
    pub fn run(mut self) -> RunLog {
        while !self.is_finished() {
            self.step();
        }
        self.log
    }

    /// Steps until `stop` holds or the run finishes; returns whether `stop` held.
    pub fn run_until(&mut self, mut stop: impl FnMut(&Simulator) -> bool) -> bool {
        while !self.is_finished() {
            if stop(self) {
                return true;
            }
            self.step();
        }
        stop(self)
    }

    fn servo_step(&mut self) {
        let pose = self.pose();
        let feature = self.scenario.camera.project(&pose.r_t);
        let target = self.scenario.camera.project(&self.target_position());
        let vision_active = feature.visible && target.visible;
        self.regions.vision.x_d = target.x;
        if vision_active && self.phase == Phase::Approach {
            self.set_phase(Phase::VisualServo);
        }
        if vision_active && !self.adaptive.initialized {
            let theta = controller::rbf_features(&self.adaptive, &pose);
            match self.adaptive.initialized_from_prior(&self.scenario.prior, &theta) {
                Ok(seeded) => self.adaptive = seeded,
                Err(e) => return self.fail(e.to_string()),
            }
        }
        let d = match self.human_effort() {
            Ok(d) => d,
            Err(e) => return self.fail(e.to_string()),
        };
        let oracle = if self.scenario.oracle_jacobian {
            Some(match self.scenario.camera.true_image_jacobian(&pose) {
                Ok(js) => js.transpose(),
                Err(_) => DMatrix::zeros(self.scenario.model.task_dim(), 2),
            })
        } else {
            None
        };
        let obs = Observation { feature, target_visible: target.visible, d: &d, jst_override: oracle.as_ref() };
        let out = match controller::control_input(
            &self.scenario.model,
            &self.scenario.controller,
            &self.regions,
            &self.adaptive,
            &self.q,
            &obs,
        ) {
            Ok(out) => out,
            Err(ControlError::Kinematics(KinematicsError::Singular { sigma_min })) => {
                self.finish(Outcome::Singular { t: self.t, phase: self.phase, sigma_min });
                return;
            }
            Err(e) => return self.fail(e.to_string()),
        };
        self.q_dot = out.u.iter().copied().collect();
        self.record(&self.q_dot.clone(), Some(diagnostics(&out)));
        for (q, u) in self.q.iter_mut().zip(out.u.iter()) {
            *q += self.scenario.dt * u;
        }
        if out.vision_active {
            self.adaptive = controller::update_weights(&self.adaptive, &out.theta, &out.xi_x, &out.xi_r, &out.jst, self.scenario.dt);
        }
        self.advance_time();

        if self.phase == Phase::VisualServo && self.scenario.auto_grasp {
            let pose = self.pose();
            let feature = self.scenario.camera.project(&pose.r_t);
            let target = self.scenario.camera.project(&self.target_position());
            let close = (feature.x - target.x).norm() <= self.scenario.grasp_tol;
            if feature.visible && target.visible && close && self.regions.cone.value(&pose.p) <= 0.0 {
                self.set_phase(Phase::Grasped);
            }
        }
    }

    fn reproduce_to(&self, goal: &[f64]) -> Result<Trajectory, SimError> {
        let model = self.transfer.as_ref().expect("transfer primitive set at construction");
        let overrides = Overrides { goal: Some(goal.to_vec()), start: Some(self.q.clone()), tau: self.scenario.transfer_tau };
        Ok(dmp::reproduce(model, &overrides, &ReproduceParams { dt: self.scenario.dt, ..ReproduceParams::default() })?)
    }

    fn grasp_step(&mut self) {
        self.grasped = true;
        let n = self.q.len();
        self.q_dot = vec![0.0; n];
        self.record(&vec![0.0; n], None);
        self.advance_time();
        let shelf = self.scenario.objects[self.current].shelf.clone();
        match self.reproduce_to(&shelf) {
            Ok(traj) => {
                self.reference = Some((traj, 0));
                self.set_phase(Phase::Transfer);
            }
            Err(e) => self.fail(e.to_string()),
        }
    }

    fn reference_step(&mut self) {
        let dt = self.scenario.dt;
        let Some((traj, k)) = self.reference.take() else {
            return self.fail("no reference trajectory".into());
        };
        if k + 1 < traj.q.len() {
            let u: Vec<f64> = traj.q[k + 1].iter().zip(&self.q).map(|(r, q)| (r - q) / dt).collect();
            self.q_dot = u.clone();
            self.record(&u, None);
            for (q, u) in self.q.iter_mut().zip(&u) {
                *q += dt * u;
            }
            self.advance_time();
            self.reference = Some((traj, k + 1));
            return;
        }
        // reference exhausted
        match self.phase {
            Phase::Transfer => {
                self.objects[self.current] = self.pose().r_t;
                self.grasped = false;
                let home = self.scenario.q_init.clone();
                match self.reproduce_to(&home) {
                    Ok(traj) => {
                        self.reference = Some((traj, 0));
                        self.set_phase(Phase::Place);
                    }
                    Err(e) => self.fail(e.to_string()),
                }
            }
            _ => {
                self.current += 1;
                if self.current < self.objects.len() {
                    self.adaptive = self.scenario.adaptive.clone();
                    self.set_phase(Phase::Approach);
                } else {
                    self.set_phase(Phase::Done);
                }
            }
        }
    }

    fn fail(&mut self, message: String) {
        self.finish(Outcome::Failed { t: self.t, phase: self.phase, message });
    }
}

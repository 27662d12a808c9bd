//! Scenario configuration: TOML documents, environment overrides, and the
//! conversion into a validated [`Scenario`].
//!
//! Any field can be overridden from the environment with
//! `COBOT__<SECTION>__<FIELD>=<toml value>`; path segments are matched
//! case-insensitively and numeric segments index into arrays.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, Quaternion, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraModel;
use crate::controller::{AdaptiveState, ControllerConfig, DEFAULT_PRIOR};
use crate::dmp::DmpModel;
use crate::kinematics::{JacobianKind, Joint, RobotModel, TaskSpace, DEFAULT_RANK_TOL};
use crate::regions::{
    CartesianBoxRegion, JointRegion, OrientationConeRegion, RegionSet, VisionEllipseRegion, DEFAULT_ANGLE_EPS,
};
use crate::sim::{HumanEffortCommand, ObjectSpec, Scenario, ScriptedEffort};

pub const ENV_PREFIX: &str = "COBOT__";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Field { field: String, message: String },
}

fn field(field: impl Into<String>, message: impl ToString) -> ConfigError {
    ConfigError::Field { field: field.into(), message: message.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointConfig {
    pub axis: [f64; 3],
    pub offset: [f64; 3],
    pub limits: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    pub task: TaskSpace,
    pub tool_offset: [f64; 3],
    /// Start and home configuration, rad.
    pub q_init: Vec<f64>,
    pub joints: Vec<JointConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    pub position: [f64; 3],
    /// World-from-camera rotation vector, rad.
    pub rotation: [f64; 3],
}

/// One region per joint limit: `(q_i - q_lim)^2 - inner_radius^2 <= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointLimitSchema {
    pub inner_radius: f64,
    pub reference_radius: f64,
    pub k_q: f64,
    pub k_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointRegionConfig {
    pub joints: Vec<usize>,
    pub weights: Vec<f64>,
    pub center: Vec<f64>,
    pub radius: f64,
    pub reference_radius: f64,
    pub k_q: f64,
    pub k_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub center: [f64; 3],
    pub half_sizes: [f64; 3],
    pub gains: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrientationConfig {
    /// Goal quaternion `(v, u_x, u_y, u_z)`.
    pub goal: [f64; 4],
    pub alpha: f64,
    pub k_o: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisionConfig {
    pub half_sizes: [f64; 2],
    pub k_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_limits: Option<JointLimitSchema>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub joint: Vec<JointRegionConfig>,
    pub cartesian_box: BoxConfig,
    pub orientation: OrientationConfig,
    pub vision: VisionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub c_d: f64,
    pub mode: JacobianKind,
    pub rank_tol: f64,
    pub angle_eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveConfig {
    pub centers: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    /// `L = gain * I` unless `gain_matrix` is given.
    pub gain: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_matrix: Option<Vec<Vec<f64>>>,
    pub input_selector: Vec<usize>,
    /// Initial image Jacobian, 2 rows of `task_dim` entries.
    pub prior: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    /// DMP model JSON, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectConfig {
    pub position: [f64; 3],
    pub shelf: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffortConfig {
    pub start: f64,
    pub duration: f64,
    pub joint_index: usize,
    pub drag: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub dt: f64,
    pub seed: u64,
    pub phase_timeout: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_time: Option<f64>,
    pub grasp_tol: f64,
    pub log_stride: usize,
    pub target_jitter: f64,
    pub oracle_jacobian: bool,
    pub auto_grasp: bool,
    pub robot: RobotConfig,
    pub camera: CameraConfig,
    pub regions: RegionsConfig,
    pub controller: ControllerSection,
    pub adaptive: AdaptiveConfig,
    #[serde(default)]
    pub transfer: TransferConfig,
    pub objects: Vec<ObjectConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub efforts: Vec<EffortConfig>,
}

/// Home configuration of the default arm: tool at about (-0.3, 0.6, 0.35) m,
/// outside the camera view, with the goal orientation.
pub const DEFAULT_HOME: [f64; 7] = [-0.297757, -0.941296, -1.234763, -1.276772, 0.7388, -0.674911, 0.159427];

fn default_robot() -> RobotConfig {
    let z = [0.0, 0.0, 1.0];
    let y = [0.0, 1.0, 0.0];
    let joint = |axis: [f64; 3], dz: f64, limits: [f64; 2]| JointConfig { axis, offset: [0.0, 0.0, dz], limits };
    RobotConfig {
        task: TaskSpace::Spatial,
        tool_offset: [0.0, 0.0, 0.2],
        q_init: DEFAULT_HOME.to_vec(),
        joints: vec![
            joint(z, 0.333, [-2.9, 2.9]),
            joint(y, 0.0, [-2.0, 2.0]),
            joint(z, 0.0, [-2.9, 2.9]),
            joint(y, 0.316, [-2.9, -0.15]),
            joint(z, 0.384, [-2.9, 2.9]),
            joint(y, 0.0, [-2.0, 2.0]),
            joint(z, 0.0, [-2.9, 2.9]),
        ],
    }
}

impl Default for ScenarioConfig {
    /// Single grasp-and-place with the default control parameters.
    fn default() -> Self {
        let mut centers = Vec::with_capacity(9);
        for a in [0.05, 0.2, 0.35] {
            for b in [0.35, 0.5, 0.65] {
                centers.push(vec![a, b]);
            }
        }
        let mut shelf = DEFAULT_HOME.to_vec();
        shelf[0] += 0.8;
        shelf[1] += 0.2;
        Self {
            name: "table-i-grasp".into(),
            dt: 1e-3,
            seed: 0,
            phase_timeout: 120.0,
            max_time: None,
            grasp_tol: 2.0,
            log_stride: 1,
            target_jitter: 0.0,
            oracle_jacobian: false,
            auto_grasp: true,
            robot: default_robot(),
            camera: CameraConfig {
                fx: 1200.0,
                fy: 1200.0,
                cx: 720.0,
                cy: 540.0,
                width: 1440.0,
                height: 1080.0,
                position: [0.2, 0.5, 1.0],
                rotation: [0.0, std::f64::consts::PI, 0.0],
            },
            regions: RegionsConfig {
                joint_limits: Some(JointLimitSchema { inner_radius: 0.1, reference_radius: 0.3, k_q: 10.0, k_r: 1.0 }),
                joint: Vec::new(),
                cartesian_box: BoxConfig {
                    center: [0.2, 0.5, 0.25],
                    half_sizes: [0.25, 0.2, 0.15],
                    gains: [4e-4, 4e-4, 4e-5],
                },
                orientation: OrientationConfig { goal: [-0.28, 0.63, 0.66, 0.28], alpha: 15.0, k_o: 1.0 },
                vision: VisionConfig { half_sizes: [1440.0, 1080.0], k_v: 0.3 },
            },
            controller: ControllerSection {
                c_d: 3.0,
                mode: JacobianKind::Geometric,
                rank_tol: DEFAULT_RANK_TOL,
                angle_eps: DEFAULT_ANGLE_EPS,
            },
            adaptive: AdaptiveConfig {
                centers,
                sigma: vec![0.1; 9],
                gain: 0.25,
                gain_matrix: None,
                input_selector: vec![0, 1],
                prior: DEFAULT_PRIOR.iter().map(|r| r.to_vec()).collect(),
            },
            transfer: TransferConfig::default(),
            objects: vec![ObjectConfig { position: [0.2, 0.5, 0.25], shelf }],
            efforts: Vec::new(),
        }
    }
}

/// Applies `COBOT__a__b=value` overrides to a parsed document.
pub fn apply_overrides<I>(doc: &mut toml::Value, vars: I) -> Result<(), ConfigError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(|s| s.to_ascii_lowercase()).collect();
        if path.iter().any(|s| s.is_empty()) {
            return Err(field(key, "malformed override path"));
        }
        let value = parse_scalar(&raw);
        let mut node = &mut *doc;
        for (depth, seg) in path.iter().enumerate() {
            let last = depth + 1 == path.len();
            node = match node {
                toml::Value::Table(t) => {
                    if last {
                        t.insert(seg.clone(), value.clone());
                        break;
                    }
                    t.entry(seg.clone()).or_insert_with(|| toml::Value::Table(Default::default()))
                }
                toml::Value::Array(a) => {
                    let idx: usize = seg.parse().map_err(|_| field(key.clone(), format!("'{seg}' is not an array index")))?;
                    let len = a.len();
                    let slot = a.get_mut(idx).ok_or_else(|| field(key.clone(), format!("index {idx} out of range ({len})")))?;
                    if last {
                        *slot = value.clone();
                        break;
                    }
                    slot
                }
                _ => return Err(field(key.clone(), format!("'{seg}' does not name a table or array"))),
            };
        }
    }
    Ok(())
}

/// Reads an override as a TOML value, falling back to a bare string.
fn parse_scalar(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with_env(text, std::iter::empty())
    }

    pub fn from_toml_with_env<I>(text: &str, vars: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        if vars.is_empty() {
            // Direct deserialization keeps line and column in diagnostics.
            return toml::from_str(text).map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()));
        }
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let mut doc = toml::Value::Table(table);
        apply_overrides(&mut doc, vars)?;
        doc.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }

    /// Reads a config file and applies process environment overrides.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::from_toml_with_env(&text, std::env::vars())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn robot_model(&self) -> Result<RobotModel, ConfigError> {
        let joints = self
            .robot
            .joints
            .iter()
            .enumerate()
            .map(|(i, j)| {
                let axis = Vector3::from(j.axis);
                if !(axis.norm() > 0.0) {
                    return Err(field(format!("robot.joints[{i}].axis"), "must be nonzero"));
                }
                Ok(Joint { axis: nalgebra::Unit::new_normalize(axis), offset: Vector3::from(j.offset) })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let limits = self.robot.joints.iter().map(|j| j.limits).collect();
        RobotModel::new(joints, limits, Vector3::from(self.robot.tool_offset), self.robot.task).map_err(|e| field("robot", e))
    }

    pub fn camera_model(&self) -> Result<CameraModel, ConfigError> {
        let c = &self.camera;
        let cam = CameraModel {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            position: Vector3::from(c.position),
            rotation: Rotation3::from_scaled_axis(Vector3::from(c.rotation)),
        };
        cam.validate().map_err(|e| field("camera", e))?;
        Ok(cam)
    }

    pub fn region_set(&self, model: &RobotModel) -> Result<RegionSet, ConfigError> {
        let r = &self.regions;
        let mut joint_regions = Vec::new();
        if let Some(s) = &r.joint_limits {
            joint_regions = RegionSet::limit_regions(model.limits(), s.inner_radius, s.reference_radius, s.k_q, s.k_r);
            for region in &joint_regions {
                region.validate(model.n_dof()).map_err(|e| field("regions.joint_limits", e))?;
            }
        }
        for (i, j) in r.joint.iter().enumerate() {
            let region = JointRegion {
                joints: j.joints.clone(),
                weights: j.weights.clone(),
                center: j.center.clone(),
                radius: j.radius,
                reference_radius: j.reference_radius,
                k_q: j.k_q,
                k_r: j.k_r,
            };
            region.validate(model.n_dof()).map_err(|e| field(format!("regions.joint[{i}]"), e))?;
            joint_regions.push(region);
        }
        let cartesian_box = CartesianBoxRegion {
            center: Vector3::from(r.cartesian_box.center),
            half_sizes: Vector3::from(r.cartesian_box.half_sizes),
            gains: Vector3::from(r.cartesian_box.gains),
        };
        cartesian_box.validate().map_err(|e| field("regions.cartesian_box", e))?;
        let g = r.orientation.goal;
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(field("regions.orientation.goal", "must be a nonzero quaternion"));
        }
        let cone = OrientationConeRegion {
            goal: UnitQuaternion::from_quaternion(Quaternion::new(g[0], g[1], g[2], g[3])),
            alpha: r.orientation.alpha,
            k_o: r.orientation.k_o,
        };
        cone.validate().map_err(|e| field("regions.orientation", e))?;
        let vision = VisionEllipseRegion {
            x_d: Vector2::new(self.camera.cx, self.camera.cy),
            half_sizes: Vector2::from(r.vision.half_sizes),
            k_v: r.vision.k_v,
        };
        vision.validate().map_err(|e| field("regions.vision", e))?;
        Ok(RegionSet { joint_regions, cartesian_box, cone, vision })
    }

    pub fn adaptive_state(&self, task_dim: usize) -> Result<(AdaptiveState, DMatrix<f64>), ConfigError> {
        let a = &self.adaptive;
        let n_k = a.centers.len();
        let l = match &a.gain_matrix {
            Some(rows) => {
                if rows.len() != n_k || rows.iter().any(|r| r.len() != n_k) {
                    return Err(field("adaptive.gain_matrix", format!("must be {n_k} x {n_k}")));
                }
                DMatrix::from_fn(n_k, n_k, |i, j| rows[i][j])
            }
            None => DMatrix::identity(n_k, n_k) * a.gain,
        };
        if !(a.gain >= 0.0) {
            return Err(field("adaptive.gain", "must be nonnegative"));
        }
        let centers = a.centers.iter().map(|c| DVector::from_column_slice(c)).collect();
        let state = AdaptiveState::new(task_dim, centers, a.sigma.clone(), l, a.input_selector.clone())
            .map_err(|e| field("adaptive", e))?;
        if a.prior.len() != 2 || a.prior.iter().any(|r| r.len() != task_dim) {
            return Err(field("adaptive.prior", format!("must be 2 rows of {task_dim} entries")));
        }
        let prior = DMatrix::from_fn(2, task_dim, |i, j| a.prior[i][j]);
        Ok((state, prior))
    }

    /// Builds and validates the scenario. Relative paths resolve against `base_dir`.
    pub fn to_scenario(&self, base_dir: &Path) -> Result<Scenario, ConfigError> {
        let model = self.robot_model()?;
        let n = model.n_dof();
        if self.robot.q_init.len() != n {
            return Err(field("robot.q_init", format!("must have {n} entries")));
        }
        let camera = self.camera_model()?;
        let regions = self.region_set(&model)?;
        let controller = ControllerConfig {
            c_d: self.controller.c_d,
            mode: self.controller.mode,
            rank_tol: self.controller.rank_tol,
            angle_eps: self.controller.angle_eps,
        };
        controller.validate().map_err(|e| field("controller", e))?;
        let (adaptive, prior) = self.adaptive_state(model.task_dim())?;
        let transfer = match &self.transfer.model {
            Some(p) => {
                let path = base_dir.join(p);
                let text = std::fs::read_to_string(&path).map_err(|e| field("transfer.model", format!("{}: {e}", path.display())))?;
                let model: DmpModel = serde_json::from_str(&text).map_err(|e| field("transfer.model", e))?;
                Some(model)
            }
            None => None,
        };
        if let Some(tau) = self.transfer.tau {
            if !(tau > 0.0) {
                return Err(field("transfer.tau", "must be positive"));
            }
        }
        for (name, v) in [("dt", self.dt), ("phase_timeout", self.phase_timeout), ("grasp_tol", self.grasp_tol)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(field(name, "must be positive"));
            }
        }
        if self.dt > 0.01 {
            return Err(field("dt", "must not exceed 0.01 s"));
        }
        let objects = self
            .objects
            .iter()
            .map(|o| ObjectSpec { position: Vector3::from(o.position), shelf: o.shelf.clone() })
            .collect();
        let efforts = self
            .efforts
            .iter()
            .map(|e| ScriptedEffort {
                start: e.start,
                command: HumanEffortCommand { joint_index: e.joint_index, drag: Vector3::from(e.drag), duration: e.duration },
            })
            .collect();
        let scenario = Scenario {
            name: self.name.clone(),
            model,
            camera,
            regions,
            controller,
            adaptive,
            prior,
            q_init: self.robot.q_init.clone(),
            objects,
            transfer,
            transfer_tau: self.transfer.tau,
            efforts,
            dt: self.dt,
            seed: self.seed,
            target_jitter: self.target_jitter,
            phase_timeout: self.phase_timeout,
            max_time: self.max_time,
            grasp_tol: self.grasp_tol,
            log_stride: self.log_stride,
            oracle_jacobian: self.oracle_jacobian,
            auto_grasp: self.auto_grasp,
        };
        scenario.validate().map_err(|e| field("scenario", e))?;
        Ok(scenario)
    }
}

//! Joint-space dynamic movement primitives.
//!
//! Transformation system `tau^2 q_dd = alpha_q (beta_q (g - q) - tau q_d) + zeta`,
//! canonical phase `tau z_d = -alpha_z z`, and forcing term
//! `zeta = (sum psi_i w_i / sum psi_i) z (g - q0)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Below this start/goal separation a DOF is treated as having no amplitude.
const AMPLITUDE_EPS: f64 = 1e-9;
/// Hard cap on reproduction length, in multiples of tau.
const MAX_TAU_MULTIPLES: f64 = 50.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DmpError {
    #[error("demonstration needs at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("demonstration time stamps must be strictly increasing (sample {0})")]
    NonMonotonicTime(usize),
    #[error("inconsistent demonstration: {0}")]
    Inconsistent(String),
    #[error("invalid DMP parameter: {0}")]
    InvalidParam(String),
}

/// Sampled demonstration, stored per sample (`q[k][dof]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub t: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub qd: Vec<Vec<f64>>,
    pub qdd: Vec<Vec<f64>>,
}

impl Demonstration {
    /// Positions only; derivatives by central differences with one-sided ends.
    pub fn from_positions(t: Vec<f64>, q: Vec<Vec<f64>>) -> Result<Self, DmpError> {
        check_samples(&t, &q)?;
        let qd = differentiate(&t, &q);
        let qdd = differentiate(&t, &qd);
        Ok(Self { t, q, qd, qdd })
    }

    pub fn with_derivatives(t: Vec<f64>, q: Vec<Vec<f64>>, qd: Vec<Vec<f64>>, qdd: Vec<Vec<f64>>) -> Result<Self, DmpError> {
        check_samples(&t, &q)?;
        let n = q[0].len();
        if qd.len() != q.len() || qdd.len() != q.len() || qd.iter().chain(&qdd).any(|row| row.len() != n) {
            return Err(DmpError::Inconsistent("derivative arrays must match positions".into()));
        }
        Ok(Self { t, q, qd, qdd })
    }

    pub fn n_dof(&self) -> usize {
        self.q[0].len()
    }

    pub fn duration(&self) -> f64 {
        self.t[self.t.len() - 1] - self.t[0]
    }
}

fn check_samples(t: &[f64], q: &[Vec<f64>]) -> Result<(), DmpError> {
    if t.len() < 2 {
        return Err(DmpError::TooShort(t.len()));
    }
    if q.len() != t.len() {
        return Err(DmpError::Inconsistent(format!("{} time stamps but {} samples", t.len(), q.len())));
    }
    let n = q[0].len();
    if n == 0 || q.iter().any(|row| row.len() != n) {
        return Err(DmpError::Inconsistent("every sample needs the same nonzero number of DOFs".into()));
    }
    if let Some(k) = t.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(DmpError::NonMonotonicTime(k + 1));
    }
    if t.iter().chain(q.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(DmpError::Inconsistent("non-finite sample".into()));
    }
    Ok(())
}

/// Central differences on a possibly non-uniform grid; one-sided at the ends.
fn differentiate(t: &[f64], y: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let len = t.len();
    let n = y[0].len();
    (0..len)
        .map(|k| {
            let (a, b) = match k {
                0 => (0, 1),
                k if k == len - 1 => (len - 2, len - 1),
                k => (k - 1, k + 1),
            };
            (0..n).map(|j| (y[b][j] - y[a][j]) / (t[b] - t[a])).collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnParams {
    pub alpha_q: f64,
    pub beta_q: f64,
    pub alpha_z: f64,
    pub n_basis: usize,
    /// Time constant; the demonstration duration when absent.
    #[serde(default)]
    pub tau: Option<f64>,
}

impl Default for LearnParams {
    fn default() -> Self {
        Self { alpha_q: 25.0, beta_q: 25.0 / 4.0, alpha_z: 3.0, n_basis: 20, tau: None }
    }
}

impl LearnParams {
    pub fn validate(&self) -> Result<(), DmpError> {
        for (name, v) in [("alpha_q", self.alpha_q), ("beta_q", self.beta_q), ("alpha_z", self.alpha_z)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DmpError::InvalidParam(format!("{name} must be positive")));
            }
        }
        if self.n_basis < 2 {
            return Err(DmpError::InvalidParam("n_basis must be at least 2".into()));
        }
        if let Some(tau) = self.tau {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(DmpError::InvalidParam("tau must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DmpModel {
    pub alpha_q: f64,
    pub beta_q: f64,
    pub alpha_z: f64,
    pub tau: f64,
    pub q0: Vec<f64>,
    pub goal: Vec<f64>,
    /// Basis centers in phase space.
    pub centers: Vec<f64>,
    /// Basis variances `sigma_i^2` in phase space.
    pub widths: Vec<f64>,
    /// `weights[dof][i]`.
    pub weights: Vec<Vec<f64>>,
    /// DOFs whose start and goal coincided; their forcing term is zero.
    pub zero_forcing: Vec<bool>,
}

/// Phase `z(t) = exp(-alpha_z t / tau)`.
pub fn canonical_phase(alpha_z: f64, tau: f64, t: f64) -> f64 {
    (-alpha_z * t / tau).exp()
}

/// Centers equidistant in time over one `tau`, so log-spaced in phase; each
/// variance is the squared gap to the next center.
pub fn basis(alpha_z: f64, n_basis: usize) -> (Vec<f64>, Vec<f64>) {
    let centers: Vec<f64> = (0..n_basis)
        .map(|i| (-alpha_z * i as f64 / (n_basis - 1) as f64).exp())
        .collect();
    let widths = (0..n_basis)
        .map(|i| {
            let gap = if i + 1 < n_basis { centers[i] - centers[i + 1] } else { centers[i - 1] - centers[i] };
            gap * gap
        })
        .collect();
    (centers, widths)
}

fn activations<'a>(centers: &'a [f64], widths: &'a [f64], z: f64) -> impl Iterator<Item = f64> + 'a {
    centers.iter().zip(widths).map(move |(c, w)| (-(z - c).powi(2) / (2.0 * w)).exp())
}

impl DmpModel {
    pub fn n_dof(&self) -> usize {
        self.goal.len()
    }

    pub fn validate(&self) -> Result<(), DmpError> {
        for (name, v) in [("alpha_q", self.alpha_q), ("beta_q", self.beta_q), ("alpha_z", self.alpha_z), ("tau", self.tau)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DmpError::InvalidParam(format!("{name} must be positive")));
            }
        }
        let n = self.goal.len();
        let nb = self.centers.len();
        if nb < 2 || self.widths.len() != nb || self.widths.iter().any(|w| !(*w > 0.0)) {
            return Err(DmpError::InvalidParam("need at least 2 bases with positive widths".into()));
        }
        if self.q0.len() != n || self.weights.len() != n || self.zero_forcing.len() != n {
            return Err(DmpError::InvalidParam("per-DOF arrays disagree in length".into()));
        }
        if self.weights.iter().any(|w| w.len() != nb) {
            return Err(DmpError::InvalidParam("weights must have one entry per basis".into()));
        }
        Ok(())
    }

    pub fn phase(&self, t: f64) -> f64 {
        canonical_phase(self.alpha_z, self.tau, t)
    }

    /// Normalized basis mixture `sum psi_i w_i / sum psi_i` for one DOF.
    fn mixture(&self, dof: usize, z: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (psi, w) in activations(&self.centers, &self.widths, z).zip(&self.weights[dof]) {
            num += psi * w;
            den += psi;
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }
}

/// Locally weighted regression of the forcing term, per DOF and basis.
pub fn learn(demo: &Demonstration, params: &LearnParams) -> Result<DmpModel, DmpError> {
    params.validate()?;
    let tau = params.tau.unwrap_or_else(|| demo.duration());
    if !(tau > 0.0) {
        return Err(DmpError::InvalidParam("tau must be positive".into()));
    }
    let n = demo.n_dof();
    let last = demo.q.len() - 1;
    let q0 = demo.q[0].clone();
    let goal = demo.q[last].clone();
    let (centers, widths) = basis(params.alpha_z, params.n_basis);
    let t0 = demo.t[0];
    let z: Vec<f64> = demo.t.iter().map(|t| canonical_phase(params.alpha_z, tau, t - t0)).collect();
    let psi: Vec<Vec<f64>> = z.iter().map(|&zk| activations(&centers, &widths, zk).collect()).collect();

    let mut weights = vec![vec![0.0; params.n_basis]; n];
    let mut zero_forcing = vec![false; n];
    for dof in 0..n {
        let amplitude = goal[dof] - q0[dof];
        if amplitude.abs() <= AMPLITUDE_EPS {
            log::debug!("DOF {dof}: start equals goal, forcing term disabled");
            zero_forcing[dof] = true;
            continue;
        }
        let zeta: Vec<f64> = (0..demo.q.len())
            .map(|k| {
                tau * tau * demo.qdd[k][dof]
                    - params.alpha_q * (params.beta_q * (goal[dof] - demo.q[k][dof]) - tau * demo.qd[k][dof])
            })
            .collect();
        for (i, w) in weights[dof].iter_mut().enumerate() {
            let mut num = 0.0;
            let mut den = 0.0;
            for k in 0..z.len() {
                let s = z[k] * amplitude;
                num += psi[k][i] * s * zeta[k];
                den += psi[k][i] * s * s;
            }
            *w = if den > 0.0 { num / den } else { 0.0 };
        }
    }
    Ok(DmpModel {
        alpha_q: params.alpha_q,
        beta_q: params.beta_q,
        alpha_z: params.alpha_z,
        tau,
        q0,
        goal,
        centers,
        widths,
        weights,
        zero_forcing,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub goal: Option<Vec<f64>>,
    pub tau: Option<f64>,
    pub start: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReproduceParams {
    pub dt: f64,
    /// Integration stops once the phase falls below this.
    pub z_stop: f64,
}

impl Default for ReproduceParams {
    fn default() -> Self {
        Self { dt: 1e-3, z_stop: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub qd: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        self.t[self.t.len() - 1]
    }

    pub fn endpoint(&self) -> &[f64] {
        &self.q[self.q.len() - 1]
    }
}

/// Explicit Euler rollout of the transformation and canonical systems.
pub fn reproduce(model: &DmpModel, overrides: &Overrides, params: &ReproduceParams) -> Result<Trajectory, DmpError> {
    model.validate()?;
    let n = model.n_dof();
    let goal = overrides.goal.clone().unwrap_or_else(|| model.goal.clone());
    let q0 = overrides.start.clone().unwrap_or_else(|| model.q0.clone());
    let tau = overrides.tau.unwrap_or(model.tau);
    if goal.len() != n || q0.len() != n {
        return Err(DmpError::InvalidParam(format!("overrides must have {n} DOFs")));
    }
    if goal.iter().chain(&q0).chain(std::iter::once(&tau)).any(|v| !v.is_finite()) || !(tau > 0.0) {
        return Err(DmpError::InvalidParam("overrides must be finite with positive tau".into()));
    }
    if !(params.dt > 0.0 && params.z_stop > 0.0 && params.z_stop < 1.0) {
        return Err(DmpError::InvalidParam("dt must be positive and z_stop in (0, 1)".into()));
    }

    let max_steps = (MAX_TAU_MULTIPLES * tau / params.dt).ceil() as usize;
    let mut q = q0.clone();
    // y = tau * q_dot
    let mut y = vec![0.0; n];
    let mut z = 1.0;
    let mut t = 0.0;
    let mut out = Trajectory { t: vec![0.0], q: vec![q.clone()], qd: vec![vec![0.0; n]] };
    let h = params.dt / tau;
    let mut step = 0usize;
    while z >= params.z_stop && step < max_steps {
        let mut qd = vec![0.0; n];
        for j in 0..n {
            let forcing = if model.zero_forcing[j] { 0.0 } else { model.mixture(j, z) * z * (goal[j] - q0[j]) };
            let y_dot = model.alpha_q * (model.beta_q * (goal[j] - q[j]) - y[j]) + forcing;
            let q_next = q[j] + h * y[j];
            y[j] += h * y_dot;
            q[j] = q_next;
            qd[j] = y[j] / tau;
        }
        z -= h * model.alpha_z * z;
        step += 1;
        t = step as f64 * params.dt;
        out.t.push(t);
        out.q.push(q.clone());
        out.qd.push(qd);
    }
    log::debug!("DMP reproduction finished after {step} steps at t = {t:.3} s");
    Ok(out)
}

/// `r_5 = clamp(beta_0 r_2 / Y_0, -beta_0, beta_0)`: couples a lateral
/// translation to a coarse wrist orientation.
pub fn coarse_orientation_coupling(r2: f64, y0: f64, beta0: f64) -> f64 {
    assert!(y0 > 0.0, "Y0 must be positive");
    let b = beta0.abs();
    (beta0 * r2 / y0).clamp(-b, b)
}

/// Minimum-jerk joint trajectory from `q0` to `goal`, sampled every `dt`.
pub fn minimum_jerk_demo(q0: &[f64], goal: &[f64], duration: f64, dt: f64) -> Demonstration {
    let steps = (duration / dt).round() as usize;
    let mut t = Vec::with_capacity(steps + 1);
    let (mut q, mut qd, mut qdd) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..=steps {
        let tk = k as f64 * duration / steps as f64;
        let s = tk / duration;
        let pos = 10.0 * s.powi(3) - 15.0 * s.powi(4) + 6.0 * s.powi(5);
        let vel = (30.0 * s.powi(2) - 60.0 * s.powi(3) + 30.0 * s.powi(4)) / duration;
        let acc = (60.0 * s - 180.0 * s.powi(2) + 120.0 * s.powi(3)) / (duration * duration);
        t.push(tk);
        q.push(q0.iter().zip(goal).map(|(a, b)| a + (b - a) * pos).collect());
        qd.push(q0.iter().zip(goal).map(|(a, b)| (b - a) * vel).collect());
        qdd.push(q0.iter().zip(goal).map(|(a, b)| (b - a) * acc).collect());
    }
    Demonstration { t, q, qd, qdd }
}

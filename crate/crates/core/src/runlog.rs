//! Line-delimited JSON run log: one header line, one line per recorded step,
//! one outcome line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT: &str = "cobot-runlog";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RunLogError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("unsupported log: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Approach,
    VisualServo,
    Grasped,
    Transfer,
    Place,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub scenario: String,
    pub dt: f64,
    pub seed: u64,
    pub n_dof: usize,
    pub task_dim: usize,
    pub log_stride: usize,
}

/// Controller diagnostics; absent while a DMP reference drives the arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub residual: Vec<f64>,
    pub residual_norm: f64,
    pub xi_q_norm: f64,
    pub xi_r_norm: f64,
    pub xi_x_norm: f64,
    pub v_monitor: f64,
    pub vision_active: bool,
    /// `"analytic"` or `"geometric"`.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub phase: Phase,
    pub q: Vec<f64>,
    pub u: Vec<f64>,
    pub r_t: [f64; 3],
    /// `(v, u_x, u_y, u_z)`.
    pub p: [f64; 4],
    pub r_o: [f64; 3],
    pub x: [f64; 2],
    pub visible: bool,
    pub target: [f64; 2],
    pub target_visible: bool,
    pub effort_active: bool,
    pub diag: Option<Diagnostics>,
}

impl StepRecord {
    pub fn pixel_error(&self) -> f64 {
        ((self.x[0] - self.target[0]).powi(2) + (self.x[1] - self.target[1]).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Done { t: f64 },
    /// Stopped at the configured run length before the pipeline finished.
    Stopped { t: f64, phase: Phase },
    Timeout { t: f64, phase: Phase },
    Singular { t: f64, phase: Phase, sigma_min: f64 },
    Failed { t: f64, phase: Phase, message: String },
}

impl Outcome {
    /// CLI exit status: 0 done (or stopped by design), 2 timeout, 3 singularity.
    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::Done { .. } | Outcome::Stopped { .. } => 0,
            Outcome::Timeout { .. } => 2,
            Outcome::Singular { .. } => 3,
            Outcome::Failed { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(Header),
    Step(StepRecord),
    Outcome(Outcome),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: Header,
    pub records: Vec<StepRecord>,
    pub outcome: Option<Outcome>,
}

impl RunLog {
    pub fn new(header: Header) -> Self {
        Self { header, records: Vec::new(), outcome: None }
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), RunLogError> {
        write_line(&mut w, &Line::Header(self.header.clone()))?;
        for r in &self.records {
            write_line(&mut w, &Line::Step(r.clone()))?;
        }
        if let Some(o) = &self.outcome {
            write_line(&mut w, &Line::Outcome(o.clone()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, RunLogError> {
        let mut header = None;
        let mut records = Vec::new();
        let mut outcome = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line).map_err(|source| RunLogError::Parse { line: i + 1, source })?;
            match parsed {
                Line::Header(h) => {
                    if h.format != FORMAT || h.version != VERSION {
                        return Err(RunLogError::Unsupported(format!("{} v{}", h.format, h.version)));
                    }
                    header = Some(h);
                }
                Line::Step(s) => records.push(s),
                Line::Outcome(o) => outcome = Some(o),
            }
        }
        let header = header.ok_or_else(|| RunLogError::Unsupported("missing header".into()))?;
        Ok(Self { header, records, outcome })
    }
}

/// Writes one record per line.
pub fn write_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<(), RunLogError> {
    serde_json::to_writer(&mut *w, value).map_err(|e| RunLogError::Io(e.into()))?;
    w.write_all(b"\n")?;
    Ok(())
}

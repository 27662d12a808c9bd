//! Columnar CSV files: demonstrations, reproduced trajectories and plot
//! tables derived from a run log.
//!
//! Demonstrations use a header `t,q0,q1,...`, optionally followed by
//! `qd0,...` and `qdd0,...`. Trajectories are written as `t,q0..,qd0..`.

use std::io::{Read, Write};

use thiserror::Error;

use crate::dmp::{DmpError, Demonstration, Trajectory};
use crate::runlog::{Phase, RunLog};

#[derive(Debug, Error)]
pub enum TableError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Dmp(#[from] DmpError),
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

pub fn read_demo_csv<R: Read>(reader: R) -> Result<Demonstration, TableError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let t_col = column(&headers, "t").ok_or_else(|| TableError::Format("missing column 't'".into()))?;
    let q_cols: Vec<usize> = (0..).map_while(|i| column(&headers, &format!("q{i}"))).collect();
    if q_cols.is_empty() {
        return Err(TableError::Format("missing column 'q0'".into()));
    }
    let n = q_cols.len();
    let qd_cols: Vec<usize> = (0..n).filter_map(|i| column(&headers, &format!("qd{i}"))).collect();
    let qdd_cols: Vec<usize> = (0..n).filter_map(|i| column(&headers, &format!("qdd{i}"))).collect();
    let derivatives = qd_cols.len() == n && qdd_cols.len() == n;

    let (mut t, mut q, mut qd, mut qdd) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |c: usize| -> Result<f64, TableError> {
            rec.get(c)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| TableError::Format(format!("row {}: column {} is not a number", row + 2, c + 1)))
        };
        let pick = |cols: &[usize]| cols.iter().map(|&c| get(c)).collect::<Result<Vec<_>, _>>();
        t.push(get(t_col)?);
        q.push(pick(&q_cols)?);
        if derivatives {
            qd.push(pick(&qd_cols)?);
            qdd.push(pick(&qdd_cols)?);
        }
    }
    Ok(if derivatives { Demonstration::with_derivatives(t, q, qd, qdd)? } else { Demonstration::from_positions(t, q)? })
}

pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, writer: W) -> Result<(), TableError> {
    let n = traj.q.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("q{i}")));
    header.extend((0..n).map(|i| format!("qd{i}")));
    w.write_record(&header)?;
    for k in 0..traj.t.len() {
        let mut row = vec![traj.t[k].to_string()];
        row.extend(traj.q[k].iter().map(f64::to_string));
        row.extend(traj.qd[k].iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Approach => "approach",
        Phase::VisualServo => "visual_servo",
        Phase::Grasped => "grasped",
        Phase::Transfer => "transfer",
        Phase::Place => "place",
        Phase::Done => "done",
    }
}

/// One row per logged step with the quantities usually plotted against time.
pub fn write_plot_csv<W: Write>(log: &RunLog, writer: W) -> Result<(), TableError> {
    let n = log.header.n_dof;
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = [
        "t", "phase", "pixel_error", "u", "v", "visible", "x", "y", "z", "residual_norm", "xi_q_norm", "xi_r_norm",
        "xi_x_norm", "v_monitor", "effort_active",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..n).map(|i| format!("q{i}")));
    w.write_record(&header)?;
    for r in &log.records {
        let opt = |f: fn(&crate::runlog::Diagnostics) -> f64| r.diag.as_ref().map_or(String::new(), |d| f(d).to_string());
        let mut row = vec![
            r.t.to_string(),
            phase_name(r.phase).to_string(),
            r.pixel_error().to_string(),
            r.x[0].to_string(),
            r.x[1].to_string(),
            u8::from(r.visible).to_string(),
            r.r_t[0].to_string(),
            r.r_t[1].to_string(),
            r.r_t[2].to_string(),
            opt(|d| d.residual_norm),
            opt(|d| d.xi_q_norm),
            opt(|d| d.xi_r_norm),
            opt(|d| d.xi_x_norm),
            opt(|d| d.v_monitor),
            u8::from(r.effort_active).to_string(),
        ];
        row.extend(r.q.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

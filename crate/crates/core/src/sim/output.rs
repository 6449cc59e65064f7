//! CSV and JSON writers for closed-loop results.
//!
//! The per-step CSV only holds reproducible quantities; controller wall
//! times go to a separate timing CSV.

use std::io::Write;

use serde::Serialize;

use super::{Controller, SimResult, Status};
use crate::error::{Error, Result};

const STATE_NAMES: [&str; 16] = [
    "x", "y", "z", "roll", "pitch", "yaw", "alpha", "beta", "vx", "vy", "vz", "roll_rate", "pitch_rate", "yaw_rate",
    "alpha_rate", "beta_rate",
];

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Column order of [`write_steps_csv`].
pub fn step_columns() -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    cols.extend(STATE_NAMES.iter().map(|s| s.to_string()));
    cols.extend(["thrust", "tau_x", "tau_y", "tau_z", "phase", "g_nonlinear", "g_box", "backoff", "mass_estimate", "mass_variance", "stage_cost", "solver_ok", "qp_iterations"].map(String::from));
    cols
}

pub fn write_steps_csv<W: Write>(result: &SimResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(step_columns()).map_err(csv_error)?;
    for s in &result.steps {
        let mut row: Vec<String> = vec![format!("{}", s.t)];
        row.extend(s.state.iter().map(|v| format!("{v}")));
        row.extend(s.input.iter().map(|v| format!("{v}")));
        row.push(s.phase.index().to_string());
        row.push(s.g_nonlinear.map_or(String::new(), |g| format!("{g}")));
        row.push(format!("{}", s.g_box));
        row.push(format!("{}", s.backoff));
        row.push(format!("{}", s.mass_estimate));
        row.push(format!("{}", s.mass_variance));
        row.push(format!("{}", s.stage_cost));
        row.push(u8::from(s.solver_ok).to_string());
        row.push(s.qp_iterations.to_string());
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timing_csv<W: Write>(result: &SimResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "phase", "solve_time"]).map_err(csv_error)?;
    for s in &result.steps {
        w.write_record([format!("{}", s.t), s.phase.index().to_string(), format!("{}", s.solve_time)])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub controller: Controller,
    pub status: Status,
    pub t_grasp: Option<f64>,
    pub t_place: Option<f64>,
    pub cost: f64,
    pub max_violation: f64,
    pub solver_failures: usize,
    pub steps: usize,
    pub true_mass: f64,
    pub final_mass_estimate: f64,
}

impl From<&SimResult> for RunSummary {
    fn from(r: &SimResult) -> Self {
        Self {
            controller: r.controller,
            status: r.status,
            t_grasp: r.t_grasp,
            t_place: r.t_place,
            cost: r.cost,
            max_violation: r.max_violation,
            solver_failures: r.solver_failures,
            steps: r.steps.len(),
            true_mass: r.true_mass,
            final_mass_estimate: r.final_mass_estimate(),
        }
    }
}

/// Summary statistics of the controller wall times (s).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingStats {
    pub count: usize,
    pub mean: f64,
    pub max: f64,
    pub p95: f64,
}

impl TimingStats {
    pub fn from_samples(mut v: Vec<f64>) -> Self {
        if v.is_empty() {
            return Self { count: 0, mean: 0.0, max: 0.0, p95: 0.0 };
        }
        v.sort_by(f64::total_cmp);
        let count = v.len();
        let idx = ((0.95 * count as f64).ceil() as usize).clamp(1, count) - 1;
        Self {
            count,
            mean: v.iter().sum::<f64>() / count as f64,
            max: v[count - 1],
            p95: v[idx],
        }
    }
}

//! Trace rows, the CSV writer and the JSON summary.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;

pub const CSV_COLUMNS: [&str; 9] = [
    "iter",
    "consensus_error",
    "obj_gap",
    "lyapunov",
    "dual_sum_inf",
    "grad_residual",
    "floats_up",
    "floats_down",
    "wall_ms",
];

/// One row per round; `iter = 0` is the initial state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub consensus_error: f64,
    pub obj_gap: f64,
    pub lyapunov: f64,
    pub dual_sum_inf: f64,
    pub grad_residual: f64,
    pub floats_up: u64,
    pub floats_down: u64,
    pub wall_ms: f64,
}

impl IterationRecord {
    /// Values in [`CSV_COLUMNS`] order; floats use the shortest round-trip form.
    pub fn fields(&self) -> [String; 9] {
        [
            self.iter.to_string(),
            self.consensus_error.to_string(),
            self.obj_gap.to_string(),
            self.lyapunov.to_string(),
            self.dual_sum_inf.to_string(),
            self.grad_residual.to_string(),
            self.floats_up.to_string(),
            self.floats_down.to_string(),
            format!("{:.3}", self.wall_ms),
        ]
    }
}

/// Append-only CSV sink; every row is flushed so a failed run leaves a
/// readable prefix.
pub struct TraceWriter<W: Write> {
    out: W,
    last_iter: Option<usize>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{}", CSV_COLUMNS.join(","))?;
        out.flush()?;
        Ok(TraceWriter { out, last_iter: None })
    }

    pub fn push(&mut self, record: &IterationRecord) -> Result<()> {
        debug_assert!(self.last_iter.is_none_or(|k| record.iter > k), "trace rows must be ordered");
        self.last_iter = Some(record.iter);
        writeln!(self.out, "{}", record.fields().join(","))?;
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimumInfo {
    pub source: String,
    pub grad_residual: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub version: String,
    pub status: String,
    pub error: Option<String>,
    pub rounds: usize,
    /// First round whose consensus error is at or below the target.
    pub rounds_to_target: Option<usize>,
    pub target: f64,
    pub final_record: Option<IterationRecord>,
    pub final_objective: Option<f64>,
    pub optimum: OptimumInfo,
    pub m_f: Option<f64>,
    pub omega_f: Option<f64>,
    pub implied_delta: Option<f64>,
    pub qlinear_rate: Option<f64>,
    pub bfgs_damped: usize,
    pub bfgs_skipped: usize,
    pub metric_note: String,
    pub problem_notes: Vec<String>,
    pub config: super::config::RunConfig,
}

//! Per-iteration and per-round logs with CSV output.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One solver iteration. Row `t` describes the iterate after `t` updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub data_term: f64,
    pub model_term: f64,
    pub reg_term: f64,
    pub grad_beta_norm: f64,
    pub rel_err: Option<f64>,
    pub nll: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn rel_errs(&self) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r.rel_err).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        if self.rows.is_empty() {
            out.write_record(TRACE_HEADER)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub const TRACE_HEADER: [&str; 9] =
    ["iter", "objective", "data_term", "model_term", "reg_term", "grad_beta_norm", "rel_err", "nll", "wall_ms"];

/// One communication round of a federated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub broadcasts: u64,
    pub uploads: u64,
    pub scalars_sent: u64,
    pub rel_err: Option<f64>,
    pub nll: Option<f64>,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

pub const ROUND_HEADER: [&str; 8] =
    ["round", "broadcasts", "uploads", "scalars_sent", "rel_err", "nll", "grad_norm", "wall_ms"];

pub fn write_rounds_csv<W: Write>(rows: &[RoundLog], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    if rows.is_empty() {
        out.write_record(ROUND_HEADER)?;
    }
    out.flush()?;
    Ok(())
}

/// First round `t0` with `errs[k] <= 1.05 * errs[last]` for every `k >= t0`.
///
/// Returns `None` for an empty series or a non-finite final error.
pub fn convergence_index(errs: &[f64]) -> Option<usize> {
    let last = *errs.last()?;
    if !last.is_finite() {
        return None;
    }
    let bound = 1.05 * last;
    let mut t0 = errs.len() - 1;
    while t0 > 0 && errs[t0 - 1] <= bound {
        t0 -= 1;
    }
    Some(t0)
}

/// Did-not-converge: final error above `0.5` or not finite.
pub fn did_not_converge(final_err: f64) -> bool {
    !(final_err <= 0.5)
}

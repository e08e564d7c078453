//! Log-spaced hyperparameter sweeps.

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::experiment::{execute, write_atomic, write_json, write_outcome, Summary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Nominal minimax penalty.
    Lambda,
    /// Gradient-EM step size.
    Alpha,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub count: usize,
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub spacing: Spacing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    MinFinalNll,
    FastestConvergence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub parameter: SweepParam,
    pub grid: Grid,
    pub selection: Selection,
}

impl Grid {
    /// A grid is either `count >= 2` points on `lo < hi`, or the single point
    /// `count = 1, lo = hi`.
    pub fn validate(&self) -> Result<()> {
        let ok = self.lo > 0.0
            && self.hi.is_finite()
            && ((self.count >= 2 && self.lo < self.hi) || (self.count == 1 && self.lo == self.hi));
        if ok {
            Ok(())
        } else {
            Err(HarnessError::Validation(format!(
                "grid needs 0 < lo < hi and count >= 2 (or count = 1 with lo = hi), got {self:?}"
            )))
        }
    }

    /// `10^linspace(log10 lo, log10 hi, count)`, with both ends exact.
    pub fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lo];
        }
        let (a, b) = (self.lo.log10(), self.hi.log10());
        let last = self.count - 1;
        (0..self.count)
            .map(|i| match i {
                0 => self.lo,
                i if i == last => self.hi,
                i => 10f64.powf(a + (b - a) * i as f64 / last as f64),
            })
            .collect()
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub summary: Option<Summary>,
    pub error: Option<String>,
}

impl SweepPoint {
    fn score(&self, selection: Selection) -> Option<f64> {
        let s = self.summary.as_ref()?;
        if s.did_not_converge == Some(true) {
            return None;
        }
        match selection {
            Selection::MinFinalNll => s.final_nll.filter(|v| v.is_finite()),
            Selection::FastestConvergence => s.convergence_round.map(|r| r as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub best_value: f64,
    pub best: ExperimentConfig,
    pub points: Vec<SweepPoint>,
}

pub fn apply(cfg: &mut ExperimentConfig, param: SweepParam, value: f64) -> Result<()> {
    match param {
        SweepParam::Lambda => cfg.set_lambda(value),
        SweepParam::Alpha => cfg.set_alpha(value),
    }
}

/// Index of the selected point: lowest score, ties toward the smaller value.
/// Points without a score (failed or not converged) are skipped.
pub fn select(points: &[SweepPoint], selection: Selection) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let Some(score) = p.score(selection) else { continue };
        let better = match best {
            None => true,
            Some((j, s)) => score < s || (score == s && p.value < points[j].value),
        };
        if better {
            best = Some((i, score));
        }
    }
    best.map(|(i, _)| i)
}

/// Evaluates every grid point on the same data and picks one per `spec.selection`.
pub fn sweep(cfg: &ExperimentConfig, spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    cfg.validate()?;
    let mut points = Vec::new();
    for value in spec.grid.points() {
        let mut c = cfg.clone();
        apply(&mut c, spec.parameter, value)?;
        let point = match execute(&c) {
            Ok(out) => SweepPoint { value, summary: Some(out.summary), error: None },
            Err(e @ HarnessError::Validation(_)) => return Err(e),
            Err(e) => SweepPoint { value, summary: None, error: Some(e.to_string()) },
        };
        points.push(point);
    }
    let i = select(&points, spec.selection)
        .ok_or_else(|| HarnessError::Validation("no sweep point produced a usable result".into()))?;
    let mut best = cfg.clone();
    apply(&mut best, spec.parameter, points[i].value)?;
    Ok(SweepResult { spec: spec.clone(), best_value: points[i].value, best, points })
}

/// Writes `sweep.csv`, `sweep.json` and the best point's outputs under `best/`.
pub fn write_sweep(result: &SweepResult) -> Result<()> {
    let dir = &result.best.output_dir;
    let mut w = csv::Writer::from_writer(Vec::new());
    let row_err = |e: csv::Error| HarnessError::Validation(e.to_string());
    w.write_record(["value", "final_rel_err", "final_nll", "convergence_round", "did_not_converge", "error"])
        .map_err(row_err)?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for p in &result.points {
        let s = p.summary.as_ref();
        w.write_record([
            p.value.to_string(),
            opt(s.and_then(|s| s.final_rel_err).map(|v| v.to_string())),
            opt(s.and_then(|s| s.final_nll).map(|v| v.to_string())),
            opt(s.and_then(|s| s.convergence_round).map(|v| v.to_string())),
            opt(s.and_then(|s| s.did_not_converge).map(|v| v.to_string())),
            p.error.clone().unwrap_or_default(),
        ])
        .map_err(row_err)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Validation(e.to_string()))?;
    write_atomic(&dir.join("sweep.csv"), &bytes)?;
    write_json(&dir.join("sweep.json"), result)?;
    let best = execute(&result.best)?;
    write_outcome(&dir.join("best"), &best)
}

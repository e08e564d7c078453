//! Table reproduction: runs a grid of preset cells, grades the cells that carry
//! an acceptance band and writes `report.md` and `report.json`.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use wmlr::em::{run_gem, EmState, GemConfig};
use wmlr::fedsim::{run_f_gem, FederatedConfig};
use wmlr::model::{generate_federated, ClusterMode};

use crate::config::{Algorithm, ExperimentConfig};
use crate::error::{HarnessError, Result, SolverContext};
use crate::experiment::{execute, write_atomic, write_json, write_outcome};
use crate::presets;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Table {
    /// Centralized comparison at T = 100.
    Table1,
    /// Federated comparison at the final round.
    Table2,
    /// Centralized quartiles over repeated runs.
    Table4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Full,
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grade {
    pub name: String,
    pub status: Status,
    pub detail: String,
}

impl Grade {
    pub fn check(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        let status = if passed { Status::Pass } else { Status::Fail };
        Grade { name: name.into(), status, detail: detail.into() }
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

/// One run of the table grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub label: String,
    pub algorithm: Algorithm,
    pub snr: f64,
    /// Samples (centralized) or agents (federated).
    pub size: usize,
    pub final_rel_err: Option<f64>,
    pub final_nll: Option<f64>,
    pub convergence_round: Option<usize>,
    pub did_not_converge: Option<bool>,
    pub wall_ms: f64,
    pub error: Option<String>,
    pub grades: Vec<Grade>,
    #[serde(skip)]
    pub rel_errs: Vec<f64>,
}

impl Cell {
    /// First iterate with error at most `threshold`.
    pub fn first_round_below(&self, threshold: f64) -> Option<usize> {
        self.rel_errs.iter().position(|&e| e <= threshold)
    }

    fn fmt_t0(&self) -> String {
        match (self.did_not_converge, self.convergence_round) {
            (Some(true), _) => "d.n.c.".into(),
            (_, Some(t)) => t.to_string(),
            _ => "-".into(),
        }
    }
}

/// Runs `cfg` and collects its metrics. Solver failures are recorded in the cell.
pub fn run_cell(label: &str, cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Cell> {
    let size = cfg.fed.as_ref().map_or(cfg.gen.n, |f| f.agents);
    let mut cell = Cell {
        label: label.into(),
        algorithm: cfg.algorithm,
        snr: cfg.gen.snr,
        size,
        final_rel_err: None,
        final_nll: None,
        convergence_round: None,
        did_not_converge: None,
        wall_ms: 0.0,
        error: None,
        grades: Vec::new(),
        rel_errs: Vec::new(),
    };
    match execute(cfg) {
        Ok(o) => {
            if let Some(dir) = out {
                write_outcome(&dir.join(label), &o)?;
            }
            cell.rel_errs = o.rel_errs().unwrap_or_default();
            let s = o.summary;
            cell.final_rel_err = s.final_rel_err;
            cell.final_nll = s.final_nll;
            cell.convergence_round = s.convergence_round;
            cell.did_not_converge = s.did_not_converge;
            cell.wall_ms = s.wall_ms;
        }
        Err(e @ HarnessError::Validation(_)) => return Err(e),
        Err(e) => cell.error = Some(e.to_string()),
    }
    Ok(cell)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    /// Linear interpolation between order statistics.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |p: f64| {
            let h = p * (v.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Some(Quartiles { q1: at(0.25), median: at(0.5), q3: at(0.75) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartileRow {
    pub label: String,
    pub algorithm: Algorithm,
    pub runs: usize,
    pub failed: usize,
    pub rel_err: Option<Quartiles>,
    pub nll: Option<Quartiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub table: Table,
    pub scale: Scale,
    pub cells: Vec<Cell>,
    pub relations: Vec<Grade>,
    pub quartiles: Vec<QuartileRow>,
    pub wall_ms: f64,
}

impl Report {
    fn grades(&self) -> impl Iterator<Item = &Grade> {
        self.cells.iter().flat_map(|c| &c.grades).chain(&self.relations)
    }

    pub fn graded(&self) -> usize {
        self.grades().filter(|g| g.status != Status::Info).count()
    }

    pub fn failed(&self) -> usize {
        self.grades().filter(|g| g.status == Status::Fail).count()
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {:?} ({:?} scale)\n", self.table, self.scale);
        if !self.cells.is_empty() {
            s.push_str("| cell | rel-err | NLL | t0 | wall ms | grades |\n|---|---|---|---|---|---|\n");
            for c in &self.cells {
                let grades: Vec<String> = c.grades.iter().map(fmt_grade).collect();
                let grades = match &c.error {
                    Some(e) => format!("error: {e}"),
                    None if grades.is_empty() => "info".into(),
                    None => grades.join("; "),
                };
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {:.0} | {} |",
                    c.label,
                    fmt_num(c.final_rel_err),
                    fmt_num(c.final_nll),
                    c.fmt_t0(),
                    c.wall_ms,
                    grades
                );
            }
        }
        if !self.quartiles.is_empty() {
            s.push_str("\n| setting | runs | failed | rel-err [q1, median, q3] | NLL [q1, median, q3] |\n|---|---|---|---|---|\n");
            for q in &self.quartiles {
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {} |",
                    q.label,
                    q.runs,
                    q.failed,
                    fmt_quartiles(&q.rel_err),
                    fmt_quartiles(&q.nll)
                );
            }
        }
        if !self.relations.is_empty() {
            s.push_str("\nRelations:\n");
            for g in &self.relations {
                let _ = writeln!(s, "- {}", fmt_grade(g));
            }
        }
        let _ = writeln!(s, "\n{} of {} graded checks failed; total {:.1} s.", self.failed(), self.graded(), self.wall_ms / 1e3);
        s
    }
}

fn fmt_num(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.3e}"))
}

fn fmt_quartiles(q: &Option<Quartiles>) -> String {
    q.as_ref().map_or("-".into(), |q| format!("[{:.3e}, {:.3e}, {:.3e}]", q.q1, q.median, q.q3))
}

fn fmt_grade(g: &Grade) -> String {
    let tag = match g.status {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::Info => "info",
    };
    format!("{tag} {}: {}", g.name, g.detail)
}

// Bands shared with the acceptance checks.

pub fn band(name: &str, value: Option<f64>, lo: f64, hi: f64) -> Grade {
    let ok = value.is_some_and(|v| v >= lo && v <= hi);
    Grade::check(name, ok, format!("{} in [{lo:e}, {hi:e}]", fmt_num(value)))
}

pub fn runtime_band(cell: &Cell, max_minutes: f64) -> Grade {
    let ok = cell.error.is_none() && cell.wall_ms <= max_minutes * 60e3;
    Grade::check("runtime", ok, format!("{:.1} s <= {max_minutes} min", cell.wall_ms / 1e3))
}

pub fn reaches_within(cell: &Cell, threshold: f64, rounds: usize) -> Grade {
    let t = cell.first_round_below(threshold);
    Grade::check(
        format!("rel-err <= {threshold:e} within {rounds} rounds"),
        t.is_some_and(|t| t <= rounds),
        format!("first reached at round {}", t.map_or("never".into(), |t| t.to_string())),
    )
}

pub fn flagged_dnc(cell: &Cell) -> Grade {
    Grade::check(
        "flagged d.n.c.",
        cell.did_not_converge == Some(true),
        format!("final rel-err {}, t0 {}", fmt_num(cell.final_rel_err), cell.fmt_t0()),
    )
}

pub fn converges(cell: &Cell) -> Grade {
    Grade::check(
        "converges",
        cell.did_not_converge == Some(false),
        format!("final rel-err {}, t0 {}", fmt_num(cell.final_rel_err), cell.fmt_t0()),
    )
}

pub fn nll_not_above(a: &Cell, b: &Cell) -> Grade {
    let ok = matches!((a.final_nll, b.final_nll), (Some(x), Some(y)) if x <= y);
    Grade::check(
        format!("{} NLL <= {} NLL", a.label, b.label),
        ok,
        format!("{} vs {}", fmt_num(a.final_nll), fmt_num(b.final_nll)),
    )
}

pub fn slower_by(slow: &Cell, fast: &Cell, factor: f64) -> Grade {
    let ok = matches!(
        (slow.convergence_round, fast.convergence_round, slow.did_not_converge, fast.did_not_converge),
        (Some(s), Some(f), Some(false), Some(false)) if s as f64 >= factor * f as f64
    );
    Grade::check(
        format!("{} t0 >= {factor} x {} t0", slow.label, fast.label),
        ok,
        format!("{} vs {}", slow.fmt_t0(), fast.fmt_t0()),
    )
}

/// A one-agent federated gradient-EM run against centralized gradient EM on
/// the same samples; the two must agree exactly.
pub fn single_agent_equivalence() -> Result<Grade> {
    let mut cfg = presets::federated(10.0, 1, Algorithm::FGem);
    let f = cfg.fed.as_mut().expect("federated preset");
    f.per_agent_n = 1000;
    let params = cfg.gen.symmetric_params().context(|| "ground truth".into())?;
    let fed = generate_federated(&cfg.gen, &params, 1, 1000, ClusterMode::PerAgent).context(|| "data".into())?;
    let gem = GemConfig::new(presets::fed_gem_alpha(10.0), 50);
    let init = EmState::random(cfg.gen.d, 1.0, cfg.seed).context(|| "init".into())?;
    let fcfg = FederatedConfig::new(50, cfg.seed);
    let fr = run_f_gem(&fed, init.clone(), &gem, &fcfg, None).context(|| "f-gem".into())?;
    let (c, _) = run_gem(&fed.shards[0], init, &gem, None).context(|| "gem".into())?;
    let same = fr.state.beta == c.beta && fr.state.sigma2 == c.sigma2;
    Ok(Grade::check("one-agent f-gem equals gem", same, "50 rounds, 1000 samples, bitwise comparison"))
}

struct Plan {
    cells: Vec<(String, ExperimentConfig)>,
}

fn table1_plan(scale: Scale) -> Plan {
    let settings: &[(f64, usize)] = match scale {
        Scale::Desk => &[(10.0, 10_000), (1.0, 100_000)],
        Scale::Full => &[(10.0, 100_000), (1.0, 100_000), (10.0, 10_000), (1.0, 10_000)],
    };
    let mut cells = Vec::new();
    for &(snr, n) in settings {
        for alg in [Algorithm::Em, Algorithm::Gem, Algorithm::Wmlr] {
            cells.push((format!("snr{snr}-n{n}-{alg}"), presets::centralized(snr, n, alg)));
        }
    }
    Plan { cells }
}

fn table2_plan(scale: Scale) -> Plan {
    let agents = match scale {
        Scale::Desk => 1000,
        Scale::Full => 10_000,
    };
    let mut cells = Vec::new();
    for snr in [20.0, 10.0, 5.0, 1.0] {
        for alg in [Algorithm::FEm, Algorithm::FGem, Algorithm::FWmlr] {
            cells.push((format!("snr{snr}-m{agents}-{alg}"), presets::federated(snr, agents, alg)));
        }
    }
    Plan { cells }
}

fn find<'a>(cells: &'a [Cell], label: &str) -> Option<&'a Cell> {
    cells.iter().find(|c| c.label == label)
}

fn grade_table1(cells: &mut [Cell]) -> Vec<Grade> {
    for c in cells.iter_mut() {
        let at = |snr: f64, n: usize| c.snr == snr && c.size == n;
        let mut g = Vec::new();
        if at(10.0, 10_000) {
            match c.algorithm {
                Algorithm::Wmlr => g.push(band("rel-err", c.final_rel_err, 0.0, 5e-2)),
                Algorithm::Em => g.push(band("rel-err", c.final_rel_err, 6e-2, 2.5e-1)),
                _ => {}
            }
            if c.algorithm != Algorithm::Gem {
                g.push(runtime_band(c, 5.0));
            }
        } else if at(1.0, 100_000) {
            g.push(band("rel-err", c.final_rel_err, 4e-2, 1.5e-1));
            g.push(band("NLL", c.final_nll, 1.64, 1.68));
            g.push(runtime_band(c, 10.0));
        }
        c.grades = g;
    }
    let mut rel = Vec::new();
    if let (Some(w), Some(e)) = (find(cells, "snr10-n10000-wmlr"), find(cells, "snr10-n10000-em")) {
        rel.push(nll_not_above(w, e));
    }
    rel
}

fn grade_table2(cells: &mut [Cell]) -> Vec<Grade> {
    for c in cells.iter_mut() {
        c.grades = match (c.algorithm, c.snr) {
            (Algorithm::FWmlr, s) if s == 10.0 => vec![reaches_within(c, 2.5e-2, 200), converges(c)],
            (Algorithm::FWmlr, _) => vec![converges(c)],
            (Algorithm::FEm, s) if s == 10.0 || s == 5.0 => vec![flagged_dnc(c)],
            _ => Vec::new(),
        };
    }
    let mut rel = Vec::new();
    let m = cells.first().map_or(0, |c| c.size);
    if let (Some(g), Some(w)) = (find(cells, &format!("snr20-m{m}-f-gem")), find(cells, &format!("snr20-m{m}-f-wmlr"))) {
        rel.push(slower_by(g, w, 5.0));
    }
    rel
}

fn table4(scale: Scale) -> Result<Vec<QuartileRow>> {
    let (runs, settings): (u64, &[(f64, usize)]) = match scale {
        Scale::Desk => (10, &[(10.0, 10_000), (1.0, 100_000)]),
        Scale::Full => (50, &[(10.0, 100_000), (1.0, 100_000), (10.0, 10_000), (1.0, 10_000)]),
    };
    let mut rows = Vec::new();
    for &(snr, n) in settings {
        for alg in [Algorithm::Em, Algorithm::Wmlr] {
            let (mut errs, mut nlls, mut failed) = (Vec::new(), Vec::new(), 0);
            for r in 0..runs {
                let mut cfg = presets::centralized(snr, n, alg);
                cfg.gen.seed = presets::CENTRAL_DATA_SEED + r;
                cfg.seed = presets::SOLVER_SEED + r;
                let cell = run_cell("rep", &cfg, None)?;
                match (cell.final_rel_err, cell.final_nll) {
                    (Some(e), Some(l)) if e.is_finite() && l.is_finite() => {
                        errs.push(e);
                        nlls.push(l);
                    }
                    _ => failed += 1,
                }
            }
            rows.push(QuartileRow {
                label: format!("snr{snr}-n{n}-{alg}"),
                algorithm: alg,
                runs: runs as usize,
                failed,
                rel_err: Quartiles::of(&errs),
                nll: Quartiles::of(&nlls),
            });
        }
    }
    Ok(rows)
}

/// Runs `table` at `scale` and writes per-cell outputs plus `report.md` and
/// `report.json` under `out`.
pub fn reproduce(table: Table, scale: Scale, out: &Path) -> Result<Report> {
    let start = Instant::now();
    let mut report = Report { table, scale, cells: Vec::new(), relations: Vec::new(), quartiles: Vec::new(), wall_ms: 0.0 };
    match table {
        Table::Table1 | Table::Table2 => {
            let plan = if table == Table::Table1 { table1_plan(scale) } else { table2_plan(scale) };
            for (label, cfg) in &plan.cells {
                report.cells.push(run_cell(label, cfg, Some(out))?);
            }
            report.relations = if table == Table::Table1 {
                grade_table1(&mut report.cells)
            } else {
                let mut r = grade_table2(&mut report.cells);
                r.push(single_agent_equivalence()?);
                r
            };
        }
        Table::Table4 => report.quartiles = table4(scale)?,
    }
    report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    write_atomic(&out.join("report.md"), report.to_markdown().as_bytes())?;
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_interpolate() {
        let q = Quartiles::of(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (2.0, 3.0, 4.0));
        let q = Quartiles::of(&[1.0, 2.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (1.25, 1.5, 1.75));
        assert!(Quartiles::of(&[]).is_none());
    }

    #[test]
    fn single_agent_cell_passes() {
        assert!(single_agent_equivalence().unwrap().passed());
    }
}

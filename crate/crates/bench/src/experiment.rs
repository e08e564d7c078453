//! Runs one configured experiment and writes its logs and summary.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use wmlr::em::{run_em, run_gem, EmState};
use wmlr::fedsim::{run_f_em, run_f_gem, run_f_wmlr, FederatedRun};
use wmlr::io::{load_dataset, write_dataset, write_layout};
use wmlr::model::{generate_dataset, generate_federated, FederatedDataset, MlrParams};
use wmlr::trace::{convergence_index, did_not_converge, write_rounds_csv, RoundLog, Trace};
use wmlr::wmlr::run_wmlr;
use wmlr::Dataset;

use crate::config::{Algorithm, ExperimentConfig, Scenario, SolverConfig};
use crate::error::{HarnessError, Result, SolverContext};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub algorithm: Algorithm,
    pub scenario: Scenario,
    pub seed: u64,
    pub data_seed: u64,
    pub samples: usize,
    /// Solver iterations or training rounds.
    pub iterations: usize,
    /// Federated rounds spent on the reference vector before training.
    pub setup_rounds: usize,
    pub initial_rel_err: Option<f64>,
    pub final_rel_err: Option<f64>,
    pub final_nll: Option<f64>,
    /// First iterate after which the error stays within 5% of its final value.
    pub convergence_round: Option<usize>,
    pub did_not_converge: Option<bool>,
    pub scalars_sent: Option<u64>,
    pub wall_ms: f64,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunLog {
    Trace(Trace),
    Rounds(Vec<RoundLog>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: Summary,
    pub log: RunLog,
    pub beta: Vec<f64>,
}

impl Outcome {
    /// Error after each iteration or round, starting from the initialization.
    pub fn rel_errs(&self) -> Option<Vec<f64>> {
        match &self.log {
            RunLog::Trace(t) => t.rows.iter().map(|r| r.rel_err).collect(),
            RunLog::Rounds(rounds) => {
                let setup = self.summary.setup_rounds;
                let mut out = vec![self.summary.initial_rel_err?];
                for r in &rounds[setup..] {
                    out.push(r.rel_err?);
                }
                Some(out)
            }
        }
    }
}

fn read_beta(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Validation(format!("{}: {e}", path.display())))
}

fn truth(cfg: &ExperimentConfig) -> Result<MlrParams> {
    cfg.gen.symmetric_params().context(|| "ground truth".into())
}

/// Dataset and ground truth of a centralized run.
pub fn centralized_data(cfg: &ExperimentConfig) -> Result<(Dataset, Option<Vec<f64>>)> {
    if let Some(p) = &cfg.data {
        let data = load_dataset(p).context(|| format!("loading {}", p.display()))?;
        let beta = cfg.eval_against.as_deref().map(read_beta).transpose()?;
        return Ok((data.without_labels(), beta));
    }
    let params = truth(cfg)?;
    let data = generate_dataset(&cfg.gen, &params).context(|| "generating data".into())?;
    Ok((data, params.symmetric_beta().map(<[f64]>::to_vec)))
}

pub fn federated_data(cfg: &ExperimentConfig) -> Result<(FederatedDataset, Vec<f64>)> {
    let f = cfg.fed.as_ref().ok_or_else(|| HarnessError::Validation("missing fed settings".into()))?;
    let params = truth(cfg)?;
    let fed = generate_federated(&cfg.gen, &params, f.agents, f.per_agent_n, f.clusters)
        .context(|| "generating federated data".into())?;
    Ok((fed, params.symmetric_beta().unwrap_or_default().to_vec()))
}

fn summary(cfg: &ExperimentConfig, samples: usize, wall_ms: f64) -> Summary {
    Summary {
        schema_version: SCHEMA_VERSION,
        algorithm: cfg.algorithm,
        scenario: cfg.scenario,
        seed: cfg.seed,
        data_seed: cfg.gen.seed,
        samples,
        iterations: cfg.budget(),
        setup_rounds: 0,
        initial_rel_err: None,
        final_rel_err: None,
        final_nll: None,
        convergence_round: None,
        did_not_converge: None,
        scalars_sent: None,
        wall_ms,
        config: cfg.clone(),
    }
}

fn from_trace(cfg: &ExperimentConfig, samples: usize, trace: Trace, beta: Vec<f64>, wall_ms: f64) -> Outcome {
    let mut s = summary(cfg, samples, wall_ms);
    let errs: Option<Vec<f64>> = trace.rows.iter().map(|r| r.rel_err).collect();
    s.initial_rel_err = trace.rows.first().and_then(|r| r.rel_err);
    s.final_rel_err = trace.last().and_then(|r| r.rel_err);
    s.final_nll = trace.last().and_then(|r| r.nll);
    s.convergence_round = errs.as_deref().and_then(convergence_index);
    s.did_not_converge = s.final_rel_err.map(did_not_converge);
    Outcome { summary: s, log: RunLog::Trace(trace), beta }
}

fn from_rounds<S>(cfg: &ExperimentConfig, samples: usize, run: FederatedRun<S>, beta: Vec<f64>, wall_ms: f64) -> Outcome {
    let mut s = summary(cfg, samples, wall_ms);
    s.setup_rounds = run.setup_rounds;
    s.initial_rel_err = run.initial_rel_err;
    s.final_rel_err = run.final_rel_err();
    s.final_nll = run.rounds.last().and_then(|r| r.nll);
    s.convergence_round = run.convergence_round();
    s.did_not_converge = s.final_rel_err.map(|_| run.did_not_converge());
    s.scalars_sent = Some(run.scalars_sent());
    Outcome { summary: s, log: RunLog::Rounds(run.rounds), beta }
}

/// Runs the experiment in memory.
pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let what = || format!("running {}", cfg.algorithm);
    match cfg.scenario {
        Scenario::Centralized => {
            let (data, beta) = centralized_data(cfg)?;
            let bs = beta.as_deref();
            let init = || EmState::random(data.d(), 1.0, cfg.seed).context(|| "initialization".into());
            let start = Instant::now();
            let (est, trace) = match &cfg.solver {
                SolverConfig::Wmlr(_) => {
                    let (st, tr) = run_wmlr(&data, &cfg.wmlr().unwrap(), None, bs).context(what)?;
                    (st.beta, tr)
                }
                SolverConfig::Em(e) => {
                    let (st, tr) = run_em(&data, init()?, e.iters, &e.sigma_x, bs).context(what)?;
                    (st.beta, tr)
                }
                SolverConfig::Gem(g) => {
                    let (st, tr) = run_gem(&data, init()?, g, bs).context(what)?;
                    (st.beta, tr)
                }
            };
            let ms = start.elapsed().as_secs_f64() * 1e3;
            Ok(from_trace(cfg, data.n(), trace, est, ms))
        }
        Scenario::Federated => {
            let (fed, beta) = federated_data(cfg)?;
            let fcfg = cfg.federated().unwrap();
            let n = fed.total_n();
            let d = fed.shards[0].d();
            let start = Instant::now();
            let elapsed = |s: Instant| s.elapsed().as_secs_f64() * 1e3;
            match (&cfg.solver, cfg.algorithm) {
                (SolverConfig::Wmlr(_), _) => {
                    let run = run_f_wmlr(&fed, &cfg.wmlr().unwrap(), &fcfg, None, Some(&beta)).context(what)?;
                    let est = run.state.beta.clone();
                    Ok(from_rounds(cfg, n, run, est, elapsed(start)))
                }
                (SolverConfig::Gem(g), alg) => {
                    let init = EmState::random(d, 1.0, cfg.seed).context(|| "initialization".into())?;
                    let run = if alg == Algorithm::FEm {
                        run_f_em(&fed, init, g, &fcfg, Some(&beta))
                    } else {
                        run_f_gem(&fed, init, g, &fcfg, Some(&beta))
                    }
                    .context(what)?;
                    let est = run.state.beta.clone();
                    Ok(from_rounds(cfg, n, run, est, elapsed(start)))
                }
                (SolverConfig::Em(_), _) => Err(HarnessError::Validation("closed-form EM is centralized only".into())),
            }
        }
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| HarnessError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| HarnessError::io(path, e))?;
    tmp.persist(path).map_err(|e| HarnessError::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Writes `summary.json`, `estimate.json` and `trace.csv` or `rounds.csv`.
pub fn write_outcome(dir: &Path, out: &Outcome) -> Result<()> {
    let mut buf = Vec::new();
    let (name, res) = match &out.log {
        RunLog::Trace(t) => ("trace.csv", t.write_csv(&mut buf)),
        RunLog::Rounds(r) => ("rounds.csv", write_rounds_csv(r, &mut buf)),
    };
    res.context(|| "formatting log".into())?;
    write_atomic(&dir.join(name), &buf)?;
    write_json(&dir.join("estimate.json"), &out.beta)?;
    write_json(&dir.join("summary.json"), &out.summary)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Summary> {
    let out = execute(cfg)?;
    write_outcome(&cfg.output_dir, &out)?;
    Ok(out.summary)
}

/// Writes the data a configuration would run on: `data.csv`, `beta_star.json`
/// and, for federated settings, `layout.csv`.
pub fn generate(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    let mut buf = Vec::new();
    match cfg.scenario {
        Scenario::Centralized => {
            let (data, beta) = centralized_data(cfg)?;
            write_dataset(&data, &mut buf).context(|| "formatting data".into())?;
            write_atomic(&dir.join("data.csv"), &buf)?;
            if let Some(b) = beta {
                write_json(&dir.join("beta_star.json"), &b)?;
            }
        }
        Scenario::Federated => {
            let (fed, beta) = federated_data(cfg)?;
            let pooled = fed.pooled().context(|| "pooling shards".into())?;
            write_dataset(&pooled, &mut buf).context(|| "formatting data".into())?;
            write_atomic(&dir.join("data.csv"), &buf)?;
            let mut layout = Vec::new();
            write_layout(&fed, &mut layout).context(|| "formatting layout".into())?;
            write_atomic(&dir.join("layout.csv"), &layout)?;
            write_json(&dir.join("beta_star.json"), &beta)?;
        }
    }
    Ok(())
}

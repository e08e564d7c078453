//! Synchronous federated simulation of the minimax, EM and gradient-EM solvers.
//!
//! Every round the server broadcasts the current parameters, each participating
//! agent updates them on its own shard, and the server averages what comes back.
//! Agents are processed and reduced in id order, so the result does not depend
//! on scheduling.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::em::{gem_grads, EmState, GemConfig};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::{all_finite, axpy, norm, weighted_average};
use crate::model::{nll_symmetric, relative_error, Dataset, FederatedDataset};
use crate::rng::{indexed_rng, Stream};
use crate::trace::{convergence_index, did_not_converge, RoundLog};
use crate::wmlr::{
    init_state_with_ref, model_sigma2, moment_diagonal, moment_matvec, objective_sym_with, power_iteration,
    ModelNoise, NoiseMode, WmlrConfig, WmlrState,
};

/// How the server weights agent parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    /// Proportional to shard size.
    SampleWeighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedConfig {
    /// Fraction of agents taking part in each round.
    #[serde(default = "one")]
    pub participation: f64,
    #[serde(default = "one_usize")]
    pub local_steps: usize,
    #[serde(default = "fifty")]
    pub fem_inner_max: usize,
    #[serde(default = "fem_tol")]
    pub fem_tol: f64,
    /// Training rounds, not counting reference-vector rounds.
    pub rounds: usize,
    pub seed: u64,
    #[serde(default)]
    pub weighting: Weighting,
    /// Power-iteration rounds for the reference vector.
    #[serde(default = "twenty")]
    pub ref_iters: usize,
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn fifty() -> usize {
    50
}
fn fem_tol() -> f64 {
    0.01
}
fn twenty() -> usize {
    20
}

impl FederatedConfig {
    pub fn new(rounds: usize, seed: u64) -> Self {
        Self {
            participation: 1.0,
            local_steps: 1,
            fem_inner_max: 50,
            fem_tol: 0.01,
            rounds,
            seed,
            weighting: Weighting::Uniform,
            ref_iters: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::InvalidParameter(format!("participation must lie in (0, 1], got {}", self.participation)));
        }
        if self.fem_inner_max == 0 || self.local_steps == 0 {
            return Err(Error::InvalidParameter("fem_inner_max and local_steps must be >= 1".into()));
        }
        Ok(())
    }

    /// Sorted ids of the agents taking part in `round`.
    pub fn participants(&self, agents: usize, round: usize) -> Vec<usize> {
        if self.participation >= 1.0 {
            return (0..agents).collect();
        }
        let count = ((self.participation * agents as f64).round() as usize).clamp(1, agents);
        let mut rng = indexed_rng(self.seed, Stream::Participation, round as u64);
        let mut ids = rand::seq::index::sample(&mut rng, agents, count).into_vec();
        ids.sort_unstable();
        ids
    }

    fn weights(&self, fed: &FederatedDataset, ids: &[usize]) -> Vec<f64> {
        match self.weighting {
            Weighting::Uniform => vec![1.0 / ids.len() as f64; ids.len()],
            Weighting::SampleWeighted => {
                let total: usize = ids.iter().map(|&m| fed.shards[m].n()).sum();
                ids.iter().map(|&m| fed.shards[m].n() as f64 / total as f64).collect()
            }
        }
    }
}

/// Result of a federated run.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedRun<S> {
    pub state: S,
    /// Reference-vector rounds first, then training rounds.
    pub rounds: Vec<RoundLog>,
    pub setup_rounds: usize,
    pub initial_rel_err: Option<f64>,
}

impl<S> FederatedRun<S> {
    pub fn training_rounds(&self) -> &[RoundLog] {
        &self.rounds[self.setup_rounds..]
    }

    /// Error of the initial model followed by the error after each training round.
    pub fn rel_errs(&self) -> Option<Vec<f64>> {
        let mut out = vec![self.initial_rel_err?];
        for r in self.training_rounds() {
            out.push(r.rel_err?);
        }
        Some(out)
    }

    /// Training round after which the error stays within 5% of its final value.
    pub fn convergence_round(&self) -> Option<usize> {
        convergence_index(&self.rel_errs()?)
    }

    pub fn final_rel_err(&self) -> Option<f64> {
        self.rel_errs()?.last().copied()
    }

    pub fn did_not_converge(&self) -> bool {
        self.final_rel_err().is_none_or(did_not_converge)
    }

    pub fn scalars_sent(&self) -> u64 {
        self.rounds.iter().map(|r| r.scalars_sent).sum()
    }
}

fn check_shards(fed: &FederatedDataset) -> Result<()> {
    if fed.shards.is_empty() {
        return Err(Error::InvalidParameter("no agents".into()));
    }
    if let Some(agent) = fed.shards.iter().position(|s| s.n() == 0) {
        return Err(Error::EmptyShard { agent });
    }
    Ok(())
}

fn pooled_nll(fed: &FederatedDataset, beta: &[f64], sigma2: f64) -> Result<f64> {
    let mut total = 0.0;
    for s in &fed.shards {
        total += s.n() as f64 * nll_symmetric(s, beta, sigma2)?;
    }
    Ok(total / fed.total_n() as f64)
}

struct RoundClock {
    start: Instant,
    index: usize,
}

impl RoundClock {
    fn log(
        &mut self,
        participants: usize,
        broadcast: bool,
        len: usize,
        rel_err: Option<f64>,
        nll: Option<f64>,
        grad_norm: f64,
    ) -> RoundLog {
        self.index += 1;
        let broadcasts = if broadcast { participants as u64 } else { 0 };
        let uploads = participants as u64;
        RoundLog {
            round: self.index,
            broadcasts,
            uploads,
            scalars_sent: (broadcasts + uploads) * len as u64,
            rel_err,
            nll,
            grad_norm,
            wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
        }
    }
}

/// Reference vector by federated power iteration. Agents first upload their
/// local moment diagonals, then return `M_m v` for each broadcast `v`.
pub fn federated_reference_vector(
    exec: Exec,
    fed: &FederatedDataset,
    iters: usize,
    tol: f64,
    clock_logs: &mut Vec<RoundLog>,
) -> Result<Vec<f64>> {
    check_shards(fed)?;
    let d = fed.shards[0].d();
    let agents = fed.agents();
    let w = vec![1.0 / agents as f64; agents];
    let mut clock = RoundClock { start: Instant::now(), index: clock_logs.len() };
    let diags = exec.map(agents, |m| moment_diagonal(Exec::Sequential, &fed.shards[m]));
    let start = weighted_average(&diags.iter().map(Vec::as_slice).collect::<Vec<_>>(), &w);
    clock_logs.push(clock.log(agents, false, d, None, None, 0.0));
    let (v, _) = power_iteration(&start, iters, tol, |v| {
        let parts = exec.map(agents, |m| moment_matvec(Exec::Sequential, &fed.shards[m], v));
        let avg = weighted_average(&parts.iter().map(Vec::as_slice).collect::<Vec<_>>(), &w);
        clock_logs.push(clock.log(agents, true, d, None, None, 0.0));
        Ok(avg)
    })?;
    Ok(v)
}

/// Federated minimax solver. When `init` is given its reference vector is used
/// and no power-iteration rounds are spent.
pub fn run_f_wmlr(
    fed: &FederatedDataset,
    cfg: &WmlrConfig,
    fcfg: &FederatedConfig,
    init: Option<WmlrState>,
    beta_star: Option<&[f64]>,
) -> Result<FederatedRun<WmlrState>> {
    cfg.validate()?;
    fcfg.validate()?;
    check_shards(fed)?;
    let exec = Exec::default();
    let d = fed.shards[0].d();
    let mut logs = Vec::new();
    let mut state = match init {
        Some(s) => s,
        None => {
            let gamma_ref = federated_reference_vector(exec, fed, fcfg.ref_iters, cfg.ref_tol, &mut logs)?;
            init_state_with_ref(fed.total_n(), 0, gamma_ref, cfg)?
        }
    };
    let setup_rounds = logs.len();
    let starts = fed.row_starts();
    let mut noises: Vec<ModelNoise> = fed
        .shards
        .iter()
        .zip(&starts)
        .map(|(s, &start)| {
            let mut nz = state.noise.clone();
            nz.offset = start as u64;
            nz.xi = state.noise.xi[start..start + s.n()].to_vec();
            nz
        })
        .collect();
    let sigma_of = |data: &Dataset, beta: &[f64]| model_sigma2(data, beta, cfg.sigma_mode);
    let metrics = |beta: &[f64]| -> Result<(Option<f64>, Option<f64>)> {
        match beta_star {
            Some(b) => {
                let s2 = match cfg.sigma_mode {
                    crate::wmlr::SigmaMode::Known(s) => s,
                    crate::wmlr::SigmaMode::Estimated => {
                        let ey2 = fed.shards.iter().map(|s| s.second_moment_y() * s.n() as f64).sum::<f64>()
                            / fed.total_n() as f64;
                        (ey2 - crate::linalg::norm_sq(beta)).max(crate::model::SIGMA2_FLOOR)
                    }
                };
                Ok((Some(relative_error(beta, b, true)?), Some(pooled_nll(fed, beta, s2)?)))
            }
            None => Ok((None, None)),
        }
    };
    let initial_rel_err = metrics(&state.beta)?.0;
    let mut clock = RoundClock { start: Instant::now(), index: logs.len() };
    let mut step_index = 0u64;
    for t in 0..fcfg.rounds {
        let ids = fcfg.participants(fed.agents(), t);
        let results = exec.map(ids.len(), |j| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, ModelNoise)> {
            let m = ids[j];
            let shard = &fed.shards[m];
            let mut beta = state.beta.clone();
            let mut critic = state.critic.clone();
            let mut noise = noises[m].clone();
            let mut first_grad = None;
            for s in 0..fcfg.local_steps {
                let eval = objective_sym_with(Exec::Sequential, shard, &beta, &critic, &noise.xi, sigma_of(shard, &beta))?;
                let ok = eval.grad_beta.iter().chain(&eval.grad_gammas).all(|g| all_finite(g));
                if !ok {
                    return Err(Error::NonFinite { what: "agent gradient", iter: t });
                }
                axpy(-cfg.alpha_min, &eval.grad_beta[0], &mut beta);
                axpy(cfg.alpha_max, &eval.grad_gammas[0], &mut critic.gamma1);
                axpy(cfg.alpha_max, &eval.grad_gammas[1], &mut critic.gamma2);
                if first_grad.is_none() {
                    first_grad = Some(eval.grad_beta[0].clone());
                }
                if cfg.noise_mode == NoiseMode::Resample {
                    noise = noise.redraw(step_index + s as u64 + 1);
                }
            }
            Ok((beta, critic.gamma1, critic.gamma2, first_grad.unwrap_or_default(), noise))
        });
        let mut parts = Vec::with_capacity(ids.len());
        for r in results {
            parts.push(r?);
        }
        let w = fcfg.weights(fed, &ids);
        let avg = |f: &dyn Fn(&(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, ModelNoise)) -> &Vec<f64>| {
            weighted_average(&parts.iter().map(|p| f(p).as_slice()).collect::<Vec<_>>(), &w)
        };
        state.beta = avg(&|p| &p.0);
        state.critic.gamma1 = avg(&|p| &p.1);
        state.critic.gamma2 = avg(&|p| &p.2);
        let grad = avg(&|p| &p.3);
        for (j, p) in parts.into_iter().enumerate() {
            noises[ids[j]] = p.4;
        }
        step_index += fcfg.local_steps as u64;
        state.iter += 1;
        if !all_finite(&state.beta) {
            return Err(Error::NonFinite { what: "averaged parameters", iter: t });
        }
        let (rel_err, nll) = metrics(&state.beta)?;
        logs.push(clock.log(ids.len(), true, 3 * d, rel_err, nll, norm(&grad)));
    }
    state.noise.xi = noises.iter().flat_map(|n| n.xi.iter().copied()).collect();
    Ok(FederatedRun { state, rounds: logs, setup_rounds, initial_rel_err })
}

type EmUpdate = (Vec<f64>, f64, Vec<f64>, f64);

/// One federated ascent round on `Q(., old)` starting at `cur`; returns the
/// averaged state and the averaged gradient.
fn em_round(
    exec: Exec,
    fed: &FederatedDataset,
    fcfg: &FederatedConfig,
    ids: &[usize],
    cur: &EmState,
    old: &EmState,
    gem: &GemConfig,
) -> Result<(EmState, Vec<f64>, f64)> {
    let results = exec.map(ids.len(), |j| -> Result<EmUpdate> {
        let (gb, gs) = gem_grads(cur, old, &fed.shards[ids[j]])?;
        let beta = cur.beta.iter().zip(&gb).map(|(b, g)| b + gem.alpha * g).collect();
        let sigma2 = (cur.sigma2 + gem.alpha * gs).max(gem.sigma2_floor);
        Ok((beta, sigma2, gb, gs))
    });
    let mut parts = Vec::with_capacity(ids.len());
    for r in results {
        parts.push(r?);
    }
    let w = fcfg.weights(fed, ids);
    let beta = weighted_average(&parts.iter().map(|p| p.0.as_slice()).collect::<Vec<_>>(), &w);
    let sig: Vec<f64> = weighted_average(&parts.iter().map(|p| std::slice::from_ref(&p.1)).collect::<Vec<_>>(), &w);
    let gb = weighted_average(&parts.iter().map(|p| p.2.as_slice()).collect::<Vec<_>>(), &w);
    let gs = weighted_average(&parts.iter().map(|p| std::slice::from_ref(&p.3)).collect::<Vec<_>>(), &w);
    let state = EmState { beta, sigma2: sig[0].max(gem.sigma2_floor) };
    Ok((state, gb, gs[0]))
}

fn em_metrics(fed: &FederatedDataset, s: &EmState, beta_star: Option<&[f64]>) -> Result<(Option<f64>, Option<f64>)> {
    match beta_star {
        Some(b) => Ok((Some(relative_error(&s.beta, b, true)?), Some(pooled_nll(fed, &s.beta, s.sigma2)?))),
        None => Ok((None, None)),
    }
}

fn check_em_finite(s: &EmState, iter: usize) -> Result<()> {
    if all_finite(&s.beta) && s.sigma2.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { what: "averaged parameters", iter })
    }
}

/// Federated gradient EM: one local ascent step per agent per round.
/// The round budget comes from `fcfg.rounds`; `gem.iters` is not used.
pub fn run_f_gem(
    fed: &FederatedDataset,
    init: EmState,
    gem: &GemConfig,
    fcfg: &FederatedConfig,
    beta_star: Option<&[f64]>,
) -> Result<FederatedRun<EmState>> {
    gem.validate()?;
    fcfg.validate()?;
    check_shards(fed)?;
    let exec = Exec::default();
    let d = fed.shards[0].d();
    let mut state = init;
    let initial_rel_err = em_metrics(fed, &state, beta_star)?.0;
    let mut clock = RoundClock { start: Instant::now(), index: 0 };
    let mut logs = Vec::with_capacity(fcfg.rounds);
    for t in 0..fcfg.rounds {
        let ids = fcfg.participants(fed.agents(), t);
        let (next, gb, gs) = em_round(exec, fed, fcfg, &ids, &state, &state, gem)?;
        check_em_finite(&next, t)?;
        state = next;
        let (rel_err, nll) = em_metrics(fed, &state, beta_star)?;
        let g = (crate::linalg::norm_sq(&gb) + gs * gs).sqrt();
        logs.push(clock.log(ids.len(), true, d + 1, rel_err, nll, g));
    }
    Ok(FederatedRun { state, rounds: logs, setup_rounds: 0, initial_rel_err })
}

/// Federated EM: the weights are frozen at the start of each outer step and the
/// M-step is solved by up to `fem_inner_max` averaged ascent rounds, stopping
/// once the averaged gradient norm falls to `fem_tol`. Every inner round counts
/// against `fcfg.rounds`.
pub fn run_f_em(
    fed: &FederatedDataset,
    init: EmState,
    gem: &GemConfig,
    fcfg: &FederatedConfig,
    beta_star: Option<&[f64]>,
) -> Result<FederatedRun<EmState>> {
    gem.validate()?;
    fcfg.validate()?;
    check_shards(fed)?;
    let exec = Exec::default();
    let d = fed.shards[0].d();
    let mut state = init;
    let initial_rel_err = em_metrics(fed, &state, beta_star)?.0;
    let mut clock = RoundClock { start: Instant::now(), index: 0 };
    let mut logs = Vec::with_capacity(fcfg.rounds);
    let mut t = 0;
    while t < fcfg.rounds {
        let frozen = state.clone();
        for _ in 0..fcfg.fem_inner_max {
            if t == fcfg.rounds {
                break;
            }
            let ids = fcfg.participants(fed.agents(), t);
            let (next, gb, gs) = em_round(exec, fed, fcfg, &ids, &state, &frozen, gem)?;
            check_em_finite(&next, t)?;
            state = next;
            let (rel_err, nll) = em_metrics(fed, &state, beta_star)?;
            let g = (crate::linalg::norm_sq(&gb) + gs * gs).sqrt();
            logs.push(clock.log(ids.len(), true, d + 1, rel_err, nll, g));
            t += 1;
            if g <= fcfg.fem_tol {
                break;
            }
        }
    }
    Ok(FederatedRun { state, rounds: logs, setup_rounds: 0, initial_rel_err })
}

/// Smallest `t0` with `errs[k] <= 1.05 errs[last]` for all `k >= t0`.
pub fn convergence_round(errs: &[f64]) -> Option<usize> {
    convergence_index(errs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_dataset, generate_federated, ClusterMode, GenConfig, XLaw};
    use crate::wmlr::{init_state, run_wmlr};

    fn gen(n: usize, d: usize, snr: f64, seed: u64) -> GenConfig {
        GenConfig { n, d, snr, sigma2: 1.0, x_law: XLaw::StandardNormal, seed }
    }

    #[test]
    fn single_agent_matches_centralized_bitwise() {
        let g = gen(300, 4, 3.0, 1);
        let p = g.symmetric_params().unwrap();
        let data = generate_dataset(&g, &p).unwrap();
        let fed = FederatedDataset::from_sizes(&data, &[300]).unwrap();
        let cfg = WmlrConfig::heuristic(0.5, 15, 2);
        let init = init_state(&data, &cfg).unwrap();
        let (central, _) = run_wmlr(&data, &cfg, Some(init.clone()), None).unwrap();
        let run = run_f_wmlr(&fed, &cfg, &FederatedConfig::new(15, 3), Some(init), None).unwrap();
        assert_eq!(run.state.beta, central.beta);
        assert_eq!(run.state.critic, central.critic);
        assert_eq!(run.setup_rounds, 0);
    }

    #[test]
    fn reference_rounds_are_counted() {
        let g = gen(1, 3, 2.0, 4);
        let p = g.symmetric_params().unwrap();
        let fed = generate_federated(&g, &p, 5, 20, ClusterMode::PerAgent).unwrap();
        let cfg = WmlrConfig::heuristic(0.5, 0, 5);
        let fcfg = FederatedConfig::new(4, 6);
        let run = run_f_wmlr(&fed, &cfg, &fcfg, None, Some(p.symmetric_beta().unwrap())).unwrap();
        assert_eq!(run.rounds.len(), run.setup_rounds + 4);
        assert!(run.setup_rounds >= 2 && run.setup_rounds <= 21);
        assert_eq!(run.rounds[0].scalars_sent, 5 * 3);
        for r in run.training_rounds() {
            assert_eq!(r.scalars_sent, 10 * 9);
        }
        assert_eq!(run.rel_errs().unwrap().len(), 5);
    }

    #[test]
    fn empty_shard_is_rejected() {
        let data = Dataset::from_rows(&[vec![1.0], vec![2.0]], vec![1.0, 2.0]).unwrap();
        let fed = FederatedDataset::from_sizes(&data, &[2, 0]).unwrap();
        let err = run_f_gem(&fed, EmState::new(vec![0.1], 1.0).unwrap(), &GemConfig::new(0.1, 1), &FederatedConfig::new(1, 0), None);
        assert!(matches!(err, Err(Error::EmptyShard { agent: 1 })));
    }

    #[test]
    fn f_em_inner_loop_is_capped() {
        let g = gen(1, 3, 10.0, 7);
        let p = g.symmetric_params().unwrap();
        let fed = generate_federated(&g, &p, 4, 25, ClusterMode::PerAgent).unwrap();
        let mut fcfg = FederatedConfig::new(120, 8);
        fcfg.fem_tol = 0.0;
        let run = run_f_em(&fed, EmState::new(vec![0.1; 3], 1.0).unwrap(), &GemConfig::new(1e-4, 0), &fcfg, None).unwrap();
        assert_eq!(run.rounds.len(), 120);
    }

    #[test]
    fn participation_subsets() {
        let mut f = FederatedConfig::new(1, 9);
        assert_eq!(f.participants(7, 3), (0..7).collect::<Vec<_>>());
        f.participation = 0.3;
        let ids = f.participants(10, 3);
        assert_eq!(ids.len(), 3);
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(ids, f.participants(10, 3));
        f.participation = 0.0;
        assert!(f.validate().is_err());
    }
}

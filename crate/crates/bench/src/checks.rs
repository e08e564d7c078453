//! Acceptance criteria 1-11 as runnable checks. Criteria 1-4 run the experiment
//! presets; 5-11 are property and oracle checks on small instances.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use wmlr::critic::{c_transform_oracle, max_gamma_norm, psi_k, psi_k_grads, psi_sym, psi_sym_grads, Bracket, CriticK, CriticSym};
use wmlr::em::{gem_grads, m_step, q_function, run_gem, CovSolver, EmState, GemConfig, SigmaX};
use wmlr::exec::Exec;
use wmlr::fedsim::{run_f_gem, run_f_wmlr, FederatedConfig};
use wmlr::linalg::{dist_sq, dot, norm};
use wmlr::model::{generate_dataset, generate_federated, oracle_transport, relative_error, ClusterMode, GenConfig, MlrParams, XLaw};
use wmlr::wmlr::{
    init_state, maximize_critic, model_sigma2, objective_k_with, objective_sym_with, run_wmlr, ModelNoise, SigmaMode, WmlrConfig,
};
use wmlr::Dataset;

use crate::config::Algorithm;
use crate::error::{Result, SolverContext};
use crate::presets;
use crate::reproduce::{band, converges, flagged_dnc, nll_not_above, reaches_within, run_cell, runtime_band, slower_by, Cell, Grade, Status};

pub const ALL: [u32; 11] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];
/// Criteria that do not run the full-size experiments.
pub const INVARIANTS: [u32; 7] = [5, 6, 7, 8, 9, 10, 11];

/// Parts that fail with the current implementation, with the analysis kept
/// alongside the experiment notes. Acceptance reports them as FAIL.
pub const KNOWN_FAILURES: [(u32, &str); 1] = [(3, "snr10-m1000-f-em flagged d.n.c.")];

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub id: u32,
    pub name: &'static str,
    pub parts: Vec<Grade>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.parts.iter().all(Grade::passed)
    }

    pub fn failing_parts(&self) -> Vec<&str> {
        self.parts.iter().filter(|p| !p.passed()).map(|p| p.name.as_str()).collect()
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] criterion {:>2}: {}", self.id, self.name)?;
        for p in &self.parts {
            let t = match p.status {
                Status::Pass => "ok",
                Status::Fail => "FAIL",
                Status::Info => "info",
            };
            write!(f, "\n    {t:>4} {}: {}", p.name, p.detail)?;
        }
        Ok(())
    }
}

pub fn name(id: u32) -> &'static str {
    match id {
        1 => "centralized, SNR 10, n = 10,000",
        2 => "centralized, SNR 1, n = 100,000",
        3 => "federated, M = 1,000 agents x 10 samples",
        4 => "one federated penalty across SNRs",
        5 => "analytic gradients vs central differences",
        6 => "federated iterates equal centralized iterates",
        7 => "M-step is a stationary local maximum",
        8 => "one-dimensional recovery over 20 seeds",
        9 => "c-transform bound on bounded inputs",
        10 => "transport map matches destination moments",
        11 => "gradient at the inner optimum decays as n^-1/2",
        _ => "unknown",
    }
}

pub fn run(id: u32) -> Result<CheckOutcome> {
    let parts = match id {
        1 => criterion1()?,
        2 => criterion2()?,
        3 => criterion3()?,
        4 => criterion4()?,
        5 => criterion5()?,
        6 => criterion6()?,
        7 => criterion7()?,
        8 => criterion8()?,
        9 => criterion9()?,
        10 => criterion10()?,
        11 => criterion11()?,
        _ => return Err(crate::HarnessError::Validation(format!("no criterion {id}; expected 1-11"))),
    };
    Ok(CheckOutcome { id, name: name(id), parts })
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal_vec(r: &mut impl Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect()
}

fn labelled(cell: &Cell, g: Grade) -> Grade {
    Grade { name: format!("{} {}", cell.label, g.name), ..g }
}

// Criteria 1-4: experiment presets.

fn central(snr: f64, n: usize, alg: Algorithm) -> Result<Cell> {
    run_cell(&format!("snr{snr}-n{n}-{alg}"), &presets::centralized(snr, n, alg), None)
}

fn federated(snr: f64, agents: usize, alg: Algorithm) -> Result<Cell> {
    run_cell(&format!("snr{snr}-m{agents}-{alg}"), &presets::federated(snr, agents, alg), None)
}

fn criterion1() -> Result<Vec<Grade>> {
    let w = central(10.0, 10_000, Algorithm::Wmlr)?;
    let e = central(10.0, 10_000, Algorithm::Em)?;
    Ok(vec![
        labelled(&w, band("rel-err", w.final_rel_err, 0.0, 5e-2)),
        labelled(&e, band("rel-err", e.final_rel_err, 6e-2, 2.5e-1)),
        nll_not_above(&w, &e),
        labelled(&w, runtime_band(&w, 5.0)),
        labelled(&e, runtime_band(&e, 5.0)),
    ])
}

fn criterion2() -> Result<Vec<Grade>> {
    let mut parts = Vec::new();
    for alg in [Algorithm::Em, Algorithm::Gem, Algorithm::Wmlr] {
        let c = central(1.0, 100_000, alg)?;
        parts.push(labelled(&c, band("rel-err", c.final_rel_err, 4e-2, 1.5e-1)));
        parts.push(labelled(&c, band("NLL", c.final_nll, 1.64, 1.68)));
        parts.push(labelled(&c, runtime_band(&c, 10.0)));
    }
    Ok(parts)
}

fn criterion3() -> Result<Vec<Grade>> {
    let m = 1000;
    let w10 = federated(10.0, m, Algorithm::FWmlr)?;
    let em10 = federated(10.0, m, Algorithm::FEm)?;
    let g20 = federated(20.0, m, Algorithm::FGem)?;
    let w20 = federated(20.0, m, Algorithm::FWmlr)?;
    Ok(vec![
        labelled(&w10, reaches_within(&w10, 2.5e-2, 200)),
        labelled(&em10, flagged_dnc(&em10)),
        slower_by(&g20, &w20, 5.0),
    ])
}

fn criterion4() -> Result<Vec<Grade>> {
    let lambda = presets::fed_lambda(10.0);
    let mut parts = Vec::new();
    for snr in [1.0, 5.0, 20.0] {
        let mut cfg = presets::federated(snr, 1000, Algorithm::FWmlr);
        cfg.set_lambda(lambda)?;
        let c = run_cell(&format!("snr{snr}-m1000-f-wmlr-lambda{lambda}"), &cfg, None)?;
        parts.push(labelled(&c, converges(&c)));
    }
    Ok(parts)
}

// Criterion 5: gradients against central differences of independent formulas.

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-6;
const FD_INSTANCES: u64 = 100;

fn fd_gradient(f: impl Fn(&[f64]) -> f64, at: &[f64]) -> Vec<f64> {
    (0..at.len())
        .map(|j| {
            let mut p = at.to_vec();
            let mut m = at.to_vec();
            p[j] += FD_STEP;
            m[j] -= FD_STEP;
            (f(&p) - f(&m)) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||, 1e-3)`; the floor absorbs difference
/// roundoff when a gradient is nearly zero.
fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    dist_sq(a, b).sqrt() / norm(a).max(norm(b)).max(1e-3)
}

fn naive_logcosh(t: f64) -> f64 {
    let a = t.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

fn naive_psi_sym(g1: &[f64], g2: &[f64], x: &[f64], y: f64) -> f64 {
    naive_logcosh(y * dot(g1, x)) - naive_logcosh(y * dot(g2, x))
}

fn naive_psi_k(gammas: &[Vec<f64>], sigma2: f64, x: &[f64], y: f64) -> f64 {
    let lse = |idx: &mut dyn Iterator<Item = usize>| {
        let v: Vec<f64> = idx.map(|j| -(y - dot(&gammas[j], x)).powi(2) / (2.0 * sigma2)).collect();
        let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
    };
    let k = gammas.len() / 2;
    lse(&mut (0..k).map(|i| 2 * i)) - lse(&mut (0..k).map(|i| 2 * i + 1))
}

struct Worst(f64);

impl Worst {
    fn see(&mut self, v: f64) {
        if !(v <= self.0) {
            self.0 = v;
        }
    }

    fn grade(&self, name: &str) -> Grade {
        Grade::check(name, self.0 <= FD_TOL, format!("worst relative error {:.2e} over {FD_INSTANCES} instances", self.0))
    }
}

fn criterion5() -> Result<Vec<Grade>> {
    let mut r = rng(5);
    let (mut ws, mut wk, mut wl, mut wlk, mut wq) = (Worst(0.0), Worst(0.0), Worst(0.0), Worst(0.0), Worst(0.0));
    for inst in 0..FD_INSTANCES {
        let d = r.random_range(1..6);
        let x = normal_vec(&mut r, d, 1.0);
        let y: f64 = r.random_range(-3.0..3.0);
        let (g1, g2) = (normal_vec(&mut r, d, 0.7), normal_vec(&mut r, d, 0.7));
        let c = CriticSym::new(g1.clone(), g2.clone(), vec![0.0; d], 1.0).context(|| "critic".into())?;
        let (a1, a2, ay) = psi_sym_grads(&c, &x, y);
        ws.see((psi_sym(&c, &x, y) - naive_psi_sym(&g1, &g2, &x, y)).abs());
        ws.see(rel_diff(&a1, &fd_gradient(|g| naive_psi_sym(g, &g2, &x, y), &g1)));
        ws.see(rel_diff(&a2, &fd_gradient(|g| naive_psi_sym(&g1, g, &x, y), &g2)));
        ws.see(rel_diff(&[ay], &fd_gradient(|v| naive_psi_sym(&g1, &g2, &x, v[0]), &[y])));

        let k = r.random_range(1..4);
        let sigma2 = r.random_range(0.5..2.0);
        let gammas: Vec<Vec<f64>> = (0..2 * k).map(|_| normal_vec(&mut r, d, 0.8)).collect();
        let c = CriticK::new(gammas.clone(), vec![vec![0.0; d]; k], 1.0, sigma2).context(|| "critic".into())?;
        let g = psi_k_grads(&c, &x, y);
        wk.see((psi_k(&c, &x, y) - naive_psi_k(&gammas, sigma2, &x, y)).abs());
        for j in 0..2 * k {
            let fd = fd_gradient(
                |v| {
                    let mut gs = gammas.clone();
                    gs[j] = v.to_vec();
                    naive_psi_k(&gs, sigma2, &x, y)
                },
                &gammas[j],
            );
            wk.see(rel_diff(&g.d_gammas[j], &fd));
        }
        wk.see(rel_diff(&[g.d_y], &fd_gradient(|v| naive_psi_k(&gammas, sigma2, &x, v[0]), &[y])));

        wl.see(objective_sym_instance(&mut r, inst)?);
        wlk.see(objective_k_instance(&mut r, inst)?);
        wq.see(q_instance(&mut r, inst)?);
    }
    Ok(vec![
        ws.grade("psi_sym"),
        wk.grade("psi_k"),
        wl.grade("objective (symmetric)"),
        wlk.grade("objective (k components)"),
        wq.grade("Q function"),
    ])
}

fn small_data(r: &mut impl Rng, n: usize, d: usize, seed: u64) -> Result<Dataset> {
    let g = GenConfig { n, d, snr: r.random_range(0.5..2.0), sigma2: 1.0, x_law: XLaw::StandardNormal, seed };
    let p = g.symmetric_params().context(|| "params".into())?;
    generate_dataset(&g, &p).context(|| "data".into())
}

fn objective_sym_instance(r: &mut impl Rng, inst: u64) -> Result<f64> {
    let d = r.random_range(1..5);
    let n = r.random_range(5..40);
    let data = small_data(r, n, d, 1000 + inst)?;
    let beta = normal_vec(r, d, 0.5);
    let (g1, g2, gref) = (normal_vec(r, d, 0.5), normal_vec(r, d, 0.5), normal_vec(r, d, 0.5));
    let lambda = r.random_range(0.1..2.0);
    let s2: f64 = r.random_range(0.5..1.5);
    let noise = ModelNoise::draw(inst, 0, n, None, 0);
    let f = |b: &[f64], a: &[f64], c: &[f64]| {
        let mut total = 0.0;
        for i in 0..n {
            let x = data.x(i);
            total += naive_psi_sym(a, c, x, data.y(i)) - naive_psi_sym(a, c, x, dot(b, x) + s2.sqrt() * noise.xi[i]);
        }
        total / n as f64 - lambda * (dist_sq(a, &gref) + dist_sq(c, &gref))
    };
    let c = CriticSym::new(g1.clone(), g2.clone(), gref.clone(), lambda).context(|| "critic".into())?;
    let ev = objective_sym_with(Exec::Sequential, &data, &beta, &c, &noise.xi, s2).context(|| "objective".into())?;
    let mut worst = (ev.value - f(&beta, &g1, &g2)).abs();
    worst = worst.max(rel_diff(&ev.grad_beta[0], &fd_gradient(|b| f(b, &g1, &g2), &beta)));
    worst = worst.max(rel_diff(&ev.grad_gammas[0], &fd_gradient(|g| f(&beta, g, &g2), &g1)));
    worst = worst.max(rel_diff(&ev.grad_gammas[1], &fd_gradient(|g| f(&beta, &g1, g), &g2)));
    Ok(worst)
}

fn objective_k_instance(r: &mut impl Rng, inst: u64) -> Result<f64> {
    let k = r.random_range(1..4);
    let d = r.random_range(1..4);
    let n = r.random_range(5..30);
    let data = small_data(r, n, d, 2000 + inst)?;
    let betas: Vec<Vec<f64>> = (0..k).map(|_| normal_vec(r, d, 0.5)).collect();
    let gammas: Vec<Vec<f64>> = (0..2 * k).map(|_| normal_vec(r, d, 0.5)).collect();
    let grefs: Vec<Vec<f64>> = (0..k).map(|_| normal_vec(r, d, 0.5)).collect();
    let lambda = r.random_range(0.1..2.0);
    let sigma2: f64 = r.random_range(0.5..1.5);
    let noise = ModelNoise::draw(inst, 0, n, Some(k), 0);
    let latents = noise.latents.clone().unwrap_or_default();
    let value = |bs: &[Vec<f64>], gs: &[Vec<f64>]| {
        let mut total = 0.0;
        for i in 0..n {
            let x = data.x(i);
            let yp = dot(&bs[latents[i] as usize], x) + sigma2.sqrt() * noise.xi[i];
            total += naive_psi_k(gs, sigma2, x, data.y(i)) - naive_psi_k(gs, sigma2, x, yp);
        }
        let reg: f64 = gs.iter().enumerate().map(|(j, g)| dist_sq(g, &grefs[j / 2])).sum();
        total / n as f64 - lambda * reg
    };
    let c = CriticK::new(gammas.clone(), grefs.clone(), lambda, sigma2).context(|| "critic".into())?;
    let ev = objective_k_with(Exec::Sequential, &data, &betas, &c, &noise, sigma2).context(|| "objective".into())?;
    let mut worst = (ev.value - value(&betas, &gammas)).abs();
    for j in 0..k {
        let fd = fd_gradient(
            |v| {
                let mut bs = betas.clone();
                bs[j] = v.to_vec();
                value(&bs, &gammas)
            },
            &betas[j],
        );
        worst = worst.max(rel_diff(&ev.grad_beta[j], &fd));
    }
    for j in 0..2 * k {
        let fd = fd_gradient(
            |v| {
                let mut gs = gammas.clone();
                gs[j] = v.to_vec();
                value(&betas, &gs)
            },
            &gammas[j],
        );
        worst = worst.max(rel_diff(&ev.grad_gammas[j], &fd));
    }
    Ok(worst)
}

fn naive_q(beta: &[f64], s2: f64, old: &EmState, data: &Dataset) -> f64 {
    let mut acc = 0.0;
    for i in 0..data.n() {
        let (x, y) = (data.x(i), data.y(i));
        let po = dot(&old.beta, x);
        let w = 1.0 / (1.0 + (-2.0 * y * po / old.sigma2).exp());
        let p = dot(beta, x);
        acc += w * (y - p).powi(2) + (1.0 - w) * (y + p).powi(2);
    }
    -0.5 * s2.ln() - acc / (2.0 * s2 * data.n() as f64)
}

fn q_instance(r: &mut impl Rng, inst: u64) -> Result<f64> {
    let d = r.random_range(1..6);
    let n = r.random_range(5..50);
    let data = small_data(r, n, d, 3000 + inst)?;
    let old = EmState::new(normal_vec(r, d, 0.5), r.random_range(0.5..2.0)).context(|| "state".into())?;
    let new = EmState::new(normal_vec(r, d, 0.5), r.random_range(0.5..2.0)).context(|| "state".into())?;
    let q = q_function(&new, &old, &data).context(|| "Q".into())?;
    let (gb, gs) = gem_grads(&new, &old, &data).context(|| "Q gradient".into())?;
    let mut worst = (q - naive_q(&new.beta, new.sigma2, &old, &data)).abs() / q.abs().max(1.0);
    worst = worst.max(rel_diff(&gb, &fd_gradient(|b| naive_q(b, new.sigma2, &old, &data), &new.beta)));
    worst = worst.max(rel_diff(&[gs], &fd_gradient(|s| naive_q(&new.beta, s[0], &old, &data), &[new.sigma2])));
    Ok(worst)
}

// Criterion 6: equal shards, full participation, one local step.

fn criterion6() -> Result<Vec<Grade>> {
    let g = GenConfig { n: 1, d: 4, snr: 3.0, sigma2: 1.0, x_law: XLaw::StandardNormal, seed: 6 };
    let p = g.symmetric_params().context(|| "params".into())?;
    let fed = generate_federated(&g, &p, 8, 25, ClusterMode::PerSample).context(|| "data".into())?;
    let pooled = fed.pooled().context(|| "pooling".into())?;
    let cfg = |iters| {
        let mut c = WmlrConfig::half_penalty(0.5, iters, 3);
        c.sigma_mode = SigmaMode::Known(1.0);
        c
    };
    let init = init_state(&pooled, &cfg(0)).context(|| "init".into())?;
    let mut central = init.clone();
    let mut worst_w: f64 = 0.0;
    for t in 1..=50 {
        central = run_wmlr(&pooled, &cfg(1), Some(central), None).context(|| "wmlr".into())?.0;
        let run = run_f_wmlr(&fed, &cfg(0), &FederatedConfig::new(t, 0), Some(init.clone()), None).context(|| "f-wmlr".into())?;
        worst_w = worst_w
            .max(rel_diff(&run.state.beta, &central.beta))
            .max(rel_diff(&run.state.critic.gamma1, &central.critic.gamma1))
            .max(rel_diff(&run.state.critic.gamma2, &central.critic.gamma2));
    }
    let em_init = EmState::new(normal_vec(&mut rng(6), 4, 0.5), 1.0).context(|| "init".into())?;
    let mut worst_g: f64 = 0.0;
    for t in [1, 10, 50] {
        let run = run_f_gem(&fed, em_init.clone(), &GemConfig::new(0.3, 0), &FederatedConfig::new(t, 0), None)
            .context(|| "f-gem".into())?;
        let (c, _) = run_gem(&pooled, em_init.clone(), &GemConfig::new(0.3, t), None).context(|| "gem".into())?;
        worst_g = worst_g.max(rel_diff(&run.state.beta, &c.beta)).max((run.state.sigma2 - c.sigma2).abs() / c.sigma2);
    }
    Ok(vec![
        Grade::check("f-wmlr", worst_w <= 1e-10, format!("worst relative gap {worst_w:.2e} over rounds 1-50, 8 shards")),
        Grade::check("f-gem", worst_g <= 1e-10, format!("worst relative gap {worst_g:.2e} at rounds 1, 10, 50")),
    ])
}

// Criterion 7: closed-form M-step against the Q function.

fn criterion7() -> Result<Vec<Grade>> {
    let (mut grad, mut rise) = (0.0f64, f64::NEG_INFINITY);
    for seed in 0..10u64 {
        let mut r = rng(700 + seed);
        let g = GenConfig { n: 500, d: 4, snr: 1.0 + seed as f64, sigma2: 1.0, x_law: XLaw::StandardNormal, seed: 100 + seed };
        let data = generate_dataset(&g, &g.symmetric_params().context(|| "params".into())?).context(|| "data".into())?;
        let old = EmState::new(normal_vec(&mut r, 4, 1.0), 0.5 + seed as f64 * 0.2).context(|| "state".into())?;
        let solver = CovSolver::prepare(&SigmaX::Empirical, &data).context(|| "covariance".into())?;
        let new = m_step(&old, &data, &solver).context(|| "m-step".into())?;
        let (gb, gs) = gem_grads(&new, &old, &data).context(|| "Q gradient".into())?;
        grad = grad.max(norm(&gb)).max(gs.abs());
        let q0 = q_function(&new, &old, &data).context(|| "Q".into())?;
        for _ in 0..20 {
            let dir = normal_vec(&mut r, 5, 1.0);
            for step in [1e-4, 1e-2, 1e-1] {
                let beta = new.beta.iter().zip(&dir).map(|(b, v)| b + step * v).collect();
                let s2 = (new.sigma2 + step * dir[4]).max(1e-6);
                let q = q_function(&EmState::new(beta, s2).context(|| "state".into())?, &old, &data).context(|| "Q".into())?;
                rise = rise.max(q - q0);
            }
        }
    }
    Ok(vec![
        Grade::check("stationary", grad <= 1e-9, format!("largest gradient component norm {grad:.2e}")),
        Grade::check("local maximum", rise <= 1e-9, format!("largest Q increase {rise:.2e} over 200 directions x 3 steps")),
    ])
}

// Criterion 8: d = 1 recovery.

fn criterion8() -> Result<Vec<Grade>> {
    let mut hits = 0;
    let mut errs = Vec::new();
    for s in 0..20u64 {
        let g = GenConfig { n: 50_000, d: 1, snr: 2.0, sigma2: 1.0, x_law: XLaw::StandardNormal, seed: 800 + s };
        let p = g.symmetric_params().context(|| "params".into())?;
        let data = generate_dataset(&g, &p).context(|| "data".into())?;
        let cfg = WmlrConfig::half_penalty(0.5, 200, 900 + s);
        let (st, _) = run_wmlr(&data, &cfg, None, None).context(|| "wmlr".into())?;
        let e = relative_error(&st.beta, p.symmetric_beta().unwrap_or_default(), true).context(|| "rel-err".into())?;
        if e <= 1e-2 {
            hits += 1;
        }
        errs.push(e);
    }
    let worst = errs.iter().copied().fold(0.0, f64::max);
    Ok(vec![Grade::check("runs within 1e-2", hits >= 19, format!("{hits}/20, worst {worst:.2e}"))])
}

// Criterion 9: c-transform bound.

fn criterion9() -> Result<Vec<Grade>> {
    let (k, d, c_bound, eta, n) = (2usize, 3usize, 1.0f64, 0.5f64, 400usize);
    let max_sq = eta / (2.0 * k as f64 * c_bound * c_bound);
    let mut r = rng(9);
    let mut worst_margin = f64::INFINITY;
    let mut violations = 0;
    for inst in 0..50u64 {
        let ball = |r: &mut ChaCha8Rng| {
            let v = normal_vec(r, d, 1.0);
            let scale = max_sq.sqrt() * r.random::<f64>().powf(1.0 / d as f64) / norm(&v);
            v.iter().map(|a| a * scale).collect::<Vec<f64>>()
        };
        let gammas: Vec<Vec<f64>> = (0..2 * k).map(|_| ball(&mut r)).collect();
        // anchors: half the instances at the pair midpoints, where the bound is tightest
        let refs: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                if inst % 2 == 0 {
                    gammas[2 * i].iter().zip(&gammas[2 * i + 1]).map(|(a, b)| 0.5 * (a + b)).collect()
                } else {
                    normal_vec(&mut r, d, 0.3)
                }
            })
            .collect();
        let critic = CriticK::new(gammas, refs, 1.0, 1.0).context(|| "critic".into())?;
        let g = GenConfig {
            n,
            d,
            snr: r.random_range(0.5..2.0),
            sigma2: 1.0,
            x_law: XLaw::BoundedNormal { radius: c_bound },
            seed: 9000 + inst,
        };
        let data = generate_dataset(&g, &g.symmetric_params().context(|| "params".into())?).context(|| "data".into())?;
        let gmax = max_gamma_norm(&critic);
        let (mut psi_mean, mut psic_mean, mut y_factor) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let (x, y) = (data.x(i), data.y(i));
            let ct = c_transform_oracle(|t| psi_k(&critic, x, t), y, &Bracket::for_point(y, gmax, norm(x)))
                .context(|| "c-transform".into())?;
            psi_mean += psi_k(&critic, x, y);
            psic_mean += ct.value;
            y_factor += (1.0 + c_bound * y.abs()).powi(2);
        }
        let nf = n as f64;
        let (psi_mean, psic_mean, y_factor) = (psi_mean / nf, psic_mean / nf, y_factor / nf);
        let pair_dist: f64 = (0..2 * k).map(|j| dist_sq(&critic.gammas[j], &critic.gamma_ref[j / 2])).sum();
        let rhs = psi_mean + k as f64 * c_bound * c_bound * y_factor / (1.0 - eta) * pair_dist;
        let margin = rhs - psic_mean;
        worst_margin = worst_margin.min(margin);
        if margin < 0.0 {
            violations += 1;
        }
    }
    Ok(vec![Grade::check(
        "bound holds",
        violations == 0,
        format!("{violations}/50 violations, smallest slack {worst_margin:.3e}"),
    )])
}

// Criterion 10: transport oracle.

fn bin_moments(xs: impl Iterator<Item = f64>, ys: &[f64], edges: &[f64]) -> Vec<(f64, f64, f64, f64)> {
    let mut bins = vec![Vec::new(); edges.len() + 1];
    for (x0, &y) in xs.zip(ys) {
        bins[edges.iter().filter(|&&e| x0 > e).count()].push(y);
    }
    bins.iter()
        .map(|b| {
            let n = b.len() as f64;
            let m = b.iter().sum::<f64>() / n;
            let v = b.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (n - 1.0);
            let m4 = b.iter().map(|y| (y - m).powi(4)).sum::<f64>() / n;
            (m, (v / n).sqrt(), v, ((m4 - v * v).max(0.0) / n).sqrt())
        })
        .collect()
}

fn criterion10() -> Result<Vec<Grade>> {
    let mut r = rng(10);
    let d = 2;
    let params = |r: &mut ChaCha8Rng| MlrParams::new(vec![normal_vec(r, d, 1.0), normal_vec(r, d, 1.0)], 1.0);
    let src = params(&mut r).context(|| "params".into())?;
    let dst = params(&mut r).context(|| "params".into())?;
    let g = GenConfig { n: 100_000, d, snr: 1.0, sigma2: 1.0, x_law: XLaw::StandardNormal, seed: 1001 };
    let s = generate_dataset(&g, &src).context(|| "source data".into())?;
    let t = generate_dataset(&GenConfig { seed: 1002, ..g }, &dst).context(|| "destination data".into())?;
    let zs = s.zs().unwrap_or_default();
    let moved = (0..s.n())
        .map(|i| oracle_transport(&src, &dst, s.x(i), s.y(i), zs[i]))
        .collect::<wmlr::Result<Vec<f64>>>()
        .context(|| "transport".into())?;
    // quintiles of N(0, 1)
    let edges = [-0.841_621_233_572_914_3, -0.253_347_103_135_799_7, 0.253_347_103_135_799_7, 0.841_621_233_572_914_3];
    let a = bin_moments((0..s.n()).map(|i| s.x(i)[0]), &moved, &edges);
    let b = bin_moments((0..t.n()).map(|i| t.x(i)[0]), t.ys(), &edges);
    let mut worst: f64 = 0.0;
    for (p, q) in a.iter().zip(&b) {
        worst = worst.max((p.0 - q.0).abs() / p.1.hypot(q.1));
        worst = worst.max((p.2 - q.2).abs() / p.3.hypot(q.3));
    }
    Ok(vec![Grade::check(
        "bin means and variances",
        worst <= 4.0,
        format!("largest gap {worst:.2} standard errors over 5 bins of x_0"),
    )])
}

// Criterion 11: gradient norm at the inner optimum versus n.

fn criterion11() -> Result<Vec<Grade>> {
    let sizes = [1_000usize, 10_000, 100_000];
    let reps = 8u64;
    let mut points = Vec::new();
    for &n in &sizes {
        let mut sq = 0.0;
        for rep in 0..reps {
            let g = GenConfig { n, d: 16, snr: 2.0, sigma2: 1.0, x_law: XLaw::StandardNormal, seed: 1100 + rep };
            let p = g.symmetric_params().context(|| "params".into())?;
            let data = generate_dataset(&g, &p).context(|| "data".into())?;
            let mut cfg = WmlrConfig::half_penalty(1.0, 0, 1200 + rep);
            cfg.sigma_mode = SigmaMode::Known(1.0);
            let mut state = init_state(&data, &cfg).context(|| "init".into())?;
            state.beta = p.symmetric_beta().unwrap_or_default().to_vec();
            let (critic, _) = maximize_critic(&data, &state, &cfg, 2000, 1e-9).context(|| "inner maximization".into())?;
            let s2 = model_sigma2(&data, &state.beta, cfg.sigma_mode);
            let ev = objective_sym_with(Exec::default(), &data, &state.beta, &critic, &state.noise.xi, s2)
                .context(|| "objective".into())?;
            sq += ev.grad_beta_norm().powi(2);
        }
        points.push(((n as f64).ln(), (sq / reps as f64).sqrt().ln()));
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / points.len() as f64;
    let my = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let norms: Vec<String> = points.iter().map(|p| format!("{:.2e}", p.1.exp())).collect();
    Ok(vec![Grade::check(
        "log-log slope",
        (slope + 0.5).abs() <= 0.15,
        format!("slope {slope:.3} (RMS norms {} at n = 1e3, 1e4, 1e5)", norms.join(", ")),
    )])
}

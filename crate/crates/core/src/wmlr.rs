//! Regularized minimax objective and its gradient descent-ascent solver.
//!
//! The minimizing player is the mixture parameter `beta`; the maximizing player
//! is the critic. Model samples are realized by reparameterization,
//! `y' = beta' x + sigma xi` with standard normals `xi` cached in [`ModelNoise`].

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::critic::{logcosh, psi_k_from_proj, Critic, CriticK, CriticSym};
use crate::error::{check_dim, Error, Result};
use crate::exec::Exec;
use crate::linalg::{all_finite, axpy, dot, norm, norm_sq};
use crate::model::{estimate_sigma2, nll_symmetric, relative_error, Dataset, SIGMA2_FLOOR};
use crate::rng::{indexed_rng, stream_rng, Stream};
use crate::trace::{Trace, TraceRow};

/// Indices of resampled rounds are spaced this far apart.
const ROUND_STRIDE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum SigmaMode {
    Known(f64),
    /// Moment estimate refreshed at every iteration.
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// One noise realization for the whole run.
    #[default]
    Fixed,
    /// Fresh noise after every update.
    Resample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WmlrConfig {
    pub lambda: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub iters: usize,
    pub sigma_mode: SigmaMode,
    #[serde(default)]
    pub noise_mode: NoiseMode,
    /// Standard deviation of the initialization; `1 / sqrt(d)` when absent.
    #[serde(default)]
    pub init_scale: Option<f64>,
    pub seed: u64,
    #[serde(default = "default_ref_iters")]
    pub ref_iters: usize,
    #[serde(default = "default_ref_tol")]
    pub ref_tol: f64,
}

fn default_ref_iters() -> usize {
    200
}

fn default_ref_tol() -> f64 {
    1e-10
}

impl WmlrConfig {
    /// `alpha_max = 1 / (2 lambda)`, `alpha_min = alpha_max / 10`, known `sigma^2 = 1`.
    pub fn heuristic(lambda: f64, iters: usize, seed: u64) -> Self {
        let alpha_max = 1.0 / (2.0 * lambda);
        Self {
            lambda,
            alpha_min: alpha_max / 10.0,
            alpha_max,
            iters,
            sigma_mode: SigmaMode::Known(1.0),
            noise_mode: NoiseMode::Fixed,
            init_scale: None,
            seed,
            ref_iters: default_ref_iters(),
            ref_tol: default_ref_tol(),
        }
    }

    /// Heuristic steps for the penalty `(lambda / 2) ||gamma - gamma_ref||^2`.
    ///
    /// Same step sizes as [`WmlrConfig::heuristic`] but the stored penalty weight is
    /// `lambda / 2`. This is the preset convention used by the experiment harness.
    pub fn half_penalty(lambda: f64, iters: usize, seed: u64) -> Self {
        let mut cfg = Self::heuristic(lambda, iters, seed);
        cfg.lambda = lambda / 2.0;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.lambda > 0.0) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.alpha_min > 0.0 && self.alpha_max > 0.0) {
            return bad("step sizes must be positive".into());
        }
        if let SigmaMode::Known(s) = self.sigma_mode {
            if !(s > 0.0) {
                return bad(format!("sigma2 must be positive, got {s}"));
            }
        }
        if let Some(s) = self.init_scale {
            if !(s >= 0.0) {
                return bad(format!("init_scale must be non-negative, got {s}"));
            }
        }
        Ok(())
    }

    fn init_scale_for(&self, d: usize) -> f64 {
        self.init_scale.unwrap_or(1.0 / (d as f64).sqrt())
    }
}

/// Cached standard normals (and component labels for general `k`) realizing model samples.
///
/// Entry `i` is keyed by the global row `offset + i`, so a shard of a larger
/// dataset sees the same draws as the pooled run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelNoise {
    pub seed: u64,
    pub offset: u64,
    pub round: u64,
    pub k: Option<usize>,
    pub xi: Vec<f64>,
    /// Zero-based component per row; absent for the symmetric solver.
    pub latents: Option<Vec<u32>>,
}

impl ModelNoise {
    pub fn draw(seed: u64, offset: u64, n: usize, k: Option<usize>, round: u64) -> Self {
        let base = round * ROUND_STRIDE + offset;
        let xi = (0..n as u64).map(|i| indexed_rng(seed, Stream::SolverNoise, base + i).sample(StandardNormal)).collect();
        let latents = k.map(|k| {
            (0..n as u64)
                .map(|i| indexed_rng(seed, Stream::SolverLatent, base + i).random_range(0..k as u32))
                .collect()
        });
        Self { seed, offset, round, k, xi, latents }
    }

    pub fn redraw(&self, round: u64) -> Self {
        Self::draw(self.seed, self.offset, self.xi.len(), self.k, round)
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }
}

/// Solver state for the symmetric two-component model.
#[derive(Debug, Clone, PartialEq)]
pub struct WmlrState {
    pub beta: Vec<f64>,
    pub critic: CriticSym,
    pub iter: usize,
    pub noise: ModelNoise,
}

/// Solver state for a general `k`-component model.
#[derive(Debug, Clone, PartialEq)]
pub struct WmlrStateK {
    pub betas: Vec<Vec<f64>>,
    pub critic: CriticK,
    pub iter: usize,
    pub noise: ModelNoise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub value: f64,
    pub data_term: f64,
    pub model_term: f64,
    pub reg_term: f64,
    /// One gradient per component (a single entry for the symmetric model).
    pub grad_beta: Vec<Vec<f64>>,
    pub grad_gammas: Vec<Vec<f64>>,
}

impl ObjectiveEval {
    pub fn grad_beta_norm(&self) -> f64 {
        self.grad_beta.iter().map(|g| norm_sq(g)).sum::<f64>().sqrt()
    }

    pub fn grad_gamma_norm(&self) -> f64 {
        self.grad_gammas.iter().map(|g| norm_sq(g)).sum::<f64>().sqrt()
    }

    fn check_finite(&self, iter: usize) -> Result<()> {
        let ok = self.grad_beta.iter().chain(&self.grad_gammas).all(|g| all_finite(g));
        if ok && self.value.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { what: "gradient", iter })
        }
    }
}

/// `sigma^2` used for model samples in the symmetric solver.
pub fn model_sigma2(data: &Dataset, beta: &[f64], mode: SigmaMode) -> f64 {
    match mode {
        SigmaMode::Known(s) => s,
        SigmaMode::Estimated => estimate_sigma2(data, beta),
    }
}

/// `E[y^2] - mean_j ||beta_j||^2`, the isotropic moment estimate for `k` components.
pub fn model_sigma2_k(data: &Dataset, betas: &[Vec<f64>], mode: SigmaMode) -> f64 {
    match mode {
        SigmaMode::Known(s) => s,
        SigmaMode::Estimated => {
            let mean = betas.iter().map(|b| norm_sq(b)).sum::<f64>() / betas.len() as f64;
            (data.second_moment_y() - mean).max(SIGMA2_FLOOR)
        }
    }
}

/// `y'_i = beta' x_i + sigma xi_i`.
pub fn model_samples(state: &WmlrState, data: &Dataset, sigma2: f64) -> Result<Vec<f64>> {
    check_dim(data.n(), state.noise.len())?;
    let s = sigma2.sqrt();
    Ok((0..data.n()).map(|i| dot(&state.beta, data.x(i)) + s * state.noise.xi[i]).collect())
}

/// `y'_i = beta_{z'_i}' x_i + sigma xi_i`.
pub fn model_samples_k(state: &WmlrStateK, data: &Dataset, sigma2: f64) -> Result<Vec<f64>> {
    check_dim(data.n(), state.noise.len())?;
    let latents = state.noise.latents.as_ref().ok_or_else(|| Error::InvalidParameter("noise lacks latents".into()))?;
    let s = sigma2.sqrt();
    Ok((0..data.n())
        .map(|i| dot(&state.betas[latents[i] as usize], data.x(i)) + s * state.noise.xi[i])
        .collect())
}

pub fn objective_sym(data: &Dataset, state: &WmlrState, cfg: &WmlrConfig) -> Result<ObjectiveEval> {
    let sigma2 = model_sigma2(data, &state.beta, cfg.sigma_mode);
    objective_sym_with(Exec::default(), data, &state.beta, &state.critic, &state.noise.xi, sigma2)
}

/// Symmetric objective for explicit parameters and noise.
pub fn objective_sym_with(
    exec: Exec,
    data: &Dataset,
    beta: &[f64],
    c: &CriticSym,
    xi: &[f64],
    sigma2: f64,
) -> Result<ObjectiveEval> {
    let d = data.d();
    let n = data.n();
    check_dim(d, beta.len())?;
    check_dim(d, c.gamma1.len())?;
    check_dim(n, xi.len())?;
    if n == 0 {
        return Err(Error::InvalidParameter("empty dataset".into()));
    }
    let sigma = sigma2.sqrt();
    let acc = exec.sum_chunks(n, 2 + 3 * d, |acc, i| {
        let x = data.x(i);
        let y = data.y(i);
        let a1 = dot(&c.gamma1, x);
        let a2 = dot(&c.gamma2, x);
        let yp = dot(beta, x) + sigma * xi[i];
        let (t1, t2, s1, s2) = (y * a1, y * a2, yp * a1, yp * a2);
        acc[0] += logcosh(t1) - logcosh(t2);
        acc[1] += logcosh(s1) - logcosh(s2);
        let (h1, h2, k1, k2) = (t1.tanh(), t2.tanh(), s1.tanh(), s2.tanh());
        let c1 = h1 * y - k1 * yp;
        let c2 = -h2 * y + k2 * yp;
        let cb = -(k1 * a1 - k2 * a2);
        let (g1, rest) = acc[2..].split_at_mut(d);
        let (g2, gb) = rest.split_at_mut(d);
        for j in 0..d {
            let v = x[j];
            g1[j] += c1 * v;
            g2[j] += c2 * v;
            gb[j] += cb * v;
        }
    });
    let inv_n = 1.0 / n as f64;
    let data_term = acc[0] * inv_n;
    let model_term = acc[1] * inv_n;
    let reg_term = c.lambda * (crate::linalg::dist_sq(&c.gamma1, &c.gamma_ref) + crate::linalg::dist_sq(&c.gamma2, &c.gamma_ref));
    let two_l = 2.0 * c.lambda;
    let grad = |off: usize, gamma: Option<&[f64]>| -> Vec<f64> {
        (0..d)
            .map(|j| {
                let g = acc[off + j] * inv_n;
                match gamma {
                    Some(gm) => g - two_l * (gm[j] - c.gamma_ref[j]),
                    None => g,
                }
            })
            .collect()
    };
    Ok(ObjectiveEval {
        value: data_term - model_term - reg_term,
        data_term,
        model_term,
        reg_term,
        grad_gammas: vec![grad(2, Some(&c.gamma1)), grad(2 + d, Some(&c.gamma2))],
        grad_beta: vec![grad(2 + 2 * d, None)],
    })
}

pub fn objective_k(data: &Dataset, state: &WmlrStateK, cfg: &WmlrConfig) -> Result<ObjectiveEval> {
    let sigma2 = model_sigma2_k(data, &state.betas, cfg.sigma_mode);
    objective_k_with(Exec::default(), data, &state.betas, &state.critic, &state.noise, sigma2)
}

/// General-`k` objective for explicit parameters and noise.
pub fn objective_k_with(
    exec: Exec,
    data: &Dataset,
    betas: &[Vec<f64>],
    c: &CriticK,
    noise: &ModelNoise,
    sigma2: f64,
) -> Result<ObjectiveEval> {
    let d = data.d();
    let n = data.n();
    let k = c.k();
    check_dim(k, betas.len())?;
    for b in betas {
        check_dim(d, b.len())?;
    }
    check_dim(d, c.dim())?;
    check_dim(n, noise.len())?;
    if n == 0 {
        return Err(Error::InvalidParameter("empty dataset".into()));
    }
    let latents = noise.latents.as_ref().ok_or_else(|| Error::InvalidParameter("noise lacks latents".into()))?;
    if let Some(&bad) = latents.iter().find(|&&z| z as usize >= k) {
        return Err(Error::LabelOutOfRange { label: bad + 1, k });
    }
    let sigma = sigma2.sqrt();
    let ng = 2 * k;
    let acc = exec.sum_chunks(n, 2 + ng * d + k * d, |acc, i| {
        let x = data.x(i);
        let y = data.y(i);
        let z = latents[i] as usize;
        let proj: Vec<f64> = c.gammas.iter().map(|g| dot(g, x)).collect();
        let yp = dot(&betas[z], x) + sigma * noise.xi[i];
        let (vd, cd, _) = psi_k_from_proj(c, &proj, y);
        let (vm, cm, dym) = psi_k_from_proj(c, &proj, yp);
        acc[0] += vd;
        acc[1] += vm;
        for j in 0..ng {
            let off = 2 + j * d;
            axpy(cd[j] - cm[j], x, &mut acc[off..off + d]);
        }
        let off = 2 + ng * d + z * d;
        axpy(-dym, x, &mut acc[off..off + d]);
    });
    let inv_n = 1.0 / n as f64;
    let data_term = acc[0] * inv_n;
    let model_term = acc[1] * inv_n;
    let (reg_term, reg_grads) = crate::critic::regularizer(c);
    let grad_gammas = (0..ng)
        .map(|j| (0..d).map(|l| acc[2 + j * d + l] * inv_n - reg_grads[j][l]).collect())
        .collect();
    let grad_beta = (0..k)
        .map(|z| (0..d).map(|l| acc[2 + ng * d + z * d + l] * inv_n).collect())
        .collect();
    Ok(ObjectiveEval { value: data_term - model_term - reg_term, data_term, model_term, reg_term, grad_beta, grad_gammas })
}

/// Applies one simultaneous descent-ascent update from a precomputed evaluation.
pub fn apply_step(state: &WmlrState, eval: &ObjectiveEval, cfg: &WmlrConfig) -> WmlrState {
    let mut next = state.clone();
    axpy(-cfg.alpha_min, &eval.grad_beta[0], &mut next.beta);
    axpy(cfg.alpha_max, &eval.grad_gammas[0], &mut next.critic.gamma1);
    axpy(cfg.alpha_max, &eval.grad_gammas[1], &mut next.critic.gamma2);
    next.iter += 1;
    if cfg.noise_mode == NoiseMode::Resample {
        next.noise = state.noise.redraw(next.iter as u64);
    }
    next
}

pub fn apply_step_k(state: &WmlrStateK, eval: &ObjectiveEval, cfg: &WmlrConfig) -> WmlrStateK {
    let mut next = state.clone();
    for (b, g) in next.betas.iter_mut().zip(&eval.grad_beta) {
        axpy(-cfg.alpha_min, g, b);
    }
    for (gm, g) in next.critic.gammas.iter_mut().zip(&eval.grad_gammas) {
        axpy(cfg.alpha_max, g, gm);
    }
    next.iter += 1;
    if cfg.noise_mode == NoiseMode::Resample {
        next.noise = state.noise.redraw(next.iter as u64);
    }
    next
}

/// One simultaneous GDA step with all gradients taken at the current state.
pub fn gda_step(state: &WmlrState, data: &Dataset, cfg: &WmlrConfig) -> Result<WmlrState> {
    let eval = objective_sym(data, state, cfg)?;
    eval.check_finite(state.iter)?;
    Ok(apply_step(state, &eval, cfg))
}

pub fn gda_step_k(state: &WmlrStateK, data: &Dataset, cfg: &WmlrConfig) -> Result<WmlrStateK> {
    let eval = objective_k(data, state, cfg)?;
    eval.check_finite(state.iter)?;
    Ok(apply_step_k(state, &eval, cfg))
}

fn gaussian_vec(rng: &mut impl Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Random initialization with the reference vector computed from `data`.
pub fn init_state(data: &Dataset, cfg: &WmlrConfig) -> Result<WmlrState> {
    cfg.validate()?;
    let gamma_ref = reference_vector(data, cfg.ref_iters, cfg.ref_tol)?;
    init_state_with_ref(data.n(), 0, gamma_ref, cfg)
}

/// Random initialization around a given reference vector; noise rows start at `offset`.
pub fn init_state_with_ref(n: usize, offset: u64, gamma_ref: Vec<f64>, cfg: &WmlrConfig) -> Result<WmlrState> {
    let d = gamma_ref.len();
    let s = cfg.init_scale_for(d);
    let mut rng = stream_rng(cfg.seed, Stream::Init);
    let beta = gaussian_vec(&mut rng, d, s);
    let g1 = gaussian_vec(&mut rng, d, s);
    let g2 = gaussian_vec(&mut rng, d, s);
    Ok(WmlrState {
        beta,
        critic: CriticSym::new(g1, g2, gamma_ref, cfg.lambda)?,
        iter: 0,
        noise: ModelNoise::draw(cfg.seed, offset, n, None, 0),
    })
}

/// Random initialization for `k` components. Reference vectors alternate in sign
/// around the top eigenvector of the label-free moment matrix; the critic scale
/// is the configured (or initially estimated) noise variance.
pub fn init_state_k(data: &Dataset, k: usize, cfg: &WmlrConfig) -> Result<WmlrStateK> {
    cfg.validate()?;
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    let d = data.d();
    let top = reference_vector(data, cfg.ref_iters, cfg.ref_tol)?;
    let gamma_ref: Vec<Vec<f64>> =
        (0..k).map(|i| if i % 2 == 0 { top.clone() } else { top.iter().map(|v| -v).collect() }).collect();
    let s = cfg.init_scale_for(d);
    let mut rng = stream_rng(cfg.seed, Stream::Init);
    let betas: Vec<Vec<f64>> = (0..k).map(|_| gaussian_vec(&mut rng, d, s)).collect();
    let gammas = (0..2 * k).map(|_| gaussian_vec(&mut rng, d, s)).collect();
    let sigma2 = model_sigma2_k(data, &betas, cfg.sigma_mode);
    Ok(WmlrStateK {
        betas,
        critic: CriticK::new(gammas, gamma_ref, cfg.lambda, sigma2)?,
        iter: 0,
        noise: ModelNoise::draw(cfg.seed, 0, data.n(), Some(k), 0),
    })
}

fn trace_row(
    t: usize,
    eval: &ObjectiveEval,
    beta_star: Option<&[f64]>,
    nll: impl FnOnce() -> Result<Option<f64>>,
    rel: impl FnOnce(&[f64]) -> Result<f64>,
    start: Instant,
) -> Result<TraceRow> {
    let (rel_err, nll) = match beta_star {
        Some(b) => (Some(rel(b)?), nll()?),
        None => (None, None),
    };
    Ok(TraceRow {
        iter: t,
        objective: eval.value,
        data_term: eval.data_term,
        model_term: eval.model_term,
        reg_term: eval.reg_term,
        grad_beta_norm: eval.grad_beta_norm(),
        rel_err,
        nll,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Runs `cfg.iters` GDA steps. The trace has one row per visited iterate
/// (`iters + 1` rows); error and likelihood columns are filled when `beta_star` is given.
pub fn run_wmlr(
    data: &Dataset,
    cfg: &WmlrConfig,
    init: Option<WmlrState>,
    beta_star: Option<&[f64]>,
) -> Result<(WmlrState, Trace)> {
    run_wmlr_with(Exec::default(), data, cfg, init, beta_star)
}

pub fn run_wmlr_with(
    exec: Exec,
    data: &Dataset,
    cfg: &WmlrConfig,
    init: Option<WmlrState>,
    beta_star: Option<&[f64]>,
) -> Result<(WmlrState, Trace)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut state = match init {
        Some(s) => {
            check_dim(data.d(), s.beta.len())?;
            check_dim(data.n(), s.noise.len())?;
            s
        }
        None => init_state(data, cfg)?,
    };
    let mut trace = Trace::default();
    for t in 0..=cfg.iters {
        let sigma2 = model_sigma2(data, &state.beta, cfg.sigma_mode);
        let eval = objective_sym_with(exec, data, &state.beta, &state.critic, &state.noise.xi, sigma2)?;
        let beta = &state.beta;
        let row = trace_row(
            t,
            &eval,
            beta_star,
            || nll_symmetric(data, beta, sigma2).map(Some),
            |b| relative_error(beta, b, true),
            start,
        )?;
        trace.rows.push(row);
        if t == cfg.iters {
            break;
        }
        eval.check_finite(state.iter)?;
        state = apply_step(&state, &eval, cfg);
    }
    Ok((state, trace))
}

/// General-`k` solver. `beta_star` holds the true components; the error column is
/// the relative error under the best matching of components.
pub fn run_wmlr_k(
    data: &Dataset,
    k: usize,
    cfg: &WmlrConfig,
    init: Option<WmlrStateK>,
    beta_star: Option<&[Vec<f64>]>,
) -> Result<(WmlrStateK, Trace)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut state = match init {
        Some(s) => s,
        None => init_state_k(data, k, cfg)?,
    };
    let mut trace = Trace::default();
    for t in 0..=cfg.iters {
        let sigma2 = model_sigma2_k(data, &state.betas, cfg.sigma_mode);
        let eval = objective_k_with(Exec::default(), data, &state.betas, &state.critic, &state.noise, sigma2)?;
        let rel_err = beta_star.map(|bs| matched_relative_error(&state.betas, bs)).transpose()?;
        trace.rows.push(TraceRow {
            iter: t,
            objective: eval.value,
            data_term: eval.data_term,
            model_term: eval.model_term,
            reg_term: eval.reg_term,
            grad_beta_norm: eval.grad_beta_norm(),
            rel_err,
            nll: None,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if t == cfg.iters {
            break;
        }
        eval.check_finite(state.iter)?;
        state = apply_step_k(&state, &eval, cfg);
    }
    Ok((state, trace))
}

/// `sqrt(sum_j ||b_pi(j) - b*_j||^2 / sum_j ||b*_j||^2)` minimized over permutations `pi`.
pub fn matched_relative_error(betas: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    check_dim(truth.len(), betas.len())?;
    let scale: f64 = truth.iter().map(|b| norm_sq(b)).sum();
    if scale == 0.0 {
        return Err(Error::InvalidParameter("ground truth has zero norm".into()));
    }
    let k = truth.len();
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let e: f64 = p.iter().enumerate().map(|(j, &i)| crate::linalg::dist_sq(&betas[i], &truth[j])).sum();
        best = best.min(e);
    });
    Ok((best / scale).sqrt())
}

fn permute(p: &mut Vec<usize>, at: usize, f: &mut impl FnMut(&[usize])) {
    if at == p.len() {
        f(p);
        return;
    }
    for i in at..p.len() {
        p.swap(at, i);
        permute(p, at + 1, f);
        p.swap(at, i);
    }
}

/// Ascends the critic with `beta` held fixed until the critic gradient norm drops
/// below `tol` or `max_iters` steps pass. Returns the critic and the steps taken.
pub fn maximize_critic(
    data: &Dataset,
    state: &WmlrState,
    cfg: &WmlrConfig,
    max_iters: usize,
    tol: f64,
) -> Result<(CriticSym, usize)> {
    let sigma2 = model_sigma2(data, &state.beta, cfg.sigma_mode);
    let mut c = state.critic.clone();
    for it in 0..max_iters {
        let eval = objective_sym_with(Exec::default(), data, &state.beta, &c, &state.noise.xi, sigma2)?;
        eval.check_finite(it)?;
        if eval.grad_gamma_norm() < tol {
            return Ok((c, it));
        }
        axpy(cfg.alpha_max, &eval.grad_gammas[0], &mut c.gamma1);
        axpy(cfg.alpha_max, &eval.grad_gammas[1], &mut c.gamma2);
    }
    Ok((c, max_iters))
}

/// `(1/n) sum_i y_i^2 (x_i' v) x_i` without forming the matrix.
pub fn moment_matvec(exec: Exec, data: &Dataset, v: &[f64]) -> Vec<f64> {
    let n = data.n().max(1) as f64;
    let mut out = exec.sum_chunks(data.n(), data.d(), |acc, i| {
        let x = data.x(i);
        let y = data.y(i);
        axpy(y * y * dot(x, v), x, acc);
    });
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Diagonal of the moment matrix, the deterministic power-iteration start.
pub fn moment_diagonal(exec: Exec, data: &Dataset) -> Vec<f64> {
    let n = data.n().max(1) as f64;
    let mut out = exec.sum_chunks(data.n(), data.d(), |acc, i| {
        let x = data.x(i);
        let y2 = data.y(i) * data.y(i);
        for (a, v) in acc.iter_mut().zip(x) {
            *a += y2 * v * v;
        }
    });
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Flips `v` so that its first coordinate of magnitude above `1e-12` is positive.
pub fn fix_sign(v: &mut [f64]) {
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Normalized power iteration from `start`. Returns the vector and the number of products used.
pub fn power_iteration(
    start: &[f64],
    iters: usize,
    tol: f64,
    mut matvec: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<(Vec<f64>, usize)> {
    let s = norm(start);
    if !(s > 0.0) {
        return Err(Error::ZeroMomentMatrix);
    }
    let mut v: Vec<f64> = start.iter().map(|x| x / s).collect();
    fix_sign(&mut v);
    for it in 1..=iters {
        let mut w = matvec(&v)?;
        let nw = norm(&w);
        if !(nw > 0.0) {
            return Err(Error::ZeroMomentMatrix);
        }
        w.iter_mut().for_each(|x| *x /= nw);
        fix_sign(&mut w);
        let delta = crate::linalg::dist_sq(&w, &v).sqrt();
        v = w;
        if delta < tol {
            return Ok((v, it));
        }
    }
    Ok((v, iters))
}

/// Top eigenvector of `(1/n) sum_i y_i^2 x_i x_i'`, sign-normalized.
pub fn reference_vector(data: &Dataset, iters: usize, tol: f64) -> Result<Vec<f64>> {
    if data.n() == 0 {
        return Err(Error::InvalidParameter("empty dataset".into()));
    }
    let exec = Exec::default();
    let diag = moment_diagonal(exec, data);
    Ok(power_iteration(&diag, iters, tol, |v| Ok(moment_matvec(exec, data, v)))?.0)
}

/// Step sizes and constants from the smoothness analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryStepSizes {
    pub eta: f64,
    pub l_smooth: f64,
    pub kappa: f64,
    pub alpha_max: f64,
    pub alpha_min: f64,
    /// `lambda > 2 eta`.
    pub valid: bool,
}

pub fn theory_stepsizes(data: &Dataset, lambda: f64, gamma_ref: &[f64]) -> TheoryStepSizes {
    let c = data.max_x_norm();
    let eta = c * c * data.second_moment_y();
    theory_stepsizes_from(eta, lambda, norm(gamma_ref))
}

pub fn theory_stepsizes_from(eta: f64, lambda: f64, ref_norm: f64) -> TheoryStepSizes {
    let l_smooth = lambda + 4.0 * eta * (1.0 + eta / lambda + ref_norm);
    let kappa = l_smooth / (lambda - 2.0 * eta);
    TheoryStepSizes {
        eta,
        l_smooth,
        kappa,
        alpha_max: 1.0 / l_smooth,
        alpha_min: 1.0 / (kappa * kappa * l_smooth),
        valid: lambda > 2.0 * eta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_dataset, GenConfig, MlrParams, XLaw};

    fn sample(n: usize, d: usize, snr: f64, seed: u64) -> (Dataset, Vec<f64>) {
        let cfg = GenConfig { n, d, snr, sigma2: 1.0, x_law: XLaw::StandardNormal, seed };
        let p = cfg.symmetric_params().unwrap();
        let beta = p.symmetric_beta().unwrap().to_vec();
        (generate_dataset(&cfg, &p).unwrap(), beta)
    }

    #[test]
    fn reference_vector_axis_cases() {
        let e1 = Dataset::from_rows(&vec![vec![1.0, 0.0, 0.0]; 4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(reference_vector(&e1, 200, 1e-10).unwrap(), vec![1.0, 0.0, 0.0]);
        // M = diag(3, 1)
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let data = Dataset::from_rows(&rows, vec![6f64.sqrt(), 2f64.sqrt()]).unwrap();
        let v = reference_vector(&data, 200, 1e-10).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-9 && v[1].abs() < 1e-9);
        let zero = Dataset::from_rows(&rows, vec![0.0, 0.0]).unwrap();
        assert!(matches!(reference_vector(&zero, 200, 1e-10), Err(Error::ZeroMomentMatrix)));
    }

    #[test]
    fn model_samples_contract() {
        let (data, _) = sample(50, 3, 1.0, 1);
        let cfg = WmlrConfig::heuristic(0.5, 1, 9);
        let mut st = init_state(&data, &cfg).unwrap();
        st.beta = vec![0.0; 3];
        assert!(model_samples(&st, &data, 1e-300).unwrap().iter().all(|v| v.abs() < 1e-140));
        assert_eq!(model_samples(&st, &data, 1.0).unwrap(), model_samples(&st, &data, 1.0).unwrap());
    }

    #[test]
    fn equal_gammas_give_zero_beta_gradient() {
        let (data, _) = sample(300, 4, 2.0, 2);
        let cfg = WmlrConfig::heuristic(0.5, 1, 3);
        let mut st = init_state(&data, &cfg).unwrap();
        st.critic.gamma2 = st.critic.gamma1.clone();
        let e = objective_sym(&data, &st, &cfg).unwrap();
        assert_eq!(e.data_term, 0.0);
        assert_eq!(e.model_term, 0.0);
        assert!((e.value + e.reg_term).abs() < 1e-15);
        assert!(e.grad_beta[0].iter().all(|g| *g == 0.0));
    }

    #[test]
    fn decomposition_identity() {
        let (data, _) = sample(500, 5, 3.0, 4);
        let cfg = WmlrConfig::heuristic(0.4, 1, 5);
        let st = init_state(&data, &cfg).unwrap();
        let e = objective_sym(&data, &st, &cfg).unwrap();
        assert!((e.value - (e.data_term - e.model_term - e.reg_term)).abs() < 1e-10);
    }

    #[test]
    fn gda_step_cases() {
        let (data, _) = sample(200, 3, 2.0, 6);
        let mut cfg = WmlrConfig::heuristic(0.5, 1, 7);
        let st = init_state(&data, &cfg).unwrap();
        let a = gda_step(&st, &data, &cfg).unwrap();
        let b = gda_step(&st, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter, 1);
        cfg.alpha_min = 0.0;
        let frozen = gda_step(&st, &data, &cfg).unwrap();
        assert_eq!(frozen.beta, st.beta);
        assert_ne!(frozen.critic.gamma1, st.critic.gamma1);

        // zero gradients: gammas at the reference with equal gammas and beta orthogonal to everything
        let zero_data = Dataset::from_rows(&vec![vec![0.0, 0.0, 0.0]; 3], vec![0.0; 3]).unwrap();
        let mut z = st.clone();
        z.noise = ModelNoise::draw(1, 0, 3, None, 0);
        z.critic.gamma1 = z.critic.gamma_ref.clone();
        z.critic.gamma2 = z.critic.gamma_ref.clone();
        let next = gda_step(&z, &zero_data, &cfg).unwrap();
        assert_eq!((next.beta.clone(), next.critic.clone()), (z.beta.clone(), z.critic.clone()));
    }

    #[test]
    fn non_finite_gradient_reports_iteration() {
        let (data, _) = sample(20, 2, 1.0, 8);
        let cfg = WmlrConfig::heuristic(0.5, 1, 9);
        let mut st = init_state(&data, &cfg).unwrap();
        st.iter = 17;
        st.beta[0] = f64::NAN;
        assert!(matches!(gda_step(&st, &data, &cfg), Err(Error::NonFinite { iter: 17, .. })));
    }

    #[test]
    fn zero_iterations_return_initialization() {
        let (data, _) = sample(100, 3, 2.0, 10);
        let mut cfg = WmlrConfig::heuristic(0.5, 0, 11);
        cfg.iters = 0;
        let init = init_state(&data, &cfg).unwrap();
        let (out, trace) = run_wmlr(&data, &cfg, None, None).unwrap();
        assert_eq!(out, init);
        assert_eq!(trace.rows.len(), 1);
    }

    #[test]
    fn theory_stepsize_limits() {
        let t = theory_stepsizes_from(0.0, 2.0, 1.0);
        assert_eq!((t.l_smooth, t.kappa, t.alpha_max), (2.0, 1.0, 0.5));
        assert!(t.valid);
        assert!(!theory_stepsizes_from(0.5, 1.0, 1.0).valid);
        assert!(theory_stepsizes_from(0.49, 1.0, 1.0).valid);
    }

    #[test]
    fn resample_mode_changes_noise() {
        let (data, _) = sample(40, 2, 1.0, 12);
        let mut cfg = WmlrConfig::heuristic(0.5, 2, 13);
        let st = init_state(&data, &cfg).unwrap();
        assert_eq!(gda_step(&st, &data, &cfg).unwrap().noise, st.noise);
        cfg.noise_mode = NoiseMode::Resample;
        assert_ne!(gda_step(&st, &data, &cfg).unwrap().noise.xi, st.noise.xi);
    }

    #[test]
    fn matched_error_ignores_order() {
        let truth = vec![vec![1.0, 0.0], vec![0.0, 2.0]];
        let est = vec![vec![0.0, 2.0], vec![1.0, 0.0]];
        assert_eq!(matched_relative_error(&est, &truth).unwrap(), 0.0);
        let p = MlrParams::new(truth.clone(), 1.0).unwrap();
        assert_eq!(p.k(), 2);
    }
}

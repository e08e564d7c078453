//! EM and gradient-EM for the symmetric two-component model.
//!
//! With `h_i = tanh(y_i beta' x_i / sigma^2) = 2 w_i - 1` the weighted squared
//! residual simplifies to `y^2 + (b'x)^2 - 2 h y b'x`, which is what every
//! routine below evaluates. The form is exactly odd in `beta`, so runs started
//! from `beta` and `-beta` mirror each other bit for bit.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::exec::Exec;
use crate::linalg::{all_finite, dot, norm};
use crate::model::{nll_symmetric, relative_error, Dataset, SIGMA2_FLOOR};
use crate::rng::{stream_rng, Stream};
use crate::trace::{Trace, TraceRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmState {
    pub beta: Vec<f64>,
    pub sigma2: f64,
}

impl EmState {
    pub fn new(beta: Vec<f64>, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma2 must be positive, got {sigma2}")));
        }
        Ok(Self { beta, sigma2 })
    }

    /// `beta ~ N(0, I / d)` from the initialization stream of `seed`.
    pub fn random(d: usize, sigma2: f64, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, Stream::Init);
        let s = 1.0 / (d.max(1) as f64).sqrt();
        Self::new((0..d).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect(), sigma2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GemConfig {
    pub alpha: f64,
    pub iters: usize,
    #[serde(default = "default_floor")]
    pub sigma2_floor: f64,
}

fn default_floor() -> f64 {
    SIGMA2_FLOOR
}

impl GemConfig {
    pub fn new(alpha: f64, iters: usize) -> Self {
        Self { alpha, iters, sigma2_floor: SIGMA2_FLOOR }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.sigma2_floor > 0.0) {
            return Err(Error::InvalidParameter("sigma2_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Covariance of `x` used by the closed-form M-step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SigmaX {
    Identity,
    /// Row-major `d x d` matrix.
    Known(Vec<f64>),
    /// `(1/n) sum_i x_i x_i'`.
    #[default]
    Empirical,
}

/// Factorized covariance ready for repeated solves.
#[derive(Debug, Clone)]
pub enum CovSolver {
    Identity,
    Cholesky(Cholesky<f64, Dyn>),
}

impl CovSolver {
    pub fn prepare(sigma_x: &SigmaX, data: &Dataset) -> Result<Self> {
        let d = data.d();
        let m = match sigma_x {
            SigmaX::Identity => return Ok(CovSolver::Identity),
            SigmaX::Known(v) => {
                check_dim(d * d, v.len())?;
                DMatrix::from_row_slice(d, d, v)
            }
            SigmaX::Empirical => empirical_covariance(data),
        };
        let chol = Cholesky::new(m).ok_or(Error::SingularCovariance)?;
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        if !(lo * lo > 1e-12 * hi * hi) {
            return Err(Error::SingularCovariance);
        }
        Ok(CovSolver::Cholesky(chol))
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        match self {
            CovSolver::Identity => rhs.to_vec(),
            CovSolver::Cholesky(c) => c.solve(&DVector::from_column_slice(rhs)).as_slice().to_vec(),
        }
    }
}

/// `(1/n) X'X`, accumulated over fixed row blocks.
pub fn empirical_covariance(data: &Dataset) -> DMatrix<f64> {
    const BLOCK: usize = 4096;
    let (n, d) = (data.n(), data.d());
    let mut acc = DMatrix::<f64>::zeros(d, d);
    let mut start = 0;
    while start < n {
        let end = (start + BLOCK).min(n);
        let x = DMatrix::from_row_slice(end - start, d, &data.xs()[start * d..end * d]);
        acc += x.tr_mul(&x);
        start = end;
    }
    acc / n.max(1) as f64
}

fn check_state(s: &EmState, data: &Dataset) -> Result<()> {
    check_dim(data.d(), s.beta.len())?;
    if !(s.sigma2 > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma2 must be positive, got {}", s.sigma2)));
    }
    Ok(())
}

/// Posterior weight of the `+beta` component for every sample.
pub fn e_weights(state: &EmState, data: &Dataset) -> Vec<f64> {
    (0..data.n())
        .map(|i| {
            let t = 2.0 * data.y(i) * dot(&state.beta, data.x(i)) / state.sigma2;
            1.0 / (1.0 + (-t).exp())
        })
        .collect()
}

/// Per-sample sums for `new` given weights from `old`:
/// `[sum S_i, sum (h_i y_i - new.beta' x_i) x_i]` with `S_i` the weighted squared residual.
fn residual_sums(exec: Exec, new: &EmState, old: &EmState, data: &Dataset) -> Vec<f64> {
    let d = data.d();
    exec.sum_chunks(data.n(), 1 + d, |acc, i| {
        let x = data.x(i);
        let y = data.y(i);
        let h = (y * dot(&old.beta, x) / old.sigma2).tanh();
        let b = dot(&new.beta, x);
        acc[0] += y * y + b * b - 2.0 * h * y * b;
        let c = h * y - b;
        for (a, v) in acc[1..].iter_mut().zip(x) {
            *a += c * v;
        }
    })
}

pub fn q_function(new: &EmState, old: &EmState, data: &Dataset) -> Result<f64> {
    check_state(new, data)?;
    check_state(old, data)?;
    let n = data.n() as f64;
    let s = residual_sums(Exec::default(), new, old, data)[0];
    Ok(-0.5 * new.sigma2.ln() - s / (2.0 * new.sigma2 * n))
}

/// Gradients of `q_function` in `new.beta` and `new.sigma2`.
pub fn gem_grads(new: &EmState, old: &EmState, data: &Dataset) -> Result<(Vec<f64>, f64)> {
    check_state(new, data)?;
    check_state(old, data)?;
    let n = data.n() as f64;
    let acc = residual_sums(Exec::default(), new, old, data);
    let s2 = new.sigma2;
    let d_beta = acc[1..].iter().map(|v| v / (s2 * n)).collect();
    let d_sigma2 = acc[0] / (2.0 * s2 * s2 * n) - 1.0 / (2.0 * s2);
    Ok((d_beta, d_sigma2))
}

/// Closed-form maximizer of `q_function(., old)`.
pub fn m_step(old: &EmState, data: &Dataset, solver: &CovSolver) -> Result<EmState> {
    check_state(old, data)?;
    let n = data.n() as f64;
    let d = data.d();
    let rhs: Vec<f64> = Exec::default()
        .sum_chunks(data.n(), d, |acc, i| {
            let x = data.x(i);
            let y = data.y(i);
            let h = (y * dot(&old.beta, x) / old.sigma2).tanh();
            for (a, v) in acc.iter_mut().zip(x) {
                *a += h * y * v;
            }
        })
        .into_iter()
        .map(|v| v / n)
        .collect();
    let beta = solver.solve(&rhs);
    if !all_finite(&beta) {
        return Err(Error::SingularCovariance);
    }
    let probe = EmState { beta, sigma2: 1.0 };
    let s = residual_sums(Exec::default(), &probe, old, data)[0];
    Ok(EmState { beta: probe.beta, sigma2: (s / n).max(SIGMA2_FLOOR) })
}

/// One projected ascent step on `q_function(., old)` starting from `new`.
pub fn gem_step(new: &EmState, old: &EmState, data: &Dataset, alpha: f64, floor: f64) -> Result<EmState> {
    let (d_beta, d_sigma2) = gem_grads(new, old, data)?;
    let beta = new.beta.iter().zip(&d_beta).map(|(b, g)| b + alpha * g).collect();
    Ok(EmState { beta, sigma2: (new.sigma2 + alpha * d_sigma2).max(floor) })
}

fn em_row(t: usize, state: &EmState, data: &Dataset, beta_star: Option<&[f64]>, start: Instant) -> Result<TraceRow> {
    let q = q_function(state, state, data)?;
    let (d_beta, _) = gem_grads(state, state, data)?;
    let (rel_err, nll) = match beta_star {
        Some(b) => (Some(relative_error(&state.beta, b, true)?), Some(nll_symmetric(data, &state.beta, state.sigma2)?)),
        None => (None, None),
    };
    Ok(TraceRow {
        iter: t,
        objective: q,
        data_term: q,
        model_term: 0.0,
        reg_term: 0.0,
        grad_beta_norm: norm(&d_beta),
        rel_err,
        nll,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

fn check_finite(s: &EmState, iter: usize) -> Result<()> {
    if all_finite(&s.beta) && s.sigma2.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { what: "EM iterate", iter })
    }
}

/// `iters` full EM iterations. The objective column holds `Q(state_t, state_t)`.
pub fn run_em(
    data: &Dataset,
    init: EmState,
    iters: usize,
    sigma_x: &SigmaX,
    beta_star: Option<&[f64]>,
) -> Result<(EmState, Trace)> {
    check_state(&init, data)?;
    let start = Instant::now();
    let solver = CovSolver::prepare(sigma_x, data)?;
    let mut state = init;
    let mut trace = Trace::default();
    for t in 0..=iters {
        trace.rows.push(em_row(t, &state, data, beta_star, start)?);
        if t == iters {
            break;
        }
        state = m_step(&state, data, &solver)?;
        check_finite(&state, t)?;
    }
    Ok((state, trace))
}

/// `cfg.iters` single ascent steps on the current `Q(., state_t)`.
pub fn run_gem(data: &Dataset, init: EmState, cfg: &GemConfig, beta_star: Option<&[f64]>) -> Result<(EmState, Trace)> {
    check_state(&init, data)?;
    cfg.validate()?;
    let start = Instant::now();
    let mut state = init;
    let mut trace = Trace::default();
    for t in 0..=cfg.iters {
        trace.rows.push(em_row(t, &state, data, beta_star, start)?);
        if t == cfg.iters {
            break;
        }
        state = gem_step(&state, &state, data, cfg.alpha, cfg.sigma2_floor)?;
        check_finite(&state, t)?;
    }
    Ok((state, trace))
}

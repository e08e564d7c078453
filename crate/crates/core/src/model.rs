//! Generative model, synthetic data, posteriors and evaluation metrics.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::exec::Exec;
use crate::linalg::{dot, norm, norm_sq};
use crate::rng::{indexed_rng, stream_rng, Stream};

/// Lower clamp for every variance estimate in the crate.
pub const SIGMA2_FLOOR: f64 = 1e-8;

/// Rejection attempts per sample before the bounded input law gives up.
const MAX_REJECTIONS: usize = 1_000_000;

/// `k` regression vectors sharing one noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlrParams {
    betas: Vec<Vec<f64>>,
    sigma2: f64,
}

impl MlrParams {
    pub fn new(betas: Vec<Vec<f64>>, sigma2: f64) -> Result<Self> {
        let d = betas.first().map(Vec::len).unwrap_or(0);
        if betas.is_empty() || d == 0 {
            return Err(Error::InvalidParameter("need k >= 1 and d >= 1".into()));
        }
        for b in &betas {
            check_dim(d, b.len())?;
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidParameter(format!("sigma2 must be positive, got {sigma2}")));
        }
        Ok(Self { betas, sigma2 })
    }

    /// Symmetric two-component model `(beta, -beta)`.
    pub fn symmetric(beta: Vec<f64>, sigma2: f64) -> Result<Self> {
        let neg = beta.iter().map(|v| -v).collect();
        Self::new(vec![beta, neg], sigma2)
    }

    pub fn k(&self) -> usize {
        self.betas.len()
    }

    pub fn d(&self) -> usize {
        self.betas[0].len()
    }

    pub fn betas(&self) -> &[Vec<f64>] {
        &self.betas
    }

    pub fn beta(&self, j: usize) -> &[f64] {
        &self.betas[j]
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// `Some(beta_1)` when `k = 2` and `beta_2 = -beta_1` exactly.
    pub fn symmetric_beta(&self) -> Option<&[f64]> {
        if self.k() == 2 && self.betas[0].iter().zip(&self.betas[1]).all(|(a, b)| *a == -*b) {
            Some(&self.betas[0])
        } else {
            None
        }
    }
}

/// Law of the input vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum XLaw {
    /// `N(0, I_d)`.
    #[default]
    StandardNormal,
    /// `N(0, I_d)` conditioned on `||x|| <= radius` (rejection sampling).
    BoundedNormal { radius: f64 },
}

impl XLaw {
    pub fn norm_bound(&self) -> Option<f64> {
        match self {
            XLaw::StandardNormal => None,
            XLaw::BoundedNormal { radius } => Some(*radius),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n: usize,
    pub d: usize,
    /// Norm of the ground-truth regressor.
    pub snr: f64,
    pub sigma2: f64,
    #[serde(default)]
    pub x_law: XLaw,
    pub seed: u64,
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::InvalidParameter("n and d must be >= 1".into()));
        }
        if !(self.snr > 0.0) {
            return Err(Error::InvalidParameter(format!("snr must be positive, got {}", self.snr)));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if let XLaw::BoundedNormal { radius } = self.x_law {
            if !(radius > 0.0) {
                return Err(Error::InvalidParameter("norm bound must be positive".into()));
            }
        }
        Ok(())
    }

    /// Ground truth drawn uniformly from the sphere of radius `snr`.
    pub fn draw_beta_star(&self) -> Vec<f64> {
        let mut rng = stream_rng(self.seed, Stream::GroundTruth);
        loop {
            let v: Vec<f64> = (0..self.d).map(|_| rng.sample(StandardNormal)).collect();
            let r = norm(&v);
            if r > 0.0 {
                return v.iter().map(|x| x * self.snr / r).collect();
            }
        }
    }

    /// Symmetric two-component model with a freshly drawn ground truth.
    pub fn symmetric_params(&self) -> Result<MlrParams> {
        self.validate()?;
        MlrParams::symmetric(self.draw_beta_star(), self.sigma2)
    }
}

/// Observed pairs `(x_i, y_i)`, optionally with the latent labels `z_i` in `1..=k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    d: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
    zs: Option<Vec<u32>>,
}

impl Dataset {
    /// `xs` is row-major with `ys.len()` rows of width `d`.
    pub fn new(d: usize, xs: Vec<f64>, ys: Vec<f64>, zs: Option<Vec<u32>>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("d must be >= 1".into()));
        }
        check_dim(ys.len() * d, xs.len())?;
        if let Some(z) = &zs {
            check_dim(ys.len(), z.len())?;
        }
        Ok(Self { d, xs, ys, zs })
    }

    pub fn from_rows(rows: &[Vec<f64>], ys: Vec<f64>) -> Result<Self> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        for r in rows {
            check_dim(d, r.len())?;
        }
        Self::new(d, rows.concat(), ys, None)
    }

    pub fn n(&self) -> usize {
        self.ys.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn y(&self, i: usize) -> f64 {
        self.ys[i]
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn zs(&self) -> Option<&[u32]> {
        self.zs.as_deref()
    }

    pub fn without_labels(mut self) -> Self {
        self.zs = None;
        self
    }

    /// Empirical `E[y^2]`.
    pub fn second_moment_y(&self) -> f64 {
        Exec::default().sum_chunks(self.n(), 1, |acc, i| acc[0] += self.ys[i] * self.ys[i])[0]
            / self.n() as f64
    }

    /// Largest input norm.
    pub fn max_x_norm(&self) -> f64 {
        (0..self.n()).map(|i| norm(self.x(i))).fold(0.0, f64::max)
    }

    /// Concatenates datasets of equal width. Labels survive only if all parts carry them.
    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let d = parts
            .first()
            .map(|p| p.d)
            .ok_or_else(|| Error::InvalidParameter("nothing to concatenate".into()))?;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut zs = Some(Vec::new());
        for p in parts {
            check_dim(d, p.d)?;
            xs.extend_from_slice(&p.xs);
            ys.extend_from_slice(&p.ys);
            zs = match (zs, &p.zs) {
                (Some(mut acc), Some(z)) => {
                    acc.extend_from_slice(z);
                    Some(acc)
                }
                _ => None,
            };
        }
        Dataset::new(d, xs, ys, zs)
    }

    /// Rows `start..end` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        Dataset {
            d: self.d,
            xs: self.xs[start * self.d..end * self.d].to_vec(),
            ys: self.ys[start..end].to_vec(),
            zs: self.zs.as_ref().map(|z| z[start..end].to_vec()),
        }
    }
}

fn draw_x(seed: u64, law: XLaw, d: usize, index: u64) -> Result<Vec<f64>> {
    let mut rng = indexed_rng(seed, Stream::DataX, index);
    let mut x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    if let XLaw::BoundedNormal { radius } = law {
        let mut tries = 0;
        while norm(&x) > radius {
            tries += 1;
            if tries > MAX_REJECTIONS {
                return Err(Error::InvalidParameter(format!(
                    "norm bound {radius} is too small for d = {d}"
                )));
            }
            x.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        }
    }
    Ok(x)
}

fn draw_noise(seed: u64, sigma2: f64, index: u64) -> f64 {
    let e: f64 = indexed_rng(seed, Stream::DataNoise, index).sample(StandardNormal);
    sigma2.sqrt() * e
}

fn check_gen(cfg: &GenConfig, params: &MlrParams) -> Result<()> {
    if cfg.n == 0 {
        return Err(Error::InvalidParameter("n must be >= 1".into()));
    }
    check_dim(params.d(), cfg.d)?;
    if !(cfg.sigma2 > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma2 must be positive, got {}", cfg.sigma2)));
    }
    Ok(())
}

/// Draws `cfg.n` samples from `params`; labels are retained.
///
/// Sample `i` depends only on `(cfg.seed, i)`, so datasets with different `n`
/// share their common prefix.
pub fn generate_dataset(cfg: &GenConfig, params: &MlrParams) -> Result<Dataset> {
    check_gen(cfg, params)?;
    let rows = Exec::default().map(cfg.n, |i| -> Result<(Vec<f64>, f64, u32)> {
        let i = i as u64;
        let x = draw_x(cfg.seed, cfg.x_law, cfg.d, i)?;
        let z = indexed_rng(cfg.seed, Stream::DataLatent, i).random_range(0..params.k());
        let y = dot(params.beta(z), &x) + draw_noise(cfg.seed, params.sigma2(), i);
        Ok((x, y, z as u32 + 1))
    });
    assemble(cfg.d, rows)
}

fn assemble(d: usize, rows: Vec<Result<(Vec<f64>, f64, u32)>>) -> Result<Dataset> {
    let mut xs = Vec::with_capacity(rows.len() * d);
    let mut ys = Vec::with_capacity(rows.len());
    let mut zs = Vec::with_capacity(rows.len());
    for r in rows {
        let (x, y, z) = r?;
        xs.extend_from_slice(&x);
        ys.push(y);
        zs.push(z);
    }
    Dataset::new(d, xs, ys, Some(zs))
}

/// How latent labels are assigned across agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterMode {
    /// Each sample draws its own label; shards partition one centralized draw.
    PerSample,
    /// Each agent draws one sign `z_m` shared by all of its samples (symmetric `k = 2`).
    #[default]
    PerAgent,
}

/// Agent-local shards plus, under [`ClusterMode::PerAgent`], the agent labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedDataset {
    pub shards: Vec<Dataset>,
    pub assignment: Option<Vec<u32>>,
}

impl FederatedDataset {
    pub fn agents(&self) -> usize {
        self.shards.len()
    }

    pub fn total_n(&self) -> usize {
        self.shards.iter().map(Dataset::n).sum()
    }

    /// First global row of each shard in the pooled ordering.
    pub fn row_starts(&self) -> Vec<usize> {
        self.shards
            .iter()
            .scan(0, |acc, s| {
                let start = *acc;
                *acc += s.n();
                Some(start)
            })
            .collect()
    }

    pub fn pooled(&self) -> Result<Dataset> {
        Dataset::concat(&self.shards)
    }

    /// Splits `data` into consecutive shards of the given sizes.
    pub fn from_sizes(data: &Dataset, sizes: &[usize]) -> Result<Self> {
        check_dim(data.n(), sizes.iter().sum())?;
        let mut start = 0;
        let shards = sizes
            .iter()
            .map(|&s| {
                let shard = data.slice(start, start + s);
                start += s;
                shard
            })
            .collect();
        Ok(Self { shards, assignment: None })
    }
}

/// Generates `agents` shards of `per_agent_n` samples each.
///
/// Global row `m * per_agent_n + j` uses the same input and noise draws as row
/// `m * per_agent_n + j` of [`generate_dataset`] with `n = agents * per_agent_n`.
pub fn generate_federated(
    cfg: &GenConfig,
    params: &MlrParams,
    agents: usize,
    per_agent_n: usize,
    mode: ClusterMode,
) -> Result<FederatedDataset> {
    if agents == 0 || per_agent_n == 0 {
        return Err(Error::InvalidParameter("agent count and per-agent size must be >= 1".into()));
    }
    let total = GenConfig { n: agents * per_agent_n, ..cfg.clone() };
    match mode {
        ClusterMode::PerSample => {
            let data = generate_dataset(&total, params)?;
            FederatedDataset::from_sizes(&data, &vec![per_agent_n; agents])
        }
        ClusterMode::PerAgent => {
            let beta = params.symmetric_beta().ok_or_else(|| {
                Error::InvalidParameter("per-agent clusters need a symmetric two-component model".into())
            })?;
            check_gen(&total, params)?;
            let labels: Vec<u32> = (0..agents)
                .map(|m| if indexed_rng(cfg.seed, Stream::AgentLatent, m as u64).random::<bool>() { 1 } else { 2 })
                .collect();
            let rows = Exec::default().map(total.n, |i| -> Result<(Vec<f64>, f64, u32)> {
                let z = labels[i / per_agent_n];
                let sign = if z == 1 { 1.0 } else { -1.0 };
                let x = draw_x(cfg.seed, cfg.x_law, cfg.d, i as u64)?;
                let y = sign * dot(beta, &x) + draw_noise(cfg.seed, params.sigma2(), i as u64);
                Ok((x, y, z))
            });
            let pooled = assemble(cfg.d, rows)?;
            let mut fed = FederatedDataset::from_sizes(&pooled, &vec![per_agent_n; agents])?;
            fed.assignment = Some(labels);
            Ok(fed)
        }
    }
}

/// Posterior over components for one observation.
pub fn bayes_posterior(params: &MlrParams, x: &[f64], y: f64) -> Vec<f64> {
    let logits: Vec<f64> = params
        .betas()
        .iter()
        .map(|b| {
            let r = y - dot(b, x);
            -r * r / (2.0 * params.sigma2())
        })
        .collect();
    softmax(&logits)
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub(crate) fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

/// Moves a sample labelled `z` under `src` to the matching sample under `dst`.
pub fn oracle_transport(src: &MlrParams, dst: &MlrParams, x: &[f64], y: f64, z: u32) -> Result<f64> {
    check_dim(src.k(), dst.k())?;
    check_dim(src.d(), dst.d())?;
    check_dim(src.d(), x.len())?;
    if z == 0 || z as usize > src.k() {
        return Err(Error::LabelOutOfRange { label: z, k: src.k() });
    }
    let j = z as usize - 1;
    Ok(y + dot(dst.beta(j), x) - dot(src.beta(j), x))
}

/// Replaces each `y_i` by `y_i - beta_bar^T x_i`.
pub fn symmetrize(data: &Dataset, beta_bar: &[f64]) -> Result<Dataset> {
    check_dim(data.d(), beta_bar.len())?;
    let ys = (0..data.n()).map(|i| data.y(i) - dot(beta_bar, data.x(i))).collect();
    Dataset::new(data.d(), data.xs.clone(), ys, data.zs.clone())
}

/// `||beta_hat - beta_star|| / ||beta_star||`, optionally minimized over the sign of `beta_hat`.
pub fn relative_error(beta_hat: &[f64], beta_star: &[f64], sign_aware: bool) -> Result<f64> {
    check_dim(beta_star.len(), beta_hat.len())?;
    let scale = norm(beta_star);
    if scale == 0.0 {
        return Err(Error::InvalidParameter("ground truth has zero norm".into()));
    }
    let plus = crate::linalg::dist_sq(beta_hat, beta_star).sqrt();
    if !sign_aware {
        return Ok(plus / scale);
    }
    let minus = beta_hat.iter().zip(beta_star).map(|(a, b)| (a + b) * (a + b)).sum::<f64>().sqrt();
    Ok(plus.min(minus) / scale)
}

/// Average negative log likelihood under the symmetric mixture `(beta, -beta, sigma2)`.
pub fn nll_symmetric(data: &Dataset, beta: &[f64], sigma2: f64) -> Result<f64> {
    check_dim(data.d(), beta.len())?;
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma2 must be positive, got {sigma2}")));
    }
    let inv = 1.0 / (2.0 * sigma2);
    let total = Exec::default().sum_chunks(data.n(), 1, |acc, i| {
        let t = dot(beta, data.x(i));
        let y = data.y(i);
        let a = -(y - t) * (y - t) * inv;
        let b = -(y + t) * (y + t) * inv;
        acc[0] += log_sum_exp(&[a, b]);
    })[0];
    let n = data.n() as f64;
    Ok(std::f64::consts::LN_2 + 0.5 * (2.0 * std::f64::consts::PI * sigma2).ln() - total / n)
}

/// Moment estimate `E[y^2] - ||beta||^2`, clamped at [`SIGMA2_FLOOR`].
pub fn estimate_sigma2(data: &Dataset, beta: &[f64]) -> f64 {
    (data.second_moment_y() - norm_sq(beta)).max(SIGMA2_FLOOR)
}

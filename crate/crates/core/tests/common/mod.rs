#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use wmlr::model::{generate_dataset, GenConfig, XLaw};
use wmlr::Dataset;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(r: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect()
}

pub fn gen(n: usize, d: usize, snr: f64, seed: u64) -> GenConfig {
    GenConfig { n, d, snr, sigma2: 1.0, x_law: XLaw::StandardNormal, seed }
}

/// Symmetric dataset plus its ground truth.
pub fn symmetric_data(n: usize, d: usize, snr: f64, seed: u64) -> (Dataset, Vec<f64>) {
    let g = gen(n, d, snr, seed);
    let p = g.symmetric_params().unwrap();
    let b = p.symmetric_beta().unwrap().to_vec();
    (generate_dataset(&g, &p).unwrap(), b)
}

/// Central difference of `f` along coordinate `j` of `at`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, at: &[f64], j: usize, h: f64) -> f64 {
    let mut p = at.to_vec();
    let mut m = at.to_vec();
    p[j] += h;
    m[j] -= h;
    (f(&p) - f(&m)) / (2.0 * h)
}

pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    (0..at.len()).map(|j| central_diff(&f, at, j, h)).collect()
}

/// `||a - b|| / max(||a||, ||b||, 1e-3)`.
///
/// The floor keeps central-difference roundoff (about `1e-11 |f|` at `h = 1e-5`)
/// from dominating when a gradient is nearly zero.
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(b.iter().map(|v| v * v).sum::<f64>().sqrt());
    num / den.max(1e-3)
}

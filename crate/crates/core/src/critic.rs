//! Discriminator family for the minimax objective.
//!
//! Two parameterizations are provided. [`CriticK`] is the general log-ratio of
//! two `k`-term Gaussian mixtures in `y`. [`CriticSym`] is its symmetric
//! two-component reduction `logcosh(y g1'x) - logcosh(y g2'x)`, where the
//! x-only quadratic term has been dropped and the `sigma^2` scale absorbed into
//! the gammas. Either can be composed with a fixed [`FeatureMap`].
//!
//! The regularizer uses weight `lambda` on the squared distances to the
//! reference vectors. The `lambda / 2` convention corresponds to halving `lambda`.

use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, norm, sub};
use crate::model::{log_sum_exp, softmax, Dataset};

/// `ln cosh t`, stable for any finite `t`.
#[inline]
pub fn logcosh(t: f64) -> f64 {
    let a = t.abs();
    a - std::f64::consts::LN_2 + (-2.0 * a).exp().ln_1p()
}

/// Gradients of a critic at one point `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticGrads {
    /// One gradient per gamma vector, in the critic's own order.
    pub d_gammas: Vec<Vec<f64>>,
    pub d_y: f64,
}

/// Common surface of the critic parameterizations.
pub trait Critic {
    /// Input dimension the gammas act on.
    fn dim(&self) -> usize;
    fn psi(&self, x: &[f64], y: f64) -> f64;
    fn grads(&self, x: &[f64], y: f64) -> CriticGrads;
    /// Regularizer value and its gradient with respect to each gamma.
    fn regularizer(&self) -> (f64, Vec<Vec<f64>>);
    fn gammas(&self) -> Vec<&[f64]>;
}

/// Symmetric two-component critic.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticSym {
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub gamma_ref: Vec<f64>,
    pub lambda: f64,
}

impl CriticSym {
    pub fn new(gamma1: Vec<f64>, gamma2: Vec<f64>, gamma_ref: Vec<f64>, lambda: f64) -> Result<Self> {
        check_dim(gamma_ref.len(), gamma1.len())?;
        check_dim(gamma_ref.len(), gamma2.len())?;
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self { gamma1, gamma2, gamma_ref, lambda })
    }
}

pub fn psi_sym(c: &CriticSym, x: &[f64], y: f64) -> f64 {
    logcosh(y * dot(&c.gamma1, x)) - logcosh(y * dot(&c.gamma2, x))
}

/// Gradients of [`psi_sym`] with respect to `gamma1`, `gamma2` and `y`.
pub fn psi_sym_grads(c: &CriticSym, x: &[f64], y: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let a1 = dot(&c.gamma1, x);
    let a2 = dot(&c.gamma2, x);
    let h1 = (y * a1).tanh();
    let h2 = (y * a2).tanh();
    let g1 = x.iter().map(|v| h1 * y * v).collect();
    let g2 = x.iter().map(|v| -h2 * y * v).collect();
    (g1, g2, h1 * a1 - h2 * a2)
}

impl Critic for CriticSym {
    fn dim(&self) -> usize {
        self.gamma_ref.len()
    }

    fn psi(&self, x: &[f64], y: f64) -> f64 {
        psi_sym(self, x, y)
    }

    fn grads(&self, x: &[f64], y: f64) -> CriticGrads {
        let (g1, g2, d_y) = psi_sym_grads(self, x, y);
        CriticGrads { d_gammas: vec![g1, g2], d_y }
    }

    fn regularizer(&self) -> (f64, Vec<Vec<f64>>) {
        let r1 = sub(&self.gamma1, &self.gamma_ref);
        let r2 = sub(&self.gamma2, &self.gamma_ref);
        let value = self.lambda * (dot(&r1, &r1) + dot(&r2, &r2));
        let s = 2.0 * self.lambda;
        (value, vec![r1.iter().map(|v| s * v).collect(), r2.iter().map(|v| s * v).collect()])
    }

    fn gammas(&self) -> Vec<&[f64]> {
        vec![&self.gamma1, &self.gamma2]
    }
}

/// General `k`-component critic.
///
/// `gammas[2i]` enter the numerator mixture and `gammas[2i + 1]` the
/// denominator; both are anchored to `gamma_ref[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticK {
    pub gammas: Vec<Vec<f64>>,
    pub gamma_ref: Vec<Vec<f64>>,
    pub lambda: f64,
    pub sigma2: f64,
}

impl CriticK {
    pub fn new(gammas: Vec<Vec<f64>>, gamma_ref: Vec<Vec<f64>>, lambda: f64, sigma2: f64) -> Result<Self> {
        let k = gamma_ref.len();
        if k == 0 {
            return Err(Error::InvalidParameter("critic needs k >= 1".into()));
        }
        check_dim(2 * k, gammas.len())?;
        let d = gamma_ref[0].len();
        for g in gammas.iter().chain(&gamma_ref) {
            check_dim(d, g.len())?;
        }
        if !(lambda > 0.0) || !(sigma2 > 0.0) {
            return Err(Error::InvalidParameter("lambda and sigma2 must be positive".into()));
        }
        Ok(Self { gammas, gamma_ref, lambda, sigma2 })
    }

    pub fn k(&self) -> usize {
        self.gamma_ref.len()
    }
}

pub fn psi_k(c: &CriticK, x: &[f64], y: f64) -> f64 {
    let proj: Vec<f64> = c.gammas.iter().map(|g| dot(g, x)).collect();
    psi_k_from_proj(c, &proj, y).0
}

/// Softmax-weighted gradients of [`psi_k`].
pub fn psi_k_grads(c: &CriticK, x: &[f64], y: f64) -> CriticGrads {
    let (coef, d_y) = psi_k_coefficients(c, x, y);
    let d_gammas = coef.iter().map(|&s| x.iter().map(|v| s * v).collect()).collect();
    CriticGrads { d_gammas, d_y }
}

/// Per-gamma scalar coefficients `c_j` with `d psi / d gamma_j = c_j x`, plus `d psi / d y`.
pub(crate) fn psi_k_coefficients(c: &CriticK, x: &[f64], y: f64) -> (Vec<f64>, f64) {
    let proj: Vec<f64> = c.gammas.iter().map(|g| dot(g, x)).collect();
    let (_, coef, d_y) = psi_k_from_proj(c, &proj, y);
    (coef, d_y)
}

/// Value, per-gamma coefficients and `d psi / d y` given the projections `gamma_j' x`.
pub(crate) fn psi_k_from_proj(c: &CriticK, proj: &[f64], y: f64) -> (f64, Vec<f64>, f64) {
    let k = c.k();
    let inv = 1.0 / (2.0 * c.sigma2);
    let num: Vec<f64> = (0..k).map(|i| -(y - proj[2 * i]).powi(2) * inv).collect();
    let den: Vec<f64> = (0..k).map(|i| -(y - proj[2 * i + 1]).powi(2) * inv).collect();
    let value = log_sum_exp(&num) - log_sum_exp(&den);
    let a = softmax(&num);
    let b = softmax(&den);
    let mut coef = vec![0.0; 2 * k];
    let mut d_y = 0.0;
    for i in 0..k {
        let rn = (y - proj[2 * i]) / c.sigma2;
        let rd = (y - proj[2 * i + 1]) / c.sigma2;
        coef[2 * i] = a[i] * rn;
        coef[2 * i + 1] = -b[i] * rd;
        d_y += -a[i] * rn + b[i] * rd;
    }
    (value, coef, d_y)
}

impl Critic for CriticK {
    fn dim(&self) -> usize {
        self.gamma_ref[0].len()
    }

    fn psi(&self, x: &[f64], y: f64) -> f64 {
        psi_k(self, x, y)
    }

    fn grads(&self, x: &[f64], y: f64) -> CriticGrads {
        psi_k_grads(self, x, y)
    }

    fn regularizer(&self) -> (f64, Vec<Vec<f64>>) {
        let mut value = 0.0;
        let mut grads = Vec::with_capacity(self.gammas.len());
        for (j, g) in self.gammas.iter().enumerate() {
            let r = sub(g, &self.gamma_ref[j / 2]);
            value += dot(&r, &r);
            grads.push(r.iter().map(|v| 2.0 * self.lambda * v).collect());
        }
        (self.lambda * value, grads)
    }

    fn gammas(&self) -> Vec<&[f64]> {
        self.gammas.iter().map(Vec::as_slice).collect()
    }
}

/// Regularizer of either critic form.
pub fn regularizer<C: Critic>(c: &C) -> (f64, Vec<Vec<f64>>) {
    c.regularizer()
}

/// Largest gamma norm, used for the c-transform bracket and feasibility checks.
pub fn max_gamma_norm<C: Critic>(c: &C) -> f64 {
    c.gammas().iter().map(|g| norm(g)).fold(0.0, f64::max)
}

/// Whether `2 k C^2 max ||gamma||^2 <= eta`, with `k` the number of mixture
/// components the critic models (2 for the symmetric form).
pub fn feasibility_violation<C: Critic>(c: &C, components: usize, x_bound: f64, eta: f64) -> Option<f64> {
    let lhs = 2.0 * components as f64 * x_bound * x_bound * max_gamma_norm(c).powi(2);
    (lhs > eta).then_some(lhs)
}

/// Search settings for [`c_transform_oracle`].
#[derive(Debug, Clone, PartialEq)]
pub struct Bracket {
    /// Half-width of the initial search interval around `y`.
    pub radius: f64,
    pub grid_points: usize,
    pub refinements: usize,
    pub max_doublings: u32,
}

impl Bracket {
    pub fn with_radius(radius: f64) -> Self {
        Self { radius, grid_points: 2001, refinements: 60, max_doublings: 5 }
    }

    /// Default radius `|y| + 10 (1 + max ||gamma|| ||x||)`.
    pub fn for_point(y: f64, max_gamma_norm: f64, x_norm: f64) -> Self {
        Self::with_radius(y.abs() + 10.0 * (1.0 + max_gamma_norm * x_norm))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CTransform {
    pub value: f64,
    pub argmax: f64,
}

/// `sup_{y'} psi_at(y') - (y - y')^2 / 2` by a dense grid followed by
/// interval-halving refinement around the best grid point.
pub fn c_transform_oracle<F: Fn(f64) -> f64>(psi_at: F, y: f64, bracket: &Bracket) -> Result<CTransform> {
    let objective = |t: f64| psi_at(t) - 0.5 * (y - t) * (y - t);
    let points = bracket.grid_points.max(3);
    let mut radius = bracket.radius;
    for doubling in 0..=bracket.max_doublings {
        let step = 2.0 * radius / (points - 1) as f64;
        let grid = |j: usize| y - radius + step * j as f64;
        let (best, best_val) = (0..points)
            .map(|j| (j, objective(grid(j))))
            .fold((0, f64::NEG_INFINITY), |acc, (j, v)| if v > acc.1 { (j, v) } else { acc });
        if best == 0 || best == points - 1 {
            if doubling == bracket.max_doublings {
                break;
            }
            radius *= 2.0;
            continue;
        }
        let (mut lo, mut hi) = (grid(best - 1), grid(best + 1));
        for _ in 0..bracket.refinements {
            let mid = 0.5 * (lo + hi);
            let delta = 1e-3 * (hi - lo);
            if objective(mid - delta) < objective(mid + delta) {
                lo = mid - delta;
            } else {
                hi = mid + delta;
            }
        }
        let argmax = 0.5 * (lo + hi);
        let value = objective(argmax);
        return Ok(if value >= best_val {
            CTransform { value, argmax }
        } else {
            CTransform { value: best_val, argmax: grid(best) }
        });
    }
    Err(Error::BracketExhausted { doublings: bracket.max_doublings })
}

/// Fixed map from inputs to features.
pub trait FeatureMap: Send + Sync {
    fn dim_out(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;

    /// Dataset with every input replaced by its features.
    fn transform(&self, data: &Dataset) -> Result<Dataset> {
        let d = self.dim_out();
        let mut xs = Vec::with_capacity(data.n() * d);
        for i in 0..data.n() {
            let f = self.apply(data.x(i));
            check_dim(d, f.len())?;
            xs.extend_from_slice(&f);
        }
        Dataset::new(d, xs, data.ys().to_vec(), data.zs().map(<[u32]>::to_vec))
    }
}

/// Feature map backed by a closure.
#[derive(Clone)]
pub struct FnFeatureMap {
    dim_out: usize,
    f: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
}

impl FnFeatureMap {
    pub fn new(dim_out: usize, f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self { dim_out, f: Arc::new(f) }
    }

    pub fn identity(d: usize) -> Self {
        Self::new(d, |x| x.to_vec())
    }
}

impl std::fmt::Debug for FnFeatureMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnFeatureMap").field("dim_out", &self.dim_out).finish()
    }
}

impl FeatureMap for FnFeatureMap {
    fn dim_out(&self) -> usize {
        self.dim_out
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (self.f)(x)
    }
}

/// A critic evaluated on `phi(x)` instead of `x`. Gradients are taken with respect
/// to the gammas only.
#[derive(Debug, Clone)]
pub struct Featurized<C, F> {
    pub critic: C,
    pub phi: F,
}

pub fn with_feature_map<C: Critic, F: FeatureMap>(critic: C, phi: F) -> Result<Featurized<C, F>> {
    check_dim(critic.dim(), phi.dim_out())?;
    Ok(Featurized { critic, phi })
}

impl<C: Critic, F: FeatureMap> Critic for Featurized<C, F> {
    fn dim(&self) -> usize {
        self.critic.dim()
    }

    fn psi(&self, x: &[f64], y: f64) -> f64 {
        self.critic.psi(&self.phi.apply(x), y)
    }

    fn grads(&self, x: &[f64], y: f64) -> CriticGrads {
        self.critic.grads(&self.phi.apply(x), y)
    }

    fn regularizer(&self) -> (f64, Vec<Vec<f64>>) {
        self.critic.regularizer()
    }

    fn gammas(&self) -> Vec<&[f64]> {
        self.critic.gammas()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(g1: &[f64], g2: &[f64]) -> CriticSym {
        CriticSym::new(g1.to_vec(), g2.to_vec(), vec![0.0; g1.len()], 1.0).unwrap()
    }

    #[test]
    fn logcosh_is_stable() {
        assert_eq!(logcosh(0.0), 0.0);
        assert!((logcosh(1.0) - 1f64.cosh().ln()).abs() < 1e-15);
        let big = logcosh(800.0);
        assert!((big - (800.0 - std::f64::consts::LN_2)).abs() < 1e-12);
        assert_eq!(logcosh(-3.5), logcosh(3.5));
    }

    #[test]
    fn psi_sym_cases() {
        let c = sym(&[0.3, -1.0], &[0.3, -1.0]);
        assert_eq!(psi_sym(&c, &[2.0, 1.0], 4.0), 0.0);
        let c = sym(&[1.0], &[0.0]);
        assert_eq!(psi_sym(&c, &[5.0], 0.0), 0.0);
        // ln(e + 1/e) - ln 2 = ln cosh 1
        assert!((psi_sym(&c, &[1.0], 1.0) - 0.433_780_830_483_027_2).abs() < 1e-15);
    }

    #[test]
    fn psi_sym_grad_cases() {
        let c = sym(&[0.7, 0.1], &[-0.2, 0.4]);
        let (g1, g2, dy) = psi_sym_grads(&c, &[1.0, 2.0], 0.0);
        assert!(g1.iter().chain(&g2).all(|v| *v == 0.0) && dy == 0.0);
        let c = sym(&[0.7, 0.1], &[0.7, 0.1]);
        assert_eq!(psi_sym_grads(&c, &[1.0, 2.0], 1.3).2, 0.0);
    }

    #[test]
    fn psi_sym_large_arguments_stay_finite() {
        let c = sym(&[700.0], &[-350.0]);
        let v = psi_sym(&c, &[1.0], 1.0);
        assert!((v - 350.0).abs() < 1e-9);
        let (g1, g2, dy) = psi_sym_grads(&c, &[1.0], 1.0);
        assert_eq!((g1[0], g2[0], dy), (1.0, 1.0, 350.0));
    }

    #[test]
    fn psi_k_cases() {
        let g = vec![vec![0.5], vec![0.5], vec![-1.0], vec![-1.0]];
        let c = CriticK::new(g, vec![vec![0.0]; 2], 1.0, 1.0).unwrap();
        assert_eq!(psi_k(&c, &[2.0], 0.7), 0.0);

        let c = CriticK::new(vec![vec![0.4], vec![-0.3]], vec![vec![0.0]], 1.0, 2.0).unwrap();
        let (x, y) = (1.5, 0.9);
        let want = ((y + 0.45_f64).powi(2) - (y - 0.6_f64).powi(2)) / 4.0;
        assert!((psi_k(&c, &[x], y) - want).abs() < 1e-15);

        // log(2 e^{-1/2}) - log 2
        let c = CriticK::new(vec![vec![1.0], vec![0.0], vec![-1.0], vec![0.0]], vec![vec![0.0]; 2], 1.0, 1.0).unwrap();
        assert!((psi_k(&c, &[1.0], 0.0) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn psi_k_single_component_gradients_are_quadratic() {
        let c = CriticK::new(vec![vec![0.4, 1.0], vec![-0.3, 0.2]], vec![vec![0.0; 2]], 1.0, 2.0).unwrap();
        let x = [1.5, -0.5];
        let y = 0.9;
        let g = psi_k_grads(&c, &x, y);
        let r1 = y - dot(&c.gammas[0], &x);
        let r2 = y - dot(&c.gammas[1], &x);
        for j in 0..2 {
            assert!((g.d_gammas[0][j] - r1 / 2.0 * x[j]).abs() < 1e-15);
            assert!((g.d_gammas[1][j] + r2 / 2.0 * x[j]).abs() < 1e-15);
        }
        assert!((g.d_y - (-r1 + r2) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn regularizer_cases() {
        let r = vec![0.2, -0.4];
        let c = CriticSym::new(r.clone(), r.clone(), r.clone(), 1.0).unwrap();
        let (v, g) = regularizer(&c);
        assert_eq!(v, 0.0);
        assert!(g.iter().flatten().all(|x| *x == 0.0));
        let c = CriticSym::new(vec![1.2, -0.4], r.clone(), r, 1.0).unwrap();
        let (v, g) = regularizer(&c);
        assert!((v - 1.0).abs() < 1e-15);
        assert!((g[0][0] - 2.0).abs() < 1e-15 && g[0][1].abs() < 1e-15);
    }

    #[test]
    fn c_transform_closed_forms() {
        let b = Bracket::with_radius(10.0);
        let zero = c_transform_oracle(|_| 0.0, 1.7, &b).unwrap();
        assert!(zero.value.abs() < 1e-14 && (zero.argmax - 1.7).abs() < 1e-8);
        let a = 0.8;
        let lin = c_transform_oracle(|t| a * t, -2.3, &b).unwrap();
        assert!((lin.value - (a * -2.3 + a * a / 2.0)).abs() < 1e-12);
        assert!((lin.argmax - (-2.3 + a)).abs() < 1e-8);
    }

    #[test]
    fn c_transform_widens_then_gives_up() {
        // maximizer at y + 30 lies outside the initial radius 5 but inside 5 * 2^3
        let got = c_transform_oracle(|t| 30.0 * t, 0.0, &Bracket::with_radius(5.0)).unwrap();
        assert!((got.argmax - 30.0).abs() < 1e-7);
        let unbounded = c_transform_oracle(|t| t * t, 0.0, &Bracket::with_radius(1.0));
        assert!(matches!(unbounded, Err(Error::BracketExhausted { doublings: 5 })));
    }

    #[test]
    fn feature_map_identity_and_doubling() {
        let c = sym(&[0.3, -0.7], &[1.1, 0.2]);
        let f = with_feature_map(c.clone(), FnFeatureMap::identity(2)).unwrap();
        let x = [0.5, 1.5];
        assert_eq!(f.psi(&x, 0.8), psi_sym(&c, &x, 0.8));
        assert_eq!(f.grads(&x, 0.8), c.grads(&x, 0.8));
        let double = with_feature_map(c.clone(), FnFeatureMap::new(2, |x| x.iter().map(|v| 2.0 * v).collect())).unwrap();
        let c2 = sym(&[0.6, -1.4], &[2.2, 0.4]);
        assert!((double.psi(&x, 0.8) - psi_sym(&c2, &x, 0.8)).abs() < 1e-15);
        assert!(with_feature_map(c, FnFeatureMap::identity(3)).is_err());
    }
}

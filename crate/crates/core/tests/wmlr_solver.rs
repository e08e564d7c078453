mod common;

use common::*;
use nalgebra::{DMatrix, SymmetricEigen};
use wmlr::critic::{with_feature_map, Critic, CriticK, CriticSym, FeatureMap, FnFeatureMap};
use wmlr::exec::Exec;
use wmlr::linalg::{dot, norm};
use wmlr::model::{generate_dataset, relative_error, GenConfig, MlrParams, XLaw};
use wmlr::wmlr::{
    maximize_critic, model_samples, objective_k_with, objective_sym_with, reference_vector, run_wmlr, theory_stepsizes,
    ModelNoise, SigmaMode, WmlrConfig, WmlrState,
};
use wmlr::Dataset;

#[test]
fn reference_vector_matches_dense_eigendecomposition() {
    for seed in 0..5 {
        let (data, _) = symmetric_data(400, 5, 2.0, 40 + seed);
        let mut m = DMatrix::<f64>::zeros(5, 5);
        for i in 0..data.n() {
            let x = DMatrix::from_column_slice(5, 1, data.x(i));
            m += &x * x.transpose() * (data.y(i) * data.y(i) / data.n() as f64);
        }
        let eig = SymmetricEigen::new(m);
        let top = eig.eigenvalues.imax();
        let mut v: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
        if v.iter().find(|a| a.abs() > 1e-12).unwrap() < &0.0 {
            v.iter_mut().for_each(|a| *a = -*a);
        }
        let got = reference_vector(&data, 2000, 1e-14).unwrap();
        assert!(rel_diff(&got, &v) < 1e-6, "{got:?} vs {v:?}");
    }
}

#[test]
fn reference_vector_from_axis_aligned_samples() {
    // M = diag(3, 1): sqrt(3) e1 and e2 with unit responses, each weighted 1/2, scaled by 2
    let data = Dataset::from_rows(&[vec![6f64.sqrt(), 0.0], vec![0.0, 2f64.sqrt()]], vec![1.0, 1.0]).unwrap();
    let v = reference_vector(&data, 200, 1e-10).unwrap();
    assert!((v[0] - 1.0).abs() < 1e-9 && v[1].abs() < 1e-9, "{v:?}");
}

#[test]
fn reference_vector_aligns_with_truth_at_high_snr() {
    let (data, b) = symmetric_data(100_000, 128, 10.0, 6);
    let v = reference_vector(&data, 200, 1e-10).unwrap();
    assert!(dot(&v, &b).abs() / norm(&b) >= 0.95);
}

#[test]
fn theory_stepsizes_match_scalar_recomputation() {
    let g = GenConfig { n: 37, d: 3, snr: 1.2, sigma2: 0.5, x_law: XLaw::BoundedNormal { radius: 1.5 }, seed: 2 };
    let p = g.symmetric_params().unwrap();
    let data = generate_dataset(&g, &p).unwrap();
    let gref = vec![0.3, -0.4, 0.5];
    let lambda = 7.0;
    let ts = theory_stepsizes(&data, lambda, &gref);
    let mut c2: f64 = 0.0;
    let mut ey2 = 0.0;
    for i in 0..data.n() {
        c2 = c2.max(data.x(i).iter().map(|v| v * v).sum());
        ey2 += data.y(i) * data.y(i);
    }
    let eta = c2 * ey2 / data.n() as f64;
    let l = lambda + 4.0 * eta * (1.0 + eta / lambda + (0.09f64 + 0.16 + 0.25).sqrt());
    let kappa = l / (lambda - 2.0 * eta);
    assert!((ts.eta - eta).abs() < 1e-12 * eta);
    assert!((ts.l_smooth - l).abs() < 1e-12 * l);
    assert!((ts.kappa - kappa).abs() < 1e-12 * kappa);
    assert!((ts.alpha_max - 1.0 / l).abs() < 1e-15);
    assert!((ts.alpha_min - 1.0 / (kappa * kappa * l)).abs() < 1e-15);
    assert_eq!(ts.valid, lambda > 2.0 * eta);
}

#[test]
fn model_sample_second_moment() {
    let (data, _) = symmetric_data(100_000, 8, 1.0, 12);
    let mut r = rng(3);
    let beta = normal_vec(&mut r, 8, 0.6);
    let c = CriticSym::new(vec![0.0; 8], vec![0.0; 8], vec![0.0; 8], 1.0).unwrap();
    let state = WmlrState { beta: beta.clone(), critic: c, iter: 0, noise: ModelNoise::draw(4, 0, data.n(), None, 0) };
    let ys = model_samples(&state, &data, 0.7).unwrap();
    let ex2: f64 = (0..data.n()).map(|i| data.x(i).iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / data.n() as f64;
    let expect = dot(&beta, &beta) * ex2 / 8.0 + 0.7;
    let sq: Vec<f64> = ys.iter().map(|y| y * y).collect();
    let m = sq.iter().sum::<f64>() / sq.len() as f64;
    let sd = (sq.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / sq.len() as f64).sqrt();
    assert!((m - expect).abs() <= 4.0 * sd / (sq.len() as f64).sqrt(), "{m} vs {expect}");
}

#[test]
fn data_and_model_terms_agree_at_truth() {
    let (data, b) = symmetric_data(100_000, 4, 2.0, 31);
    let mut r = rng(32);
    let c = CriticSym::new(normal_vec(&mut r, 4, 0.4), normal_vec(&mut r, 4, 0.4), vec![0.0; 4], 1.0).unwrap();
    let noise = ModelNoise::draw(33, 0, data.n(), None, 0);
    let ev = objective_sym_with(Exec::default(), &data, &b, &c, &noise.xi, 1.0).unwrap();
    // per-sample difference of paired terms gives the standard error
    let diffs: Vec<f64> = (0..data.n())
        .map(|i| {
            let yp = dot(&b, data.x(i)) + noise.xi[i];
            wmlr::critic::psi_sym(&c, data.x(i), data.y(i)) - wmlr::critic::psi_sym(&c, data.x(i), yp)
        })
        .collect();
    let n = diffs.len() as f64;
    let m = diffs.iter().sum::<f64>() / n;
    let se = (diffs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!((ev.data_term - ev.model_term - m).abs() < 1e-10);
    assert!(m.abs() <= 4.0 * se, "{m} +- {se}");
}

#[test]
fn general_k_objective_reduces_to_symmetric() {
    let (data, _) = symmetric_data(500, 4, 1.5, 50);
    let mut r = rng(51);
    let beta = normal_vec(&mut r, 4, 0.8);
    let (g1, g2) = (normal_vec(&mut r, 4, 0.5), normal_vec(&mut r, 4, 0.5));
    let sigma2 = 1.7;
    let neg = |v: &[f64]| v.iter().map(|a| -a).collect::<Vec<_>>();
    let ck = CriticK::new(vec![g1.clone(), g2.clone(), neg(&g1), neg(&g2)], vec![vec![0.0; 4]; 2], 1.0, sigma2).unwrap();
    let noise = ModelNoise::draw(52, 0, data.n(), Some(2), 0);
    let ek = objective_k_with(Exec::Sequential, &data, &[beta.clone(), neg(&beta)], &ck, &noise, sigma2).unwrap();
    let lat = noise.latents.as_ref().unwrap();
    let xi: Vec<f64> = noise.xi.iter().zip(lat).map(|(v, &z)| if z == 0 { *v } else { -*v }).collect();
    let scale = |v: &[f64]| v.iter().map(|a| a / sigma2).collect::<Vec<_>>();
    let cs = CriticSym::new(scale(&g1), scale(&g2), vec![0.0; 4], 1.0).unwrap();
    let es = objective_sym_with(Exec::Sequential, &data, &beta, &cs, &xi, sigma2).unwrap();
    let gap_k = ek.data_term - ek.model_term;
    let gap_s = es.data_term - es.model_term;
    assert!((gap_k - gap_s).abs() < 1e-10, "{gap_k} vs {gap_s}");
    let combined: Vec<f64> = ek.grad_beta[0].iter().zip(&ek.grad_beta[1]).map(|(a, b)| a - b).collect();
    assert!(rel_diff(&combined, &es.grad_beta[0]) < 1e-10);
}

#[test]
fn critic_maximizer_is_unique_under_strong_concavity() {
    let g = GenConfig { n: 300, d: 3, snr: 0.8, sigma2: 0.5, x_law: XLaw::BoundedNormal { radius: 1.0 }, seed: 60 };
    let p = g.symmetric_params().unwrap();
    let data = generate_dataset(&g, &p).unwrap();
    let mut r = rng(61);
    let gref = normal_vec(&mut r, 3, 0.3);
    let probe = theory_stepsizes(&data, 1.0, &gref);
    let lambda = 3.0 * probe.eta;
    let ts = theory_stepsizes(&data, lambda, &gref);
    assert!(ts.valid);
    let mut cfg = WmlrConfig::heuristic(lambda, 0, 0);
    cfg.alpha_max = ts.alpha_max;
    let beta = normal_vec(&mut r, 3, 0.5);
    let noise = ModelNoise::draw(62, 0, data.n(), None, 0);
    let start = |r: &mut rand_chacha::ChaCha8Rng| WmlrState {
        beta: beta.clone(),
        critic: CriticSym::new(normal_vec(r, 3, 2.0), normal_vec(r, 3, 2.0), gref.clone(), lambda).unwrap(),
        iter: 0,
        noise: noise.clone(),
    };
    let (a, _) = maximize_critic(&data, &start(&mut r), &cfg, 20_000, 1e-12).unwrap();
    let (b, _) = maximize_critic(&data, &start(&mut r), &cfg, 20_000, 1e-12).unwrap();
    assert!(rel_diff(&a.gamma1, &b.gamma1) < 1e-6 && rel_diff(&a.gamma2, &b.gamma2) < 1e-6);
}

#[test]
fn same_law_leaves_little_for_the_critic() {
    let (data, b) = symmetric_data(100_000, 4, 2.0, 70);
    let data = data.without_labels();
    let mut cfg = WmlrConfig::heuristic(1e-2, 0, 71);
    cfg.alpha_max = 0.5;
    let mut r = rng(72);
    let state = WmlrState {
        beta: b.clone(),
        critic: CriticSym::new(normal_vec(&mut r, 4, 0.5), normal_vec(&mut r, 4, 0.5), vec![0.0; 4], cfg.lambda).unwrap(),
        iter: 0,
        noise: ModelNoise::draw(73, 0, data.n(), None, 0),
    };
    let (c, _) = maximize_critic(&data, &state, &cfg, 2000, 1e-9).unwrap();
    let ev = objective_sym_with(Exec::default(), &data, &b, &c, &state.noise.xi, 1.0).unwrap();
    assert!(ev.data_term - ev.model_term <= 1e-2, "{}", ev.data_term - ev.model_term);
}

#[test]
fn one_dimensional_recovery() {
    let (data, b) = symmetric_data(50_000, 1, 2.0, 80);
    let cfg = WmlrConfig::half_penalty(0.5, 100, 81);
    let (state, trace) = run_wmlr(&data.without_labels(), &cfg, None, Some(&b)).unwrap();
    assert_eq!(trace.rows.len(), 101);
    assert!(relative_error(&state.beta, &b, true).unwrap() <= 1e-2);
}

#[test]
fn quadratic_feature_map_recovers_coefficient() {
    let g = GenConfig { n: 20_000, d: 1, snr: 1.0, sigma2: 1.0, x_law: XLaw::StandardNormal, seed: 90 };
    let xs = generate_dataset(&g, &MlrParams::symmetric(vec![1.0], 1.0).unwrap()).unwrap();
    let zs = xs.zs().unwrap();
    let ys: Vec<f64> = (0..xs.n()).map(|i| if zs[i] == 1 { 1.0 } else { -1.0 } * xs.x(i)[0].powi(2)).collect();
    let data = Dataset::new(1, xs.xs().to_vec(), ys, None).unwrap();
    let phi = FnFeatureMap::new(1, |x: &[f64]| vec![x[0] * x[0]]);
    let feats = phi.transform(&data).unwrap();
    // heavy-tailed features need steps well below the heuristic ones
    let mut cfg = WmlrConfig::half_penalty(1.0, 1000, 91);
    cfg.alpha_max = 0.1;
    cfg.alpha_min = 0.01;
    cfg.sigma_mode = SigmaMode::Known(1e-2);
    let (state, _) = run_wmlr(&feats, &cfg, None, None).unwrap();
    assert!((state.beta[0].abs() - 1.0).abs() <= 1e-2, "{:?}", state.beta);
    let fc = with_feature_map(state.critic.clone(), phi).unwrap();
    for i in 0..10 {
        assert_eq!(fc.psi(data.x(i), data.y(i)), wmlr::critic::psi_sym(&state.critic, feats.x(i), data.y(i)));
    }
}

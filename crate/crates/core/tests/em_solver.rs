mod common;

use common::*;
use wmlr::em::{gem_grads, m_step, q_function, run_em, run_gem, CovSolver, EmState, GemConfig, SigmaX};
use wmlr::linalg::norm;

#[test]
fn m_step_is_a_stationary_local_maximum() {
    for seed in 0..10 {
        let (data, _) = symmetric_data(500, 4, 1.0 + seed as f64, 100 + seed);
        let mut r = rng(200 + seed);
        let old = EmState::new(normal_vec(&mut r, 4, 1.0), 0.5 + seed as f64 * 0.2).unwrap();
        let solver = CovSolver::prepare(&SigmaX::Empirical, &data).unwrap();
        let new = m_step(&old, &data, &solver).unwrap();
        let (gb, gs) = gem_grads(&new, &old, &data).unwrap();
        assert!(norm(&gb) <= 1e-9 && gs.abs() <= 1e-9, "{gb:?} {gs}");
        let q0 = q_function(&new, &old, &data).unwrap();
        for _ in 0..20 {
            let dir = normal_vec(&mut r, 5, 1.0);
            for step in [1e-4, 1e-2, 1e-1] {
                let beta = new.beta.iter().zip(&dir).map(|(b, v)| b + step * v).collect();
                let s2 = (new.sigma2 + step * dir[4]).max(1e-6);
                let q = q_function(&EmState::new(beta, s2).unwrap(), &old, &data).unwrap();
                assert!(q <= q0 + 1e-9, "{q} > {q0}");
            }
        }
    }
}

#[test]
fn exact_em_never_increases_nll() {
    let (data, b) = symmetric_data(3000, 5, 2.0, 7);
    let mut r = rng(8);
    let init = EmState::new(normal_vec(&mut r, 5, 0.5), 1.0).unwrap();
    let (_, trace) = run_em(&data, init, 40, &SigmaX::Empirical, Some(&b)).unwrap();
    let nll: Vec<f64> = trace.rows.iter().map(|r| r.nll.unwrap()).collect();
    for w in nll.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn gem_iterates_track_the_ascent_direction() {
    let (data, b) = symmetric_data(5000, 3, 3.0, 9);
    let mut r = rng(10);
    let init = EmState::new(normal_vec(&mut r, 3, 0.5), 1.0).unwrap();
    let (s, trace) = run_gem(&data, init.clone(), &GemConfig::new(0.5, 200), Some(&b)).unwrap();
    assert_eq!(trace.rows.len(), 201);
    assert!(trace.rows.last().unwrap().rel_err.unwrap() < trace.rows[0].rel_err.unwrap());
    assert!(s.sigma2 > 0.0);
    let (g, _) = gem_grads(&init, &init, &data).unwrap();
    let (one, _) = run_gem(&data, init.clone(), &GemConfig::new(0.5, 1), None).unwrap();
    for j in 0..3 {
        assert_eq!(one.beta[j], init.beta[j] + 0.5 * g[j]);
    }
}

#[test]
fn known_covariance_differs_from_empirical_on_small_samples() {
    let (data, _) = symmetric_data(200, 4, 2.0, 11);
    let old = EmState::new(vec![0.5, -0.5, 0.5, 0.5], 1.0).unwrap();
    let a = m_step(&old, &data, &CovSolver::prepare(&SigmaX::Identity, &data).unwrap()).unwrap();
    let e = m_step(&old, &data, &CovSolver::prepare(&SigmaX::Empirical, &data).unwrap()).unwrap();
    let k = m_step(&old, &data, &CovSolver::prepare(&SigmaX::Known(identity(4)), &data).unwrap()).unwrap();
    assert_eq!(a, k);
    assert!(rel_diff(&a.beta, &e.beta) > 1e-3);
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

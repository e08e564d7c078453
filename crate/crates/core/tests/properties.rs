mod common;

use common::*;
use proptest::prelude::*;
use wmlr::critic::{c_transform_oracle, psi_k, psi_sym, regularizer, Bracket, CriticK, CriticSym};
use wmlr::em::{e_weights, run_em, EmState, SigmaX};
use wmlr::exec::Exec;
use wmlr::io::{load_dataset, read_dataset, save_dataset, write_dataset};
use wmlr::model::{bayes_posterior, nll_symmetric, relative_error, symmetrize, MlrParams};
use wmlr::trace::convergence_index;
use wmlr::wmlr::{objective_sym_with, ModelNoise};
use wmlr::Dataset;

fn vec_of(d: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, d)
}

fn sym_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
    (1usize..6).prop_flat_map(|d| (vec_of(d, -2.0, 2.0), vec_of(d, -2.0, 2.0), vec_of(d, -2.0, 2.0), -4.0..4.0f64))
}

proptest! {
    #[test]
    fn psi_sym_is_even_in_y_and_odd_under_swap((g1, g2, x, y) in sym_case()) {
        let d = x.len();
        let c = CriticSym::new(g1.clone(), g2.clone(), vec![0.0; d], 1.0).unwrap();
        let swapped = CriticSym::new(g2, g1, vec![0.0; d], 1.0).unwrap();
        prop_assert_eq!(psi_sym(&c, &x, y), psi_sym(&c, &x, -y));
        prop_assert_eq!(psi_sym(&c, &x, y), -psi_sym(&swapped, &x, y));
    }

    #[test]
    fn psi_k_symmetric_differs_from_psi_sym_by_x_only_term(
        (g1, g2, x, y) in sym_case(),
        y2 in -4.0..4.0f64,
        sigma2 in 0.3..3.0f64,
    ) {
        let d = x.len();
        let neg = |v: &[f64]| v.iter().map(|a| -a).collect::<Vec<_>>();
        let k2 = CriticK::new(
            vec![g1.clone(), g2.clone(), neg(&g1), neg(&g2)],
            vec![vec![0.0; d]; 2],
            1.0,
            sigma2,
        )
        .unwrap();
        let scale = |v: &[f64]| v.iter().map(|a| a / sigma2).collect::<Vec<_>>();
        let s = CriticSym::new(scale(&g1), scale(&g2), vec![0.0; d], 1.0).unwrap();
        let gap = |y: f64| psi_k(&k2, &x, y) - psi_sym(&s, &x, y);
        prop_assert!((gap(y) - gap(y2)).abs() < 1e-9);
    }

    #[test]
    fn c_transform_dominates_psi((g1, g2, x, y) in sym_case()) {
        let d = x.len();
        let c = CriticSym::new(g1, g2, vec![0.0; d], 1.0).unwrap();
        let gmax = c.gamma1.iter().chain(&c.gamma2).map(|v| v.abs()).fold(0.0, f64::max) * (d as f64).sqrt();
        let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ct = c_transform_oracle(|yp| psi_sym(&c, &x, yp), y, &Bracket::for_point(y, gmax, xn)).unwrap();
        prop_assert!(ct.value >= psi_sym(&c, &x, y) - 1e-12);
    }

    #[test]
    fn regularizer_is_midpoint_convex(
        a in vec_of(3, -3.0, 3.0), b in vec_of(3, -3.0, 3.0),
        c in vec_of(3, -3.0, 3.0), e in vec_of(3, -3.0, 3.0),
        r in vec_of(3, -1.0, 1.0), lambda in 0.01..5.0f64,
    ) {
        let mid = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| 0.5 * (p + q)).collect::<Vec<_>>();
        let ca = CriticSym::new(a.clone(), b.clone(), r.clone(), lambda).unwrap();
        let cb = CriticSym::new(c.clone(), e.clone(), r.clone(), lambda).unwrap();
        let cm = CriticSym::new(mid(&a, &c), mid(&b, &e), r, lambda).unwrap();
        prop_assert!(regularizer(&cm).0 <= 0.5 * (regularizer(&ca).0 + regularizer(&cb).0) + 1e-12);
    }

    #[test]
    fn posterior_is_normalized_and_permutation_equivariant(
        betas in (1usize..5).prop_flat_map(|k| prop::collection::vec(vec_of(3, -3.0, 3.0), k)),
        x in vec_of(3, -2.0, 2.0), y in -10.0..10.0f64, sigma2 in 0.1..4.0f64, rot in 0usize..5,
    ) {
        let p = MlrParams::new(betas.clone(), sigma2).unwrap();
        let w = bayes_posterior(&p, &x, y);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|v| (0.0..=1.0).contains(v)));
        let k = betas.len();
        let mut rotated = betas.clone();
        rotated.rotate_left(rot % k);
        let wr = bayes_posterior(&MlrParams::new(rotated, sigma2).unwrap(), &x, y);
        for j in 0..k {
            prop_assert!((wr[j] - w[(j + rot) % k]).abs() < 1e-12);
        }
    }

    #[test]
    fn e_weights_equal_first_posterior_component(beta in vec_of(4, -2.0, 2.0), sigma2 in 0.2..3.0f64, seed in 0u64..1000) {
        let (data, _) = symmetric_data(20, 4, 1.5, seed);
        let w = e_weights(&EmState::new(beta.clone(), sigma2).unwrap(), &data);
        let p = MlrParams::symmetric(beta, sigma2).unwrap();
        for i in 0..data.n() {
            prop_assert!((w[i] - bayes_posterior(&p, data.x(i), data.y(i))[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn sign_invariances(beta in vec_of(4, -2.0, 2.0), truth in vec_of(4, 0.1, 2.0), seed in 0u64..1000) {
        let neg: Vec<f64> = beta.iter().map(|v| -v).collect();
        prop_assert_eq!(relative_error(&beta, &truth, true).unwrap(), relative_error(&neg, &truth, true).unwrap());
        let (data, _) = symmetric_data(15, 4, 1.0, seed);
        let a = nll_symmetric(&data, &beta, 1.3).unwrap();
        let b = nll_symmetric(&data, &neg, 1.3).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn symmetrize_is_additive(bb in vec_of(3, -2.0, 2.0), seed in 0u64..1000) {
        let (data, _) = symmetric_data(12, 3, 1.0, seed);
        let neg: Vec<f64> = bb.iter().map(|v| -v).collect();
        let back = symmetrize(&symmetrize(&data, &bb).unwrap(), &neg).unwrap();
        for i in 0..data.n() {
            prop_assert!((back.y(i) - data.y(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn convergence_index_matches_brute_force(errs in prop::collection::vec(0.0..2.0f64, 1..30)) {
        let last = *errs.last().unwrap();
        let brute = (0..errs.len()).find(|&t0| errs[t0..].iter().all(|e| *e <= 1.05 * last)).unwrap();
        prop_assert_eq!(convergence_index(&errs), Some(brute));
    }

    #[test]
    fn dataset_csv_round_trip(
        rows in prop::collection::vec((vec_of(2, -1e6, 1e6), -1e300..1e300f64), 1..20),
    ) {
        let xs: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
        let ys = rows.iter().map(|r| r.1).collect();
        let data = Dataset::from_rows(&xs, ys).unwrap();
        let mut buf = Vec::new();
        write_dataset(&data, &mut buf).unwrap();
        prop_assert_eq!(read_dataset(buf.as_slice()).unwrap(), data);
    }
}

#[test]
fn em_is_sign_equivariant_bitwise() {
    let (data, _) = symmetric_data(300, 5, 2.0, 3);
    let mut r = rng(4);
    let b0 = normal_vec(&mut r, 5, 0.5);
    let neg: Vec<f64> = b0.iter().map(|v| -v).collect();
    for sx in [SigmaX::Identity, SigmaX::Empirical] {
        let (a, ta) = run_em(&data, EmState::new(b0.clone(), 1.0).unwrap(), 15, &sx, None).unwrap();
        let (b, tb) = run_em(&data, EmState::new(neg.clone(), 1.0).unwrap(), 15, &sx, None).unwrap();
        assert!(a.beta.iter().zip(&b.beta).all(|(p, q)| *p == -*q));
        assert_eq!(a.sigma2, b.sigma2);
        assert_eq!(ta.rows.iter().map(|r| r.objective).collect::<Vec<_>>(), tb.rows.iter().map(|r| r.objective).collect::<Vec<_>>());
    }
}

#[test]
fn sequential_and_default_execution_agree_bitwise() {
    let (data, _) = symmetric_data(2000, 6, 3.0, 9);
    let mut r = rng(10);
    let c = CriticSym::new(normal_vec(&mut r, 6, 0.5), normal_vec(&mut r, 6, 0.5), normal_vec(&mut r, 6, 0.5), 0.7).unwrap();
    let beta = normal_vec(&mut r, 6, 1.0);
    let noise = ModelNoise::draw(5, 0, data.n(), None, 0);
    let a = objective_sym_with(Exec::Sequential, &data, &beta, &c, &noise.xi, 1.0).unwrap();
    let b = objective_sym_with(Exec::default(), &data, &beta, &c, &noise.xi, 1.0).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dataset_file_round_trip() {
    let (data, _) = symmetric_data(50, 3, 2.0, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    save_dataset(&data, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), data);
}

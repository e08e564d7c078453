use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use wmlr::critic::{CriticK, CriticSym};
use wmlr::exec::Exec;
use wmlr::model::{generate_dataset, GenConfig, XLaw};
use wmlr::wmlr::{objective_k_with, objective_sym_with, ModelNoise};

fn policies() -> Vec<(&'static str, Exec)> {
    vec![
        ("sequential", Exec::Sequential),
        #[cfg(feature = "parallel")]
        ("parallel", Exec::Parallel),
    ]
}

fn objective(c: &mut Criterion) {
    let d = 128;
    let mut group = c.benchmark_group("objective_sym");
    for n in [10_000, 100_000] {
        let g = GenConfig { n, d, snr: 10.0, sigma2: 1.0, x_law: XLaw::StandardNormal, seed: 1 };
        let data = generate_dataset(&g, &g.symmetric_params().unwrap()).unwrap();
        let beta = vec![0.1; d];
        let critic = CriticSym::new(vec![0.05; d], vec![-0.05; d], vec![0.0; d], 0.25).unwrap();
        let noise = ModelNoise::draw(2, 0, n, None, 0);
        group.throughput(Throughput::Elements(n as u64));
        for (name, exec) in policies() {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| objective_sym_with(exec, black_box(&data), &beta, &critic, &noise.xi, 1.0).unwrap())
            });
        }
    }
    group.finish();
}

fn objective_general(c: &mut Criterion) {
    let (n, d, k) = (20_000, 32, 3);
    let g = GenConfig { n, d, snr: 4.0, sigma2: 1.0, x_law: XLaw::StandardNormal, seed: 3 };
    let data = generate_dataset(&g, &g.symmetric_params().unwrap()).unwrap();
    let betas: Vec<Vec<f64>> = (0..k).map(|j| vec![0.1 * (j as f64 + 1.0); d]).collect();
    let gammas = (0..2 * k).map(|j| vec![0.02 * j as f64; d]).collect();
    let critic = CriticK::new(gammas, vec![vec![0.0; d]; k], 0.25, 1.0).unwrap();
    let noise = ModelNoise::draw(4, 0, n, Some(k), 0);
    let mut group = c.benchmark_group("objective_k");
    group.throughput(Throughput::Elements(n as u64));
    for (name, exec) in policies() {
        group.bench_function(name, |b| {
            b.iter(|| objective_k_with(exec, black_box(&data), &betas, &critic, &noise, 1.0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, objective, objective_general);
criterion_main!(benches);

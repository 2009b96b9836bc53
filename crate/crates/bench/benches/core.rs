use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use pmdp_core::metrics::{discrete_mi, kmeans, quantile_bins};
use pmdp_core::schedule::Trainer;
use pmdp_core::{Dataset, Streams, Tensor, TrainConfig};
use rand::Rng as _;

fn train_step(c: &mut Criterion) {
    let mut cfg = TrainConfig::new(30_000);
    cfg.model.latent_dim = 6;
    cfg.model.num_subspaces = 4;
    let dataset = Dataset::new(cfg.dataset.clone()).unwrap();
    let mut trainer = Trainer::new(&cfg, &dataset).unwrap();
    // Step past warm-up so every loss term is on the tape.
    while trainer.step_index() < 15_000 {
        trainer.step().unwrap();
    }
    c.bench_function("train_step_all_terms", |b| {
        b.iter(|| trainer.step().unwrap())
    });
}

fn clustering(c: &mut Criterion) {
    let mut rng = Streams::new(0).stream("bench");
    let data: Vec<f64> = (0..10_000 * 6).map(|_| rng.random::<f64>()).collect();
    let points = Tensor::matrix(10_000, 6, data).unwrap();
    c.bench_function("kmeans_10k_x6_b10", |b| {
        b.iter_batched(
            || Streams::new(1).stream("kmeans"),
            |mut r| kmeans(&points, 10, &mut r).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn mutual_information(c: &mut Criterion) {
    let mut rng = Streams::new(0).stream("bench");
    let values: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
    let factor: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..10)).collect();
    c.bench_function("quantile_bins_10k", |b| {
        b.iter(|| quantile_bins(&values, 20).unwrap())
    });
    let binned = quantile_bins(&values, 20).unwrap();
    c.bench_function("discrete_mi_10k", |b| {
        b.iter(|| discrete_mi(&binned, &factor).unwrap())
    });
}

criterion_group!(benches, train_step, clustering, mutual_information);
criterion_main!(benches);

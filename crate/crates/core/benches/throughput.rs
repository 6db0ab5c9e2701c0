use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mixgan_core::adversarial::{sample, GanConfig, JointTrainer};
use mixgan_core::datamodel::{MixedBatch, ModelBundle};
use mixgan_core::dualvae::{pretrain, VaeConfig};
use mixgan_core::evalsuite::{median_pairwise_distance, mixed_features, mmd, MmdConfig};
use mixgan_core::ingest::{make_fixture, FixtureSpec};
use rayon::{ThreadPool, ThreadPoolBuilder};
use std::hint::black_box;

fn pools() -> Vec<(&'static str, ThreadPool)> {
    let all = ThreadPoolBuilder::new().build().unwrap();
    let one = ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    vec![("sequential", one), ("parallel", all)]
}

fn setup() -> (MixedBatch, ModelBundle, GanConfig) {
    let data = make_fixture(&FixtureSpec { n_patients: 256, seed: 3, ..Default::default() })
        .unwrap()
        .batch;
    let vae = VaeConfig { epochs: 1, hidden: 16, latent_dim: 16, ..Default::default() };
    let pre = pretrain(&data, &vae, 3).unwrap();
    let gan = GanConfig { iterations: 0, seed: 3, ..Default::default() };
    (data, pre.bundle, gan)
}

fn bench_mmd(c: &mut Criterion) {
    let flat = |seed| {
        let fx = make_fixture(&FixtureSpec { n_patients: 400, seed, ..Default::default() }).unwrap();
        mixed_features(&fx.batch).flatten()
    };
    let (a, b) = (flat(1), flat(2));
    let cfg = MmdConfig::default();

    let mut group = c.benchmark_group("mmd");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("median", name), |bch| {
            pool.install(|| bch.iter(|| median_pairwise_distance(black_box(&a), black_box(&b))))
        });
        group.bench_function(BenchmarkId::new("mmd", name), |bch| {
            pool.install(|| bch.iter(|| mmd(black_box(&a), black_box(&b), &cfg).unwrap()))
        });
    }
    group.finish();
}

fn bench_gan(c: &mut Criterion) {
    let (data, pre, cfg) = setup();
    let trained = JointTrainer::new(&data, &pre, &cfg, None).unwrap().finish().bundle;
    let t = data.t();

    let mut group = c.benchmark_group("gan");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("sample_512", name), |bch| {
            pool.install(|| bch.iter(|| sample(&trained, 512, t, None, 11).unwrap()))
        });
        group.bench_function(BenchmarkId::new("iteration", name), |bch| {
            pool.install(|| {
                let mut trainer = JointTrainer::new(&data, &pre, &cfg, None).unwrap();
                bch.iter(|| trainer.iterate().unwrap().loss_d)
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_mmd, bench_gan);
criterion_main!(benches);

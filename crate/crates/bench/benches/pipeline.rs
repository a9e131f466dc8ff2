use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use ordiq::encoder::{backward, forward, init_model, EncoderConfig, EncoderKind};
use ordiq::objective::LossConfig;
use ordiq::retrieval::{build_store, classify, LabelRankMatrix};
use ordiq::stats::{kendall_tau_b, RankStatKind, TestConfig};
use ordiq::trainer::{train, LossKind, OptimizerKind, TrainConfig};

use ordiq_bench::bench_dataset;

fn encoder_config(kind: EncoderKind) -> EncoderConfig {
    EncoderConfig {
        kind,
        n_channels: 3,
        hidden_dim: 32,
        embed_dim: 16,
        window_length: 10,
        seed: 7,
    }
}

fn bench_encoder(c: &mut Criterion) {
    let (_, data) = bench_dataset(4);
    let segment = &data[0];
    let mut group = c.benchmark_group("encoder");
    for (name, kind) in [
        ("mlp", EncoderKind::MeanPoolMlp),
        ("birnn", EncoderKind::BiRecurrent),
    ] {
        let model = init_model(&encoder_config(kind)).unwrap();
        group.bench_with_input(BenchmarkId::new("forward", name), segment, |b, seg| {
            b.iter(|| forward(black_box(&model), black_box(seg)).unwrap())
        });
        let grad = vec![0.3; 16];
        group.bench_with_input(BenchmarkId::new("backward", name), segment, |b, seg| {
            b.iter(|| backward(black_box(&model), black_box(seg), black_box(&grad)).unwrap())
        });
    }
    group.finish();
}

fn bench_rank_stats(c: &mut Criterion) {
    let mut group = c.benchmark_group("kendall_tau_b");
    for n in [8usize, 64, 512] {
        let x: Vec<f64> = (0..n).map(|i| ((i * 37) % 19) as f64).collect();
        let y: Vec<f64> = (0..n).map(|i| ((i * 11) % 23) as f64).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| kendall_tau_b(black_box(&x), black_box(&y)).unwrap())
        });
    }
    group.finish();
}

fn bench_classify(c: &mut Criterion) {
    let (space, data) = bench_dataset(30);
    let space = space.with_missing(&[space.resolve("c3").unwrap()]).unwrap();
    let train_data: Vec<_> = data
        .iter()
        .filter(|s| !space.is_missing(s.label().unwrap()))
        .cloned()
        .collect();
    let model = init_model(&encoder_config(EncoderKind::MeanPoolMlp)).unwrap();
    let store = build_store(&model, &train_data, &space).unwrap();
    let matrix = LabelRankMatrix::new(&space).unwrap();
    let probe = forward(&model, &data[5]).unwrap();
    let cfg = TestConfig { alpha: 0.05 };
    c.bench_function("classify", |b| {
        b.iter(|| {
            classify(
                black_box(&store),
                black_box(&matrix),
                black_box(&probe),
                &space,
                RankStatKind::KendallTauB,
                &cfg,
            )
            .unwrap()
        })
    });
}

fn bench_train_epoch(c: &mut Criterion) {
    let (space, data) = bench_dataset(16);
    let cfg = TrainConfig {
        batch_size: 32,
        learning_rate: 0.005,
        epochs: 1,
        loss_kind: LossKind::OrdinalQuadruplet,
        optimizer: OptimizerKind::adam_default(),
        seed: 1,
        loss_cfg: LossConfig::default(),
        max_per_anchor: 2,
    };
    c.bench_function("train_epoch_mlp", |b| {
        b.iter(|| {
            let model = init_model(&encoder_config(EncoderKind::MeanPoolMlp)).unwrap();
            train(model, black_box(&data), &cfg, &space).unwrap()
        })
    });
}

criterion_group!(
    benches,
    bench_encoder,
    bench_rank_stats,
    bench_classify,
    bench_train_epoch
);
criterion_main!(benches);

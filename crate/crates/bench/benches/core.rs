use std::hint::black_box;

use avqa_core::harness::{gradcheck_batch, gradcheck_model};
use avqa_core::metrics::{fit_logistic4, srocc, wilcoxon_exact};
use avqa_core::model::{ClipSample, Model, ModelConfig};
use avqa_core::synth::{generate_set, GeneratorSpec, ScenarioMix};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

fn batch(cfg: &ModelConfig, n: usize) -> Vec<ClipSample> {
    let spec = GeneratorSpec::for_config(cfg, 0);
    generate_set(n, &ScenarioMix::default(), &spec, 0)
        .unwrap()
        .into_iter()
        .map(|c| c.sample)
        .collect()
}

fn model(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let clips = batch(&cfg, 6);
    let refs: Vec<&ClipSample> = clips.iter().collect();
    let model = Model::new(cfg).unwrap();
    c.bench_function("forward batch 6", |b| b.iter(|| model.scores(black_box(&clips)).unwrap()));
    c.bench_function("forward+backward batch 6", |b| {
        b.iter_batched(
            || model.clone(),
            |mut m| m.loss_and_grad(black_box(&refs)).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn synth(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let spec = GeneratorSpec::for_config(&cfg, 0);
    c.bench_function("generate 30 clips", |b| {
        b.iter(|| generate_set(30, &ScenarioMix::default(), &spec, black_box(7)).unwrap())
    });
}

fn statistics(c: &mut Criterion) {
    let x: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
    let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * v + 0.01 * (i % 7) as f64).collect();
    c.bench_function("srocc n=200", |b| b.iter(|| srocc(black_box(&x), black_box(&y)).unwrap()));
    c.bench_function("logistic fit n=200", |b| b.iter(|| fit_logistic4(black_box(&x), black_box(&y)).unwrap()));
    let a: Vec<f64> = (0..20).map(|i| 0.1 * i as f64).collect();
    let d: Vec<f64> = a.iter().enumerate().map(|(i, v)| v + 0.01 * (i as f64 - 6.5)).collect();
    c.bench_function("exact wilcoxon n=20", |b| {
        b.iter(|| wilcoxon_exact(black_box(&a), black_box(&d)).unwrap())
    });
}

fn gradcheck(c: &mut Criterion) {
    let cfg = ModelConfig {
        channels: 8,
        audio_dim: 4,
        fusion_hidden: 8,
        ..ModelConfig::default()
    };
    let clips = gradcheck_batch(&cfg, 2, 0).unwrap();
    let mut g = c.benchmark_group("gradcheck");
    g.sample_size(10);
    g.bench_function("small model batch 2", |b| {
        b.iter(|| gradcheck_model(&cfg, black_box(&clips), 1e-5, None).unwrap())
    });
    g.finish();
}

criterion_group!(benches, model, synth, statistics, gradcheck);
criterion_main!(benches);

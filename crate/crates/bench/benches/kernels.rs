use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use lesiongen::metrics::ssim;
use lesiongen::{connected_components, dilate, BinaryMask3D, Connectivity, GeneratorConfig, GeneratorModel, SsimParams};
use lesiongen_bench::{blob_mask, input_batch, ramp_volume};

fn generator(c: &mut Criterion) {
    let config = GeneratorConfig { patch_size: 16, patch_stride: 8, base_width: 8, batch_size: 16, ..GeneratorConfig::default() };
    let model = GeneratorModel::<f32>::new(config.clone()).unwrap();
    let t1 = input_batch(config.input_channels, config.batch_size, config.patch_size);
    let flair = input_batch(config.input_channels, config.batch_size, config.patch_size);
    c.bench_function("generator_infer_16x16x16", |b| b.iter(|| model.infer(black_box(&t1), black_box(&flair)).unwrap()));
    let target = input_batch(1, config.batch_size, config.patch_size);
    c.bench_function("generator_loss_and_gradient_16x16x16", |b| {
        b.iter(|| model.loss_and_gradient(black_box(&t1), &flair, &target, &target).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let a = ramp_volume([48, 48, 8]);
    let b = a.with_data(a.data().iter().map(|v| v * 0.9 + 0.05).collect()).unwrap();
    let region = BinaryMask3D::full(a.grid().clone());
    c.bench_function("ssim_global_48x48x8", |bch| bch.iter(|| ssim(&a, &b, &region, &SsimParams::default()).unwrap()));
    c.bench_function("ssim_window7_48x48x8", |bch| bch.iter(|| ssim(&a, &b, &region, &SsimParams::windowed(7)).unwrap()));
}

fn morphology(c: &mut Criterion) {
    let mask = blob_mask([64, 64, 32]);
    c.bench_function("components26_64x64x32", |b| b.iter(|| connected_components(black_box(&mask), Connectivity::Volume26)));
    c.bench_function("dilate2_64x64x32", |b| b.iter(|| dilate(black_box(&mask), 2, Connectivity::Volume26)));
}

criterion_group!(benches, generator, metrics, morphology);
criterion_main!(benches);

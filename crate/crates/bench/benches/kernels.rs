use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use natmu_core::builder::{build_unlearning_set, BuildOptions};
use natmu_core::data::{split_forget, synth_blobs, BlobParams, Dataset, ForgettingSpec};
use natmu_core::mask::four_masks;
use natmu_core::nn::{backward, Architecture, LossKind, Model};

fn blobs() -> Dataset {
    synth_blobs(&BlobParams {
        classes: 10,
        per_class: 50,
        height: 16,
        width: 16,
        channels: 1,
        spread: 0.5,
        seed: 1,
    })
    .expect("valid blob parameters")
}

fn model(data: &Dataset) -> Model {
    Model::new(&Architecture::desk(data.shape.len(), data.classes), 1).expect("valid architecture")
}

fn forward_backward(c: &mut Criterion) {
    let data = blobs();
    let model = model(&data);
    let batch = &data.instances[..64];
    let flat: Vec<f32> = batch.iter().flat_map(|i| i.pixels().iter().copied()).collect();
    let inputs: Vec<&[f32]> = batch.iter().map(|i| i.pixels()).collect();
    let labels: Vec<_> = batch.iter().map(|i| i.label.clone()).collect();
    c.bench_function("forward_batch64", |b| b.iter(|| model.forward(black_box(&flat)).unwrap()));
    c.bench_function("backward_batch64", |b| {
        b.iter(|| backward(&model, black_box(&inputs), &labels, LossKind::Hard).unwrap())
    });
}

fn masks(c: &mut Criterion) {
    c.bench_function("four_masks_32x32", |b| b.iter(|| four_masks(black_box(32), 32, -0.031).unwrap()));
}

fn build(c: &mut Criterion) {
    let data = blobs();
    let model = model(&data);
    let (forget, remaining) = split_forget(&data, &ForgettingSpec::random(0.02, 3), None).unwrap();
    let set = four_masks(16, 16, 0.0).unwrap();
    c.bench_function("build_unlearning_set_10x4", |b| {
        b.iter_batched(
            || BuildOptions::natmu(4, 5),
            |options| build_unlearning_set(&forget, &remaining, &model, &set, &options).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, forward_backward, masks, build);
criterion_main!(benches);

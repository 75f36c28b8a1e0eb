use criterion::{criterion_group, criterion_main, Criterion};

use lungfuse_bench::{random_ensemble, random_image};
use lungfuse_core::nn::Ctx;
use lungfuse_core::{Classifier, Variant};

fn ensembles(c: &mut Criterion) {
    let x = random_image(0).expect("input");
    let mut group = c.benchmark_group("forward_batch1");
    group.sample_size(10);
    for variant in [Variant::Cvdnet1, Variant::Cvdnet3] {
        let model = random_ensemble(variant, 0).expect("model");
        group.bench_function(variant.slug(), |b| {
            b.iter(|| model.logits(&x, &Ctx::eval()).expect("forward"))
        });
    }
    group.finish();
}

fn head_only(c: &mut Criterion) {
    let model = random_ensemble(Variant::Cvdnet3, 0).expect("model");
    let features = model.features(&random_image(1).expect("input")).expect("features");
    c.bench_function("head_forward_2336x7x7", |b| {
        b.iter(|| model.head_logits(&features, &Ctx::eval()).expect("head"))
    });
}

criterion_group!(benches, head_only, ensembles);
criterion_main!(benches);

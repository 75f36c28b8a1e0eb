use criterion::{black_box, criterion_group, criterion_main, Criterion};

use lungfuse_core::fusion::weighted_cross_entropy;
use lungfuse_core::{macro_average, ConfusionMatrix3};

fn metrics(c: &mut Criterion) {
    let cm = ConfusionMatrix3::new([[216, 3, 0], [2, 1324, 15], [4, 50, 1291]]);
    c.bench_function("macro_average", |b| b.iter(|| macro_average(black_box(&cm))));

    let probs: Vec<[f64; 3]> = (0..1024).map(|i| {
        let a = (i % 7) as f64 + 1.0;
        let s = a + 2.0 + 3.0;
        [a / s, 2.0 / s, 3.0 / s]
    }).collect();
    let labels: Vec<usize> = (0..1024).map(|i| i % 3).collect();
    c.bench_function("weighted_cross_entropy_1024", |b| {
        b.iter(|| weighted_cross_entropy(black_box(&probs), &labels, &[0.75, 0.1, 0.15]))
    });
}

criterion_group!(benches, metrics);
criterion_main!(benches);

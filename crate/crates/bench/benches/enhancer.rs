use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fqpe_core::autodiff::{PadMode, Tape};
use fqpe_core::harness::{synthetic_corpus, train, TrainConfig};
use fqpe_core::pipeline::{enhance, init_weights, RunConfig};
use fqpe_core::pyramid::{decompose, reconstruct};
use fqpe_core::Tensor;

fn ramp(shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |i| ((i * 7919) % 1000) as f32 / 1000.0).unwrap()
}

fn conv(c: &mut Criterion) {
    let x = ramp(&[24, 96, 96]);
    let k = ramp(&[24, 24, 3, 3]);
    let b = ramp(&[24]);
    c.bench_function("conv2d 24->24 96x96 forward", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let (xv, kv, bv) = (
                tape.leaf(x.clone()),
                tape.leaf(k.clone()),
                tape.leaf(b.clone()),
            );
            black_box(tape.conv2d(xv, kv, bv, 1, PadMode::Zero).unwrap());
        })
    });
    c.bench_function("conv2d 24->24 96x96 forward+backward", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let (xv, kv, bv) = (
                tape.leaf(x.clone()),
                tape.leaf(k.clone()),
                tape.leaf(b.clone()),
            );
            let y = tape.conv2d(xv, kv, bv, 1, PadMode::Zero).unwrap();
            let s = tape.sum(y).unwrap();
            black_box(tape.backward(s).unwrap());
        })
    });
}

fn pyramid(c: &mut Criterion) {
    let img = ramp(&[3, 256, 192]);
    c.bench_function("decompose+reconstruct 256x192 L=4", |bench| {
        bench.iter(|| black_box(reconstruct(&decompose(&img, 4).unwrap()).unwrap()))
    });
}

fn pipeline(c: &mut Criterion) {
    let img = ramp(&[3, 256, 192]);
    let w = init_weights(0, &RunConfig::default()).unwrap();
    c.bench_function("enhance 256x192 L=4", |bench| {
        bench.iter(|| black_box(enhance(&img, &w).unwrap()))
    });

    let corpus = synthetic_corpus(4, 96, 1);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 4,
        single_thread: true,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("epoch of 3 images 96x96 L=4", |bench| {
        bench.iter(|| black_box(train(&cfg, &corpus, |_| {}).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, conv, pyramid, pipeline);
criterion_main!(benches);

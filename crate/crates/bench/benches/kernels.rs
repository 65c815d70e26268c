use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use guicode_bench::random_tensor;
use guicode_core::tensor::{
    conv2d, dense, lstm_step, maxpool2d, softmax, LstmState, LstmWeights,
};
use std::hint::black_box;

fn bench_conv2d(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d");
    for (size, cin, cout) in [(64, 3, 8), (32, 8, 16), (16, 16, 32)] {
        let x = random_tensor(&[size, size, cin], 1);
        let k = random_tensor(&[3, 3, cin, cout], 2);
        let b = random_tensor(&[cout], 3);
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{size}x{size}x{cin}->{cout}")),
            &(x, k, b),
            |bench, (x, k, b)| bench.iter(|| conv2d(black_box(x), k, b).unwrap()),
        );
    }
    group.finish();
}

fn bench_maxpool(c: &mut Criterion) {
    let x = random_tensor(&[64, 64, 8], 4);
    c.bench_function("maxpool2d 64x64x8", |b| {
        b.iter(|| maxpool2d(black_box(&x)).unwrap())
    });
}

fn bench_dense(c: &mut Criterion) {
    let x = random_tensor(&[2048], 5);
    let w = random_tensor(&[2048, 128], 6);
    let b = random_tensor(&[128], 7);
    c.bench_function("dense 2048->128", |bench| {
        bench.iter(|| dense(black_box(&x), &w, &b).unwrap())
    });
    let y = random_tensor(&[18], 8);
    c.bench_function("softmax 18", |bench| {
        bench.iter(|| softmax(black_box(y.data())).unwrap())
    });
}

fn bench_lstm(c: &mut Criterion) {
    let mut w = LstmWeights::<f32>::zeros(192, 64);
    for (g, t) in w.input.iter_mut().enumerate() {
        *t = random_tensor(&[192, 64], 10 + g as u64);
    }
    for (g, t) in w.recurrent.iter_mut().enumerate() {
        *t = random_tensor(&[64, 64], 20 + g as u64);
    }
    let x = random_tensor(&[192], 30);
    let state = LstmState::zeros(64);
    c.bench_function("lstm_step 192->64", |b| {
        b.iter(|| lstm_step(black_box(x.data()), &state, &w).unwrap())
    });
}

criterion_group!(kernels, bench_conv2d, bench_maxpool, bench_dense, bench_lstm);
criterion_main!(kernels);

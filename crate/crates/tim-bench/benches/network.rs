//! Forward/backward throughput and the full training step, with the
//! derivative estimator on and off.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use tim_bench::{default_spec, flagship_network, mixture_trainer};
use tim_core::trainer::DerivativeSource;

fn bench_forward(c: &mut Criterion) {
    let net = flagship_network();
    let spec = default_spec();
    let params = net.init_params::<f32>(1);
    let batch = 128;
    let x = vec![0.1f32; batch * 2];
    let t = vec![0.6f64; batch];
    let r = vec![0.2f64; batch];
    c.bench_function("forward_b128", |b| {
        b.iter(|| net.forward(black_box(&params), &spec, black_box(&x), &t, &r, &[]).unwrap())
    });
    c.bench_function("forward_backward_b128", |b| {
        b.iter(|| {
            let (_, cache) = net.forward_cached(&params, &spec, &x, &t, &r, &[]).unwrap();
            let dout = vec![0.01f32; batch * 2];
            net.backward(&params, &cache, &dout).unwrap()
        })
    });
}

fn bench_train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step_b128");
    group.sample_size(20);
    group.bench_function("derivative_estimator", |b| {
        let mut tr = mixture_trainer(128);
        b.iter(|| tr.train_step(DerivativeSource::Dde).unwrap())
    });
    group.bench_function("zero_injected", |b| {
        let mut tr = mixture_trainer(128);
        b.iter(|| tr.train_step(DerivativeSource::Inject(vec![0.0; 128 * 2])).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_forward, bench_train_step);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use mpt_bench::{block, desk_model, random};
use mpt_core::autodiff::Tape;
use mpt_core::blocks::{cswa_forward, sub_block_forward};
use mpt_core::freq::haar_dwt;
use mpt_core::network::mpt_eval;
use mpt_core::tensor::kernels::gemm;
use mpt_core::tensor::ops::conv2d;

fn bench_gemm(c: &mut Criterion) {
    let mut g = c.benchmark_group("gemm");
    for n in [64usize, 128, 256] {
        let a = random(&[n, n], 1);
        let b = random(&[n, n], 2);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bch, &n| {
            let mut out = vec![0.0f32; n * n];
            bch.iter(|| gemm(n, n, n, a.data(), false, b.data(), false, black_box(&mut out)))
        });
    }
    g.finish();
}

fn bench_conv(c: &mut Criterion) {
    let x = random(&[1, 64, 64, 16], 3);
    let w = random(&[3, 3, 16, 16], 4);
    let dw = random(&[3, 3, 1, 16], 5);
    c.bench_function("conv2d_3x3_16ch_64", |b| b.iter(|| conv2d(black_box(&x), &w, None, 1, 1, 1).unwrap()));
    c.bench_function("conv2d_depthwise_64", |b| b.iter(|| conv2d(black_box(&x), &dw, None, 1, 1, 16).unwrap()));
}

fn bench_haar(c: &mut Criterion) {
    let x = random(&[256, 256, 3], 6);
    c.bench_function("haar_dwt_256", |b| b.iter(|| haar_dwt(black_box(&x)).unwrap()));
}

fn bench_cswa(c: &mut Criterion) {
    let mut g = c.benchmark_group("cswa_forward_32x32x16");
    let x = random(&[1, 32, 32, 16], 7);
    for ratio in [1usize, 2, 4] {
        let (spec, store) = block(16, 2, 4, ratio);
        g.bench_with_input(BenchmarkId::from_parameter(format!("1/{}", ratio)), &ratio, |b, _| {
            b.iter(|| {
                let tape = Tape::no_grad();
                let p = store.leaves(&tape);
                cswa_forward(&tape.constant(x.clone()), &p, "b", &spec).unwrap().to_tensor()
            })
        });
    }
    g.finish();
}

fn bench_sub_block_backward(c: &mut Criterion) {
    let x = random(&[2, 32, 32, 16], 8);
    let (spec, store) = block(16, 2, 4, 2);
    c.bench_function("sub_block_forward_backward", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let p = store.leaves(&tape);
            let y = sub_block_forward(&tape.constant(x.clone()), &p, "b", &spec).unwrap();
            let g = tape.backward(&y.mean()).unwrap();
            g.get_or_zeros(p.get("b.cswa.proj.weight").unwrap())
        })
    });
}

fn bench_model(c: &mut Criterion) {
    let (cfg, store) = desk_model();
    let x = random(&[64, 64, 3], 9).map(|v| 0.5 + 0.5 * v);
    c.bench_function("desk_model_eval_64", |b| b.iter(|| mpt_eval(&store, &cfg, black_box(&x)).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_gemm, bench_conv, bench_haar, bench_cswa, bench_sub_block_backward, bench_model
}
criterion_main!(benches);

use std::hint::black_box;

use breathorder::encoder::EncoderConfig;
use breathorder::heads::Method;
use breathorder::motionmask::{tile_flow, GrayFrame, DEFAULT_SEARCH_RADIUS};
use breathorder::posenc::{expm_skew_tensor, DEFAULT_TAYLOR_TERMS};
use breathorder::tensorcore::Tape;
use breathorder::trainer::Model;
use breathorder_bench::{clip_for, matrix, skew_matrix};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [32, 64, 128] {
        let (a, b) = (matrix(n, n, 1), matrix(n, n, 2));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let (x, y) = (tape.constant(a.clone()), tape.constant(b.clone()));
                black_box(tape.matmul(x, y).unwrap());
            })
        });
    }
    group.finish();
}

fn flow(c: &mut Criterion) {
    let config = EncoderConfig::toy();
    let clip = clip_for(&config);
    let (h, w) = (config.resolution, config.resolution);
    let (g0, g1) = (clip.gray(0), clip.gray(1));
    c.bench_function("tile_flow_toy", |bench| {
        bench.iter(|| {
            let prev = GrayFrame::new(h, w, &g0).unwrap();
            let cur = GrayFrame::new(h, w, &g1).unwrap();
            black_box(tile_flow(prev, cur, config.patch_size, DEFAULT_SEARCH_RADIUS).unwrap())
        })
    });
}

fn expm(c: &mut Criterion) {
    let mut group = c.benchmark_group("expm_skew");
    for n in [8, 16] {
        let a = skew_matrix(n, 1.5);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(expm_skew_tensor(&a, DEFAULT_TAYLOR_TERMS).unwrap()))
        });
    }
    group.finish();
}

fn encode(c: &mut Criterion) {
    let config = EncoderConfig::toy();
    let clip = clip_for(&config);
    let model = Model::new(Method::Embedding, &config).unwrap();
    c.bench_function("encode_clip_toy", |bench| {
        bench.iter(|| black_box(model.scores(&[&clip]).unwrap()))
    });
}

criterion_group!(
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = matmul, flow, expm, encode
);
criterion_main!(benches);

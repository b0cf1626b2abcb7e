use cadsketch_bench::sketches;
use cadsketch_core::matcheval::{hungarian, metric_chamfer};
use cadsketch_core::raster::build_pyramid;
use cadsketch_core::rasterize;
use cadsketch_core::sketch::{detokenize, tokenize};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use std::hint::black_box;

fn raster(c: &mut Criterion) {
    let data = sketches(64, 1);
    let mut g = c.benchmark_group("rasterize");
    for size in [64, 128] {
        g.bench_with_input(BenchmarkId::from_parameter(size), &size, |b, &n| {
            b.iter(|| data.iter().map(|(_, s)| rasterize(black_box(s), n, n).mean()).sum::<f64>())
        });
    }
    g.finish();
    let img = rasterize(&data[0].1, 128, 128);
    c.bench_function("pyramid_128", |b| b.iter(|| build_pyramid(black_box(&img)).unwrap()));
}

fn tokens(c: &mut Criterion) {
    let data = sketches(256, 2);
    c.bench_function("tokenize_round_trip_256", |b| {
        b.iter(|| {
            data.iter().map(|(_, s)| detokenize(&tokenize(black_box(s)).unwrap()).dropped()).sum::<usize>()
        })
    });
}

fn matching(c: &mut Criterion) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let mut g = c.benchmark_group("hungarian");
    for n in [7, 16, 64] {
        let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
        g.bench_with_input(BenchmarkId::from_parameter(n), &cost, |b, m| b.iter(|| hungarian(black_box(m)).unwrap()));
    }
    g.finish();
    let data = sketches(2, 4);
    let (a, b_img) = (rasterize(&data[0].1, 128, 128), rasterize(&data[1].1, 128, 128));
    c.bench_function("chamfer_128", |b| b.iter(|| metric_chamfer(black_box(&a), black_box(&b_img)).unwrap()));
}

criterion_group!(benches, raster, tokens, matching);
criterion_main!(benches);

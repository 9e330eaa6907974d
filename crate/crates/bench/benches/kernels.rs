use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lcft::gff::sample_gff;
use lcft::lcft::{kpz_check, Sampler};
use lcft::rng::StreamId;
use lcft::spectral::build_basis_cutoff;
use lcft::ward::{beltrami_solve_linear, CauchyKernelOp, KillingInverse, BELTRAMI_ORDER};
use lcft::{make_surface, Complex64, SurfaceKind};
use lcft_bench::{basis, torus_correlator, torus_data};
use std::hint::black_box;

fn spectral(c: &mut Criterion) {
    let mut g = c.benchmark_group("basis");
    g.sample_size(10);
    for (kind, n, l) in [(SurfaceKind::Torus, 64, 16), (SurfaceKind::Sphere, 64, 16)] {
        let s = make_surface(kind, n).unwrap();
        g.bench_with_input(BenchmarkId::new(kind.name(), l), &l, |b, &l| {
            b.iter(|| build_basis_cutoff(black_box(&s), l).unwrap())
        });
    }
    g.finish();

    let b = basis(SurfaceKind::Torus, 64, 16);
    let x = Complex64::new(0.2, 0.3);
    c.bench_function("green/torus64_l16", |bn| bn.iter(|| b.green(black_box(x), Complex64::new(0.7, 0.6)).unwrap()));
    c.bench_function("gff/sample_and_synthesize_torus64", |bn| {
        let mut i = 0u64;
        bn.iter(|| {
            i += 1;
            sample_gff(&b, StreamId::new(1, i)).nodal_values()
        })
    });
}

fn correlator(c: &mut Criterion) {
    let (model, spec) = torus_correlator(32, 8);
    let mut g = c.benchmark_group("kpz");
    g.sample_size(10);
    g.bench_function("torus32_l8_1000_samples", |b| {
        b.iter(|| kpz_check(&spec, &model, 1000, 7, Sampler::Girsanov).unwrap())
    });
    g.finish();
}

fn transforms(c: &mut Criterion) {
    let n = 128;
    let f = torus_data(n);
    let op = CauchyKernelOp::torus(n).unwrap();
    c.bench_function("cauchy/torus128", |b| b.iter(|| op.transform(black_box(&f), true).unwrap()));
    let mu: Vec<Complex64> = f.iter().map(|v| v * 0.5).collect();
    c.bench_function("beltrami/torus128", |b| b.iter(|| beltrami_solve_linear(black_box(&mu), n, BELTRAMI_ORDER).unwrap()));
    let k = KillingInverse::new(n).unwrap();
    c.bench_function("killing/torus128", |b| b.iter(|| k.apply(black_box(&f))));
}

criterion_group!(benches, spectral, correlator, transforms);
criterion_main!(benches);

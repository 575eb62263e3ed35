use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use confbound::bands::{confidence_band, linear_grid, BandOptions};
use confbound::boundary::{trace_boundary_2d, trace_boundary_3d};
use confbound::gridoracle::{grid_level_set, grid_scan};
use confbound::model::FnDensity;
use confbound::{Boundary, MeshOptions, RegionSpec, TraceOptions};
use confbound_bench::{Problem, Quadratic};

fn trace_by_tolerance(c: &mut Criterion) {
    let p = Problem::builtin("toy-repar-4").unwrap();
    let d = p.density();
    let spec = p.spec(1.0).unwrap();
    let seed = p.seed(&spec).unwrap();
    let mut g = c.benchmark_group("trace_2d");
    for rtol in [1e-6, 1e-8, 1e-10] {
        g.bench_with_input(BenchmarkId::from_parameter(rtol), &rtol, |b, &rtol| {
            b.iter(|| trace_boundary_2d(&d, &spec, &seed, &TraceOptions::with_rtol(rtol)).unwrap())
        });
    }
    g.finish();
}

fn marching_squares(c: &mut Criterion) {
    let p = Problem::builtin("toy-repar-4").unwrap();
    let d = p.density();
    let spec = p.spec(1.0).unwrap();
    let m = &p.fit.theta_mle;
    let bbox = [(m[0] - 1.5, m[0] + 1.5), (m[1] - 1.5, m[1] + 1.5)];
    let mut g = c.benchmark_group("marching_squares");
    g.sample_size(10);
    for h in [101, 201] {
        g.bench_with_input(BenchmarkId::from_parameter(h), &h, |b, &h| {
            b.iter(|| grid_level_set(&d, &spec, bbox, h, spec.threshold).unwrap())
        });
    }
    g.finish();
}

fn quadratic_scaling(c: &mut Criterion) {
    let mut g = c.benchmark_group("quadratic_3d");
    g.sample_size(10);
    let d = FnDensity::new(Quadratic(3), 3);
    let spec = RegionSpec::new(vec![0.0; 3], 0.0, confbound::ConfidenceLevel::from_sigma(1.0).unwrap(), 3).unwrap();
    for h in [16, 32] {
        let opts = MeshOptions {
            trace: TraceOptions { max_step: Some(std::f64::consts::TAU / h as f64), ..TraceOptions::with_rtol(1e-4) },
            slices: h,
            ring_points: h,
        };
        g.bench_with_input(BenchmarkId::new("mesh", h), &h, |b, _| {
            b.iter(|| trace_boundary_3d(&d, &spec, None, &opts).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("grid", h), &h, |b, &h| {
            b.iter(|| grid_scan(&d, &[(-3.0, 3.0); 3], h).unwrap())
        });
    }
    g.finish();
}

fn linear_band(c: &mut Criterion) {
    let p = Problem::builtin("toy-linear").unwrap();
    let d = p.density();
    let spec = p.spec(1.0).unwrap();
    let seed = p.seed(&spec).unwrap();
    let curve = trace_boundary_2d(&d, &spec, &seed, &TraceOptions::with_rtol(1e-8)).unwrap();
    let boundary = Boundary::Curve(curve);
    let xs = linear_grid(0.0, 10.0, 200);
    c.bench_function("band_linear_200", |b| {
        b.iter(|| confidence_band(&p.model, &boundary, &p.fit.theta_mle, &xs, &BandOptions::default()).unwrap())
    });
}

criterion_group!(benches, trace_by_tolerance, marching_squares, quadratic_scaling, linear_band);
criterion_main!(benches);

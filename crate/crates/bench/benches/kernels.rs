use bbs_core::dynamics::{evolve, soliton_content};
use bbs_core::ensemble::{sample_initial, Protocol};
use bbs_core::ghd::{dress, solve_domain_wall_densities, FillingVector, WidthSector};
use bbs_core::tba::{solve_y_system, GgeSpec};
use bbs_core::Level;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn dynamics(c: &mut Criterion) {
    let mut g = c.benchmark_group("evolve");
    for len in [10_000usize, 100_000] {
        let p = Protocol::domain_wall(len, 3, 0.3, 0.3, vec![0], 1, 1);
        let state = sample_initial(&p, 0).unwrap();
        for l in [3u32, 100] {
            g.bench_with_input(BenchmarkId::new(format!("l={l}"), len), &state, |b, s| b.iter(|| evolve(black_box(s), Level::Finite(l)).unwrap()));
        }
    }
    g.finish();
    let p = Protocol::domain_wall(100_000, 3, 0.3, 0.3, vec![0], 1, 1);
    let state = sample_initial(&p, 0).unwrap();
    c.bench_function("soliton_content/100000", |b| b.iter(|| soliton_content(black_box(&state)).unwrap()));
}

fn hydrodynamics(c: &mut Criterion) {
    let y: Vec<f64> = (1..=200).map(|j| 0.6f64.powi(j) * 3.0).collect();
    let f = FillingVector::truncated(y).unwrap();
    let o: Vec<f64> = (1..=200).map(|j| j as f64).collect();
    c.bench_function("dress/200", |b| b.iter(|| dress(black_box(&f), black_box(&o)).unwrap()));
    c.bench_function("domain_wall/l=3", |b| b.iter(|| solve_domain_wall_densities(black_box(0.3), 0.0, 3, WidthSector::Right).unwrap()));
    let spec = GgeSpec::new(vec![0.8, 0.4, 0.2], 0.1).unwrap();
    c.bench_function("y_system/3", |b| b.iter(|| solve_y_system(black_box(&spec), 1e-12).unwrap()));
}

criterion_group!(benches, dynamics, hydrodynamics);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, Criterion};
use fieldinv::forward::diffusion::{solve_diffusion, DiffusionConfig};
use fieldinv::forward::eikonal::{predict_traveltimes, solve_eikonal, synthetic_velocity, FmmOrder, TomoGeometry, VelocityPreset};
use fieldinv::SpatialGrid;
use std::hint::black_box;

fn bench_diffusion(c: &mut Criterion) {
    let cfg = DiffusionConfig::default();
    let nu: Vec<f64> = (0..201).map(|i| (0.5 * (6.0 * i as f64 / 200.0).sin()).exp()).collect();
    c.bench_function("diffusion_default", |b| b.iter(|| solve_diffusion(black_box(&nu), &cfg).unwrap()));
}

fn bench_eikonal(c: &mut Criterion) {
    let mut group = c.benchmark_group("eikonal");
    for n in [61usize, 101] {
        let grid = SpatialGrid::tensor_2d((0.0, 125.0, n), (0.0, 125.0, n)).unwrap();
        let v = synthetic_velocity(VelocityPreset::Base, &grid).unwrap();
        for order in [FmmOrder::First, FmmOrder::Second] {
            group.bench_function(format!("single_source_{n}_{order:?}"), |b| {
                b.iter(|| solve_eikonal(&grid, black_box(&v), [12.5, 12.5], order).unwrap())
            });
        }
        let geom = TomoGeometry::standard(125.0, 125.0, n, n);
        group.bench_function(format!("traveltimes_{n}"), |b| b.iter(|| predict_traveltimes(black_box(&v), &grid, &geom).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_diffusion, bench_eikonal);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, Criterion};
use fieldinv::chaos::ProjectionGrid;
use fieldinv::chaos::Family;
use fieldinv::sampler::{mh_step, Mode, Posterior, PriorModel};
use fieldinv::HyperParams;
use fieldinv_bench::{td_basis, td_prior_surrogates, td_spec, toy_surrogate};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn bench_sparse_grid(c: &mut Criterion) {
    c.bench_function("smolyak_d21_l2", |b| b.iter(|| ProjectionGrid::smolyak(&[Family::Hermite; 21], black_box(2)).unwrap()));
}

fn bench_surrogates(c: &mut Criterion) {
    let basis = td_basis();
    let prior = td_prior_surrogates(&basis, 15);
    c.bench_function("prior_eval_r8_order15", |b| b.iter(|| prior.eval(black_box(HyperParams::new(0.5, 0.3))).unwrap()));
    let fwd = toy_surrogate(21, 115, 2);
    let x = vec![0.3; 21];
    c.bench_function("forward_eval_d21_l2", |b| b.iter(|| fwd.eval(black_box(&x)).unwrap()));
}

fn bench_mh_step(c: &mut Criterion) {
    let basis = td_basis();
    let prior = td_prior_surrogates(&basis, 15);
    let fwd = toy_surrogate(8, 234, 3);
    let data = fwd.eval(&[0.1; 8]).unwrap();
    let post = Posterior::new(td_spec(), data, Mode::Com, &fwd, &prior, None).unwrap();
    let init = post.layout.pack(&[0.0; 8], HyperParams::new(0.5, 0.26), None, 0.1);
    let mut state = post.evaluate(&init).unwrap().unwrap();
    let chol = DMatrix::identity(post.layout.dim(), post.layout.dim()) * 0.01;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut step = 0;
    c.bench_function("mh_step_td_com", |b| {
        b.iter(|| {
            step += 1;
            mh_step(&post, &mut state, &chol, &mut rng, step).unwrap()
        })
    });
}

criterion_group!(benches, bench_sparse_grid, bench_surrogates, bench_mh_step);
criterion_main!(benches);

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use osl_core::cocycle::{cocycle_product_scaled, sample_onestep, MatrixDistribution};
use osl_core::dist::ScalarDist;
use osl_core::flexible::{
    budget_fit_pieces, decompose_eta, example_eta_four_cells, plan_flexible, Mode,
};
use osl_core::geometry::{interp_matrix, section_rho, svd2, Mat2, SplittingPair};
use osl_core::oseledets::{estimate_e1_backward, lyapunov_estimates, sample_dyadic_y};
use osl_core::rng::rng_from_seed;

fn geometry(c: &mut Criterion) {
    let g = Mat2::new(1.3, -0.4, 2.2, 0.7);
    c.bench_function("svd2", |b| b.iter(|| svd2(black_box(&g))));
    let x = section_rho(&SplittingPair::from_angles(0.2, 1.1).unwrap());
    let y = section_rho(&SplittingPair::from_angles(2.0, 2.9).unwrap());
    c.bench_function("interp_matrix", |b| {
        b.iter(|| interp_matrix(black_box(&x), black_box(&y)))
    });
}

fn products(c: &mut Criterion) {
    let nu = MatrixDistribution::Triangular {
        phi: ScalarDist::constant(1.0),
        psi: ScalarDist::Dyadic,
    };
    let w = sample_onestep(&nu, 50_000, 1).unwrap();
    c.bench_function("product_100k", |b| {
        b.iter(|| cocycle_product_scaled(black_box(&w), w.start(), w.len() as i64))
    });
    c.bench_function("lyapunov_100k", |b| {
        b.iter(|| lyapunov_estimates(black_box(&w)))
    });
    c.bench_function("e1_depth_60", |b| {
        b.iter(|| estimate_e1_backward(black_box(&w), 60))
    });
    c.bench_function("dyadic_y", |b| {
        b.iter_batched(
            || rng_from_seed(7),
            |mut rng| sample_dyadic_y(&mut rng),
            BatchSize::SmallInput,
        )
    });
}

fn construction(c: &mut Criterion) {
    let eta = example_eta_four_cells();
    let pieces = decompose_eta(&eta).unwrap();
    c.bench_function("budget_fit_4", |b| {
        b.iter(|| budget_fit_pieces(black_box(&pieces), 0.5))
    });
    let plan = plan_flexible(&eta, 0.5, -0.5, Mode::Bounded { budget: 0.5 }).unwrap();
    c.bench_function("bounded_10k_steps", |b| {
        b.iter(|| plan.simulate(10_000, black_box(3)))
    });
}

criterion_group!(benches, geometry, products, construction);
criterion_main!(benches);

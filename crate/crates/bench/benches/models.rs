use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nalgebra::{DMatrix, DVector, Matrix5, Vector2, Vector5};
use skidgp::ensemble::{solve_weights, EnsembleWeights, SolverOptions, WeightProblem};
use skidgp::eval::{sweep_errors, MotionModel};
use skidgp::gp::{GpHyperparams, GpModel};
use skidgp::propagation::{propagate_horizon, propagate_step, ResidualModel, SigmaConfig};
use skidgp::{Control, GaussianBelief};
use skidgp_bench::{regression, terrain};

fn gp(c: &mut Criterion) {
    let hyper = GpHyperparams::new(&[1.0; 4], 1.0, 0.01).unwrap();
    let (x, y) = regression(100, 4, 1);
    c.bench_function("gp_fit_p100", |b| b.iter(|| GpModel::fit(black_box(&x), black_box(&y), &hyper).unwrap()));
    let model = GpModel::fit(&x, &y, &hyper).unwrap();
    let q = [0.3, -0.2, 0.5, 1.0];
    c.bench_function("gp_predict_p100", |b| b.iter(|| model.predict(black_box(&q)).unwrap()));
}

fn weights(c: &mut Criterion) {
    let k = 10;
    let f = DMatrix::from_fn(k, 3, |i, j| ((i * 3 + j) as f64 * 0.7).sin());
    let y = &f * DVector::from_vec(vec![0.2, 0.5, 0.3]);
    let p = WeightProblem::new(f.clone(), f, y.clone(), y).unwrap();
    let prev = EnsembleWeights::uniform(3).unwrap();
    let opts = SolverOptions::default();
    c.bench_function("solve_weights_m3_k10", |b| b.iter(|| solve_weights(black_box(&p), &prev, 1e-4, &opts).unwrap()));
}

fn propagation(c: &mut Criterion) {
    let t = terrain();
    let residual = ResidualModel::Gp(&t.gp);
    let mean = Vector5::new(0.0, 0.0, 0.3, 0.6, 0.2);
    let cov = Matrix5::from_diagonal(&Vector5::new(1e-4, 1e-4, 1e-4, 4e-3, 9e-3));
    let b0 = GaussianBelief::new(mean, cov).unwrap();
    let u = Control::new(0.8, 0.4);
    let sigma = SigmaConfig::default();
    c.bench_function("propagate_step_gp", |b| {
        b.iter(|| {
            let g = residual.query(&Vector2::new(mean[3], mean[4]), &u).unwrap();
            propagate_step(black_box(&b0), &u, &g, &t.step, &sigma).unwrap()
        })
    });
    let seq = vec![u; 10];
    c.bench_function("propagate_horizon_gp_10", |b| {
        b.iter(|| propagate_horizon(black_box(&b0), &seq, &residual, &t.step, &sigma).unwrap())
    });

    let model = MotionModel::Dynamic {
        step: t.step,
        residual: ResidualModel::Gp(&t.gp),
    };
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    group.bench_function("gp_test_set", |b| {
        b.iter_batched(|| t.test.clone(), |ds| sweep_errors(&model, "gp", &ds, 1.0).unwrap(), BatchSize::LargeInput)
    });
    group.finish();
}

criterion_group!(benches, gp, weights, propagation);
criterion_main!(benches);

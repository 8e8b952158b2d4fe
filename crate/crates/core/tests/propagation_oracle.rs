use nalgebra::{Matrix5, Vector5};
use proptest::prelude::*;
use skidgp::data::SuiteConfig;
use skidgp::propagation::{
    monte_carlo_rollout, propagate_horizon, propagate_linear, sample_moments, sigma_weights, QueryMode,
    ResidualModel, SigmaConfig, StepModel, SIGMA_POINTS,
};
use skidgp::{Control, GaussianBelief};

fn model() -> StepModel {
    StepModel::new(SuiteConfig::default_suite().ident.spec.params, 0.1).unwrap()
}

fn controls(n: usize) -> Vec<Control> {
    (0..n).map(|k| Control::new(0.8 + 0.2 * (k as f64 * 0.3).sin(), 0.6 * (k as f64 * 0.2).cos())).collect()
}

fn belief(scale: f64) -> GaussianBelief {
    let mean = Vector5::new(0.5, -0.2, 0.3, 0.6, 0.1);
    let cov = Matrix5::from_diagonal(&Vector5::new(4e-3, 2e-3, 1e-3, 2e-3, 3e-3)) * scale;
    GaussianBelief::new(mean, cov).unwrap()
}

#[test]
fn sigma_weights_sum_to_one() {
    for lambda in [0.5, 1.0, 2.0] {
        let w = sigma_weights(&SigmaConfig { lambda }).unwrap();
        assert_eq!(w.len(), SIGMA_POINTS);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14, "lambda {lambda}");
    }
    assert!(sigma_weights(&SigmaConfig { lambda: -10.0 }).is_err());
}

#[test]
fn sigma_points_match_linearization_for_small_uncertainty() {
    // With tiny covariance the map is effectively linear over the spread.
    let b0 = belief(1e-6);
    let u = controls(10);
    let sp = propagate_horizon(&b0, &u, &ResidualModel::Nominal, &model(), &SigmaConfig::default()).unwrap();
    let lin = propagate_linear(&b0, &u, &ResidualModel::Nominal, &model()).unwrap();
    for (a, b) in sp.beliefs.iter().zip(&lin.beliefs) {
        assert!((a.mean() - b.mean()).amax() < 1e-8);
        let rel = (a.cov() - b.cov()).amax() / b.cov().amax();
        assert!(rel < 1e-3, "relative covariance gap {rel:e}");
    }
}

#[test]
fn sigma_points_match_monte_carlo() {
    let b0 = belief(1.0);
    let u = controls(10);
    let m = model();
    let sp = propagate_horizon(&b0, &u, &ResidualModel::Nominal, &m, &SigmaConfig::default()).unwrap();
    let mc = monte_carlo_rollout(&b0, &u, &ResidualModel::Nominal, &m, 100_000, 9, QueryMode::PerSample).unwrap();
    let (mean, cov) = sample_moments(&mc.finals()).unwrap();
    let last = sp.last();
    assert!((mean - last.mean()).amax() < 5e-3, "{mean} vs {}", last.mean());
    for i in 0..5 {
        let rel = (cov[(i, i)] - last.cov()[(i, i)]).abs() / last.cov()[(i, i)];
        assert!(rel < 0.05, "variance {i}: {} vs {}", cov[(i, i)], last.cov()[(i, i)]);
    }
}

#[test]
fn monte_carlo_is_reproducible() {
    let b0 = belief(1.0);
    let u = controls(5);
    let a = monte_carlo_rollout(&b0, &u, &ResidualModel::Nominal, &model(), 50, 3, QueryMode::PerSample).unwrap();
    let b = monte_carlo_rollout(&b0, &u, &ResidualModel::Nominal, &model(), 50, 3, QueryMode::PerSample).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.steps(), 6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn propagated_covariance_stays_symmetric_psd(scale in 1e-4..10.0f64, lambda in 0.2..3.0f64) {
        let b0 = belief(scale);
        let sp = propagate_horizon(&b0, &controls(8), &ResidualModel::Nominal, &model(), &SigmaConfig { lambda }).unwrap();
        for b in &sp.beliefs {
            let c = b.cov();
            prop_assert!((c - c.transpose()).amax() <= 1e-12 * c.amax());
            let min = c.symmetric_eigen().eigenvalues.min();
            prop_assert!(min >= -1e-9 * c.amax(), "min eigenvalue {min:e}");
        }
    }
}

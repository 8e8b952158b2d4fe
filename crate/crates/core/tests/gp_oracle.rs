use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skidgp::data::{command_script_library, synth_generate, SuiteConfig, SyntheticTerrainSpec};
use skidgp::dynamics::Integrator;
use skidgp::gp::{
    build_residual_dataset, negative_log_marginal_likelihood, se_kernel, train_gp_pair, GpHyperparams, GpModel,
    GpPair, GpPairFile, GpTrainConfig,
};

fn random_problem(rng: &mut ChaCha8Rng, p: usize, d: usize) -> (DMatrix<f64>, DVector<f64>, GpHyperparams) {
    let x = DMatrix::<f64>::from_fn(p, d, |_, _| rng.gen_range(-2.0..2.0));
    let y = DVector::from_fn(p, |i, _| (x[(i, 0)]).sin() + 0.3 * x[(i, d - 1)] + rng.gen_range(-0.1..0.1));
    let ls: Vec<f64> = (0..d).map(|_| rng.gen_range(0.3..3.0)).collect();
    let hyper = GpHyperparams::new(&ls, rng.gen_range(0.2..3.0), rng.gen_range(1e-3..0.3)).unwrap();
    (x, y, hyper)
}

#[test]
fn nlml_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let (x, y, hyper) = random_problem(&mut rng, 20, 4);
        let (_, grad) = negative_log_marginal_likelihood(&x, &y, &hyper).unwrap();
        let theta = hyper.to_vector();
        let scale = grad.amax().max(1e-8);
        for i in 0..theta.len() {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let fp = negative_log_marginal_likelihood(&x, &y, &GpHyperparams::from_vector(&tp)).unwrap().0;
            let fm = negative_log_marginal_likelihood(&x, &y, &GpHyperparams::from_vector(&tm)).unwrap().0;
            let fd = (fp - fm) / (2.0 * h);
            // Relative per component, floored for components near zero.
            let rel = (grad[i] - fd).abs() / fd.abs().max(1e-3 * scale);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4, "max relative gradient error {worst:e}");
}

#[test]
fn interpolates_training_data_without_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (x, y, _) = random_problem(&mut rng, 20, 4);
    let hyper = GpHyperparams::new(&[1.5; 4], 1.0, 1e-8).unwrap();
    let gp = GpModel::fit(&x, &y, &hyper).unwrap();
    for i in 0..x.nrows() {
        let z: Vec<f64> = x.row(i).iter().cloned().collect();
        let pred = gp.predict(&z).unwrap();
        assert!((pred.mean - y[i]).abs() < 1e-4, "row {i}: {} vs {}", pred.mean, y[i]);
        assert!(pred.variance < 1e-6, "row {i}: variance {}", pred.variance);
    }
}

#[test]
fn residual_targets_match_simulator_log() {
    let suite = SuiteConfig::default_suite();
    for spec in &suite.terrains {
        let spec = SyntheticTerrainSpec {
            noise_v: 0.0,
            noise_omega: 0.0,
            ..spec.clone()
        };
        let cmds = command_script_library(suite.script, 60.0, suite.dt, 1, &suite.bounds).unwrap();
        let out = synth_generate(&spec, &cmds, suite.dt).unwrap();
        let rd = build_residual_dataset(&out.dataset, &spec.params, suite.dt, Integrator::Rk4).unwrap();
        assert_eq!(rd.samples.len(), out.residuals.len());
        let mut worst = 0.0f64;
        for (s, (k, truth)) in rd.samples.iter().zip(rd.source_index.iter().zip(&out.residuals)) {
            assert_eq!(*k, truth.k);
            worst = worst.max((s.g_v - truth.g_v).abs()).max((s.g_omega - truth.g_omega).abs());
        }
        assert!(worst < 1e-4, "{}: worst residual mismatch {worst:e}", spec.label);
    }
}

#[test]
fn gp_pair_file_round_trip() {
    let suite = SuiteConfig::default_suite();
    let spec = &suite.terrains[1];
    let cmds = command_script_library(suite.script, 30.0, suite.dt, 2, &suite.bounds).unwrap();
    let out = synth_generate(spec, &cmds, suite.dt).unwrap();
    let rd = build_residual_dataset(&out.dataset, &spec.params, suite.dt, Integrator::Rk4).unwrap();
    let config = GpTrainConfig {
        k_clusters: 30,
        max_iters: 30,
        restarts: 1,
        seed: 0,
    };
    let pair = train_gp_pair("grass", &rd.samples, &config).unwrap();
    let json = serde_json::to_string(&pair.to_file()).unwrap();
    let back = GpPair::from_file(&serde_json::from_str::<GpPairFile>(&json).unwrap()).unwrap();
    for s in rd.samples.iter().step_by(17) {
        let a = pair.predict(&s.z).unwrap();
        let b = back.predict(&s.z).unwrap();
        assert_eq!(a.mean(), b.mean());
        assert_eq!(a.cov(), b.cov());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_symmetric_and_bounded(
        a in prop::collection::vec(-3.0..3.0f64, 4),
        b in prop::collection::vec(-3.0..3.0f64, 4),
        ls in prop::collection::vec(0.1..5.0f64, 4),
        sf2 in 0.01..10.0f64,
    ) {
        let h = GpHyperparams::new(&ls, sf2, 0.1).unwrap();
        let kab = se_kernel(&a, &b, &h, false).unwrap();
        let kba = se_kernel(&b, &a, &h, false).unwrap();
        prop_assert_eq!(kab, kba);
        prop_assert!(kab >= 0.0 && kab <= sf2 * (1.0 + 1e-15));
        prop_assert!((se_kernel(&a, &a, &h, true).unwrap() - (sf2 + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn posterior_variance_within_prior(seed in 0u64..1000, q in prop::collection::vec(-3.0..3.0f64, 4)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y, hyper) = random_problem(&mut rng, 12, 4);
        let gp = GpModel::fit(&x, &y, &hyper).unwrap();
        let pred = gp.predict(&q).unwrap();
        prop_assert!(pred.variance >= 0.0);
        prop_assert!(pred.variance <= hyper.signal_variance() * (1.0 + 1e-12));
        prop_assert!((pred.mean - gp.predict_mean(&q).unwrap()).abs() < 1e-12);
    }
}

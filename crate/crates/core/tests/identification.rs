use std::time::Instant;

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use skidgp::data::{command_script_library, synth_generate, DisturbanceModel, ScriptKind, SyntheticTerrainSpec};
use skidgp::dynamics::DynamicParams;
use skidgp::identify::{identify_params, IdentRecord, Quadrature};
use skidgp::types::ControlBounds;

const C_TRUE: [f64; 6] = [5.0, 1.0, 0.2, 4.0, 0.5, 3.0];
const DT: f64 = 0.1;

/// Noiseless simulation with additive measurement noise on the logged
/// velocities.
fn log(noise: f64, seed: u64) -> Vec<IdentRecord> {
    let spec = SyntheticTerrainSpec {
        label: "ident".into(),
        params: DynamicParams::new(C_TRUE, 0.0).unwrap(),
        disturbance: DisturbanceModel::default(),
        noise_v: 0.0,
        noise_omega: 0.0,
        seed,
    };
    let bounds = ControlBounds {
        max_v: 6.0,
        max_omega: 6.0,
    };
    let commands = command_script_library(ScriptKind::PseudoRandom, 500.0 * DT, DT, seed, &bounds).unwrap();
    let out = synth_generate(&spec, &commands, DT).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise).unwrap();
    out.dataset
        .records
        .iter()
        .map(|r| IdentRecord {
            eta: Vector2::new(r.v + normal.sample(&mut rng), r.omega + normal.sample(&mut rng)),
            u: r.control(),
        })
        .collect()
}

fn max_rel_error(c: &[f64; 6]) -> f64 {
    c.iter().zip(C_TRUE).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max)
}

#[test]
fn noiseless_recovery_within_one_percent() {
    let start = Instant::now();
    let log = log(0.0, 3);
    assert_eq!(log.len(), 500);
    for beta in [1.0, 0.2] {
        let report = identify_params(&log, DT, beta, Quadrature::Trapezoid, 0.0).unwrap();
        let err = max_rel_error(&report.params.c);
        assert!(err < 0.01, "beta {beta}: c = {:?}, max rel err {err}", report.params.c);
    }
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn noisy_recovery_within_ten_percent() {
    for seed in [3, 4, 5] {
        let log = log(0.01, seed);
        let report = identify_params(&log, DT, 0.2, Quadrature::Trapezoid, 0.0).unwrap();
        let err = max_rel_error(&report.params.c);
        assert!(err < 0.10, "seed {seed}: c = {:?}, max rel err {err}", report.params.c);
    }
}

//! Fixtures shared by the benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skidgp::data::{ensure_velocities, SuiteConfig, TerrainDataset};
use skidgp::dynamics::Integrator;
use skidgp::gp::{build_residual_dataset, train_gp_pair, GpPair, GpTrainConfig};
use skidgp::propagation::StepModel;

/// Random regression problem with `p` points in `d` dimensions.
pub fn regression(p: usize, d: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::<f64>::from_fn(p, d, |_, _| rng.gen_range(-2.0..2.0));
    let y = DVector::from_fn(p, |i, _| x[(i, 0)].sin() + 0.2 * x[(i, d - 1)]);
    (x, y)
}

pub struct Terrain {
    pub step: StepModel,
    pub test: TerrainDataset,
    pub gp: GpPair,
}

/// First terrain of the default suite with its trained GP pair, using the
/// true parameters as the nominal model.
pub fn terrain() -> Terrain {
    let suite = SuiteConfig::default_suite();
    let spec = &suite.terrains[0];
    let params = spec.params;
    let train = ensure_velocities(suite.train_set(spec).unwrap().dataset, 1.0).unwrap();
    let test = ensure_velocities(suite.test_set(spec).unwrap().dataset, 1.0).unwrap();
    let rd = build_residual_dataset(&train, &params, suite.dt, Integrator::Rk4).unwrap();
    let gp = train_gp_pair(&spec.label, &rd.samples, &GpTrainConfig::default()).unwrap();
    Terrain {
        step: StepModel::new(params, suite.dt).unwrap(),
        test,
        gp,
    }
}

//! Residual targets for the skid/slip GPs and the per-terrain training
//! pipeline.
//!
//! For consecutive samples `k, k + 1` with input `z(k) = [v, ω, v_ref, ω_ref]`:
//!
//! ```text
//! g_v(k) = v(k+1) − f_v(z(k))
//! g_ω(k) = ω(k+1) − f_ω(z(k))
//! ```
//!
//! where `f` is the nominal one-step prediction.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use super::gmm::select_training_subset;
use super::optimize::{optimize_hyperparams, OptimizeOptions};
use super::{GpHyperparams, GpModel, GpModelFile, InputScaling, INPUT_DIM};
use crate::data::TerrainDataset;
use crate::dynamics::{velocity_step, DynamicParams, Integrator};
use crate::error::{Error, Result};
use crate::types::Gaussian2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualSample {
    pub z: [f64; INPUT_DIM],
    pub g_v: f64,
    pub g_omega: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualDataset {
    pub samples: Vec<ResidualSample>,
    /// Index `k` of the first record of each sample's pair.
    pub source_index: Vec<usize>,
    /// Pairs dropped because their time gap exceeded `1.5 dt`.
    pub skipped: usize,
}

/// Builds `(z, g_v, g_ω)` samples from consecutive records.
pub fn build_residual_dataset(
    traj: &TerrainDataset,
    params: &DynamicParams,
    dt: f64,
    integrator: Integrator,
) -> Result<ResidualDataset> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive (got {dt})")));
    }
    if !traj.records.is_empty() && !traj.has_velocities {
        return Err(Error::Dataset(format!("dataset '{}' has no velocities", traj.label)));
    }
    let mut out = ResidualDataset {
        samples: Vec::with_capacity(traj.len()),
        source_index: Vec::with_capacity(traj.len()),
        skipped: 0,
    };
    for (k, w) in traj.records.windows(2).enumerate() {
        let (a, b) = (&w[0], &w[1]);
        if b.t - a.t > 1.5 * dt {
            out.skipped += 1;
            continue;
        }
        let u = a.control();
        let pred = velocity_step(&Vector2::new(a.v, a.omega), &u, params, dt, integrator);
        out.samples.push(ResidualSample {
            z: [a.v, a.omega, a.v_ref, a.omega_ref],
            g_v: b.v - pred[0],
            g_omega: b.omega - pred[1],
        });
        out.source_index.push(k);
    }
    Ok(out)
}

/// The two independent residual GPs of one terrain.
#[derive(Debug, Clone)]
pub struct GpPair {
    pub label: String,
    pub gp_v: GpModel,
    pub gp_omega: GpModel,
}

impl GpPair {
    /// Residual distribution with each channel's observation variance.
    pub fn predict(&self, z: &[f64; INPUT_DIM]) -> Result<Gaussian2> {
        let v = self.gp_v.predict(z)?;
        let w = self.gp_omega.predict(z)?;
        Gaussian2::diagonal(v.mean, w.mean, v.predictive_variance(), w.predictive_variance())
    }

    pub fn predict_mean(&self, z: &[f64; INPUT_DIM]) -> Result<Vector2<f64>> {
        Ok(Vector2::new(self.gp_v.predict_mean(z)?, self.gp_omega.predict_mean(z)?))
    }

    pub fn to_file(&self) -> GpPairFile {
        GpPairFile {
            format: GpPairFile::FORMAT.into(),
            version: GpPairFile::VERSION,
            label: self.label.clone(),
            gp_v: self.gp_v.to_file(),
            gp_omega: self.gp_omega.to_file(),
        }
    }

    pub fn from_file(file: &GpPairFile) -> Result<Self> {
        if file.format != GpPairFile::FORMAT || file.version != GpPairFile::VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported model file {} v{}",
                file.format, file.version
            )));
        }
        Ok(Self {
            label: file.label.clone(),
            gp_v: GpModel::from_file(&file.gp_v)?,
            gp_omega: GpModel::from_file(&file.gp_omega)?,
        })
    }
}

/// Versioned on-disk form of a [`GpPair`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpPairFile {
    pub format: String,
    pub version: u32,
    pub label: String,
    pub gp_v: GpModelFile,
    pub gp_omega: GpModelFile,
}

impl GpPairFile {
    pub const FORMAT: &'static str = "skidgp-gp-pair";
    pub const VERSION: u32 = 1;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpTrainConfig {
    pub k_clusters: usize,
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for GpTrainConfig {
    fn default() -> Self {
        Self {
            k_clusters: 100,
            max_iters: 200,
            restarts: 3,
            seed: 0,
        }
    }
}

fn train_channel(inputs: &DMatrix<f64>, targets: &DVector<f64>, scaling: &InputScaling, config: &GpTrainConfig, seed: u64) -> Result<GpModel> {
    let p = targets.len() as f64;
    let rms = (targets.norm_squared() / p).sqrt();
    let scale = if rms > 1e-12 { rms } else { 1.0 };
    let scaled_inputs = scaling.apply_matrix(inputs);
    let scaled_targets = targets / scale;
    let init = GpHyperparams::new(&[1.0; INPUT_DIM], 1.0, 0.1)?;
    let options = OptimizeOptions {
        max_iters: config.max_iters,
        restarts: config.restarts,
        seed,
        ..Default::default()
    };
    let best = optimize_hyperparams(&scaled_inputs, &scaled_targets, &init, &options)?.hyper;
    // Undo the target scaling: σ_f² and σ_n² carry the output units.
    let s2 = (scale * scale).ln();
    let hyper = GpHyperparams {
        log_signal_variance: best.log_signal_variance + s2,
        log_noise_variance: best.log_noise_variance + s2,
        ..best
    };
    GpModel::fit_scaled(inputs, targets, &hyper, scaling.clone())
}

/// Selects a training subset, standardizes inputs and fits both residual GPs
/// with maximum-likelihood hyperparameters.
pub fn train_gp_pair(label: &str, samples: &[ResidualSample], config: &GpTrainConfig) -> Result<GpPair> {
    if samples.is_empty() {
        return Err(Error::Dataset("no residual samples to train on".into()));
    }
    let selection = select_training_subset(samples, config.k_clusters, config.seed)?;
    let chosen: Vec<&ResidualSample> = selection.indices.iter().map(|&i| &samples[i]).collect();
    let p = chosen.len();
    let inputs = DMatrix::from_row_iterator(p, INPUT_DIM, chosen.iter().flat_map(|s| s.z));
    let g_v = DVector::from_iterator(p, chosen.iter().map(|s| s.g_v));
    let g_w = DVector::from_iterator(p, chosen.iter().map(|s| s.g_omega));
    let scaling = InputScaling::standardize(&inputs);
    Ok(GpPair {
        label: label.to_string(),
        gp_v: train_channel(&inputs, &g_v, &scaling, config, config.seed)?,
        gp_omega: train_channel(&inputs, &g_w, &scaling, config, config.seed.wrapping_add(1))?,
    })
}

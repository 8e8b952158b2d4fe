//! Exact Gaussian-process regression with an ARD squared-exponential kernel.
//!
//! ```text
//! κ(z, z') = σ_f² exp(−½ Σᵢ (zᵢ − z'ᵢ)² / ℓᵢ²) [+ σ_n²]
//! μ(z)     = k (K + σ_n² I)⁻¹ y
//! σ²(z)    = κ(z, z) − k (K + σ_n² I)⁻¹ kᵀ
//! ```
//!
//! Inputs may be standardized before the kernel is evaluated; the statistics
//! live in the fitted model so callers always pass raw inputs.

mod gmm;
mod optimize;
mod residuals;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gmm::{select_training_subset, GaussianMixture, SubsetSelection};
pub use optimize::{lbfgs_minimize, optimize_hyperparams, LbfgsReport, OptimizeOptions, OptimizeReport};
pub use residuals::{build_residual_dataset, train_gp_pair, GpPair, GpPairFile, GpTrainConfig, ResidualDataset, ResidualSample};

/// Input dimension used by the residual models: `[v, ω, v_ref, ω_ref]`.
pub const INPUT_DIM: usize = 4;

/// Jitter added to the diagonal, in order, when a factorization fails.
pub const JITTER_LADDER: [f64; 3] = [1e-10, 1e-8, 1e-6];

/// SE kernel hyperparameters, stored as logarithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub log_length_scales: Vec<f64>,
    pub log_signal_variance: f64,
    pub log_noise_variance: f64,
}

impl GpHyperparams {
    /// From positive values: length scales `ℓᵢ`, `σ_f²` and `σ_n²`.
    pub fn new(length_scales: &[f64], signal_variance: f64, noise_variance: f64) -> Result<Self> {
        if length_scales.is_empty() || length_scales.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidParameter("length scales must be positive".into()));
        }
        if !(signal_variance > 0.0 && signal_variance.is_finite()) {
            return Err(Error::InvalidParameter("signal variance must be positive".into()));
        }
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Error::InvalidParameter("noise variance must be non-negative".into()));
        }
        Ok(Self {
            log_length_scales: length_scales.iter().map(|l| l.ln()).collect(),
            log_signal_variance: signal_variance.ln(),
            log_noise_variance: noise_variance.ln(),
        })
    }

    pub fn dim(&self) -> usize {
        self.log_length_scales.len()
    }

    pub fn length_scales(&self) -> Vec<f64> {
        self.log_length_scales.iter().map(|l| l.exp()).collect()
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance.exp()
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }

    /// Packs `[log ℓ₁…log ℓₙ, log σ_f², log σ_n²]`.
    pub fn to_vector(&self) -> DVector<f64> {
        let mut v: Vec<f64> = self.log_length_scales.clone();
        v.push(self.log_signal_variance);
        v.push(self.log_noise_variance);
        DVector::from_vec(v)
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        let n = v.len() - 2;
        Self {
            log_length_scales: v.rows(0, n).iter().cloned().collect(),
            log_signal_variance: v[n],
            log_noise_variance: v[n + 1],
        }
    }

    fn inv_sq_lengths(&self) -> Vec<f64> {
        self.log_length_scales.iter().map(|l| (-2.0 * l).exp()).collect()
    }
}

/// Squared-exponential kernel; adds `σ_n²` iff `include_noise`.
pub fn se_kernel(z1: &[f64], z2: &[f64], hyper: &GpHyperparams, include_noise: bool) -> Result<f64> {
    if z1.len() != z2.len() || z1.len() != hyper.dim() {
        return Err(Error::DimensionMismatch {
            expected: hyper.dim(),
            actual: if z1.len() != hyper.dim() { z1.len() } else { z2.len() },
        });
    }
    let k = kernel_raw(z1, z2, &hyper.inv_sq_lengths(), hyper.signal_variance());
    Ok(if include_noise { k + hyper.noise_variance() } else { k })
}

#[inline]
fn kernel_raw(z1: &[f64], z2: &[f64], inv_sq: &[f64], sf2: f64) -> f64 {
    let mut r2 = 0.0;
    for i in 0..z1.len() {
        let d = z1[i] - z2[i];
        r2 += d * d * inv_sq[i];
    }
    sf2 * (-0.5 * r2).exp()
}

/// Noise-free Gram matrix; the upper triangle is computed and mirrored so
/// the result is exactly symmetric.
pub fn gram_matrix(inputs: &DMatrix<f64>, hyper: &GpHyperparams) -> Result<DMatrix<f64>> {
    if inputs.ncols() != hyper.dim() {
        return Err(Error::DimensionMismatch {
            expected: hyper.dim(),
            actual: inputs.ncols(),
        });
    }
    let p = inputs.nrows();
    let rows: Vec<Vec<f64>> = (0..p).map(|i| inputs.row(i).iter().cloned().collect()).collect();
    let inv_sq = hyper.inv_sq_lengths();
    let sf2 = hyper.signal_variance();
    let mut k = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        k[(i, i)] = sf2;
        for j in (i + 1)..p {
            let v = kernel_raw(&rows[i], &rows[j], &inv_sq, sf2);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Factors `K + σ_n² I`, escalating jitter when the plain factorization
/// fails. With `σ_n² = 0` no jitter is added and a numerically singular
/// matrix is rejected, since exact interpolation was requested.
pub(crate) fn factor(k: &DMatrix<f64>, noise: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let p = k.nrows();
    let mut m = k.clone();
    for i in 0..p {
        m[(i, i)] += noise;
    }
    if noise == 0.0 {
        let scale = (0..p).map(|i| m[(i, i)]).fold(0.0, f64::max);
        let chol = m.cholesky().ok_or(Error::KernelNotPsd)?;
        let min_pivot = chol.l_dirty().diagonal().iter().map(|d| d * d).fold(f64::INFINITY, f64::min);
        if min_pivot <= 1e-12 * scale {
            return Err(Error::KernelNotPsd);
        }
        return Ok((chol, 0.0));
    }
    if let Some(c) = m.clone().cholesky() {
        return Ok((c, 0.0));
    }
    for &jitter in &JITTER_LADDER {
        let mut mj = m.clone();
        for i in 0..p {
            mj[(i, i)] += jitter;
        }
        if let Some(c) = mj.cholesky() {
            return Ok((c, jitter));
        }
    }
    Err(Error::KernelNotPsd)
}

/// Affine standardization of the inputs, `(z − mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaling {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Zero mean and unit variance per column; constant columns keep scale 1.
    pub fn standardize(inputs: &DMatrix<f64>) -> Self {
        let p = inputs.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(inputs.ncols());
        let mut scale = Vec::with_capacity(inputs.ncols());
        for col in inputs.column_iter() {
            let m = col.sum() / p;
            let var = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / p;
            mean.push(m);
            scale.push(if var > 1e-24 { var.sqrt() } else { 1.0 });
        }
        Self { mean, scale }
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn apply_matrix(&self, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = inputs.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            for x in col.iter_mut() {
                *x = (*x - self.mean[j]) / self.scale[j];
            }
        }
        out
    }
}

/// Posterior at one query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpPrediction {
    pub mean: f64,
    /// Latent-function variance, clamped at zero.
    pub variance: f64,
    pub noise_variance: f64,
}

impl GpPrediction {
    /// Variance of a new noisy observation, `σ²(z) + σ_n²`.
    pub fn predictive_variance(&self) -> f64 {
        self.variance + self.noise_variance
    }
}

/// A fitted GP: hyperparameters, training data and the cached factorization.
#[derive(Debug, Clone)]
pub struct GpModel {
    hyper: GpHyperparams,
    scaling: InputScaling,
    train_inputs: DMatrix<f64>,
    scaled_inputs: DMatrix<f64>,
    train_targets: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpModel {
    /// Fits on raw inputs without standardization.
    pub fn fit(inputs: &DMatrix<f64>, targets: &DVector<f64>, hyper: &GpHyperparams) -> Result<Self> {
        Self::fit_scaled(inputs, targets, hyper, InputScaling::identity(inputs.ncols()))
    }

    /// Fits with the given input standardization applied before the kernel.
    pub fn fit_scaled(
        inputs: &DMatrix<f64>,
        targets: &DVector<f64>,
        hyper: &GpHyperparams,
        scaling: InputScaling,
    ) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::Dataset("GP needs at least one training point".into()));
        }
        if inputs.nrows() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.nrows(),
                actual: targets.len(),
            });
        }
        if scaling.mean.len() != inputs.ncols() || scaling.scale.len() != inputs.ncols() {
            return Err(Error::DimensionMismatch {
                expected: inputs.ncols(),
                actual: scaling.mean.len(),
            });
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("GP training data"));
        }
        let scaled_inputs = scaling.apply_matrix(inputs);
        let k = gram_matrix(&scaled_inputs, hyper)?;
        let (chol, jitter) = factor(&k, hyper.noise_variance())?;
        let alpha = chol.solve(targets);
        Ok(Self {
            hyper: hyper.clone(),
            scaling,
            train_inputs: inputs.clone(),
            scaled_inputs,
            train_targets: targets.clone(),
            chol,
            alpha,
            jitter,
        })
    }

    pub fn hyper(&self) -> &GpHyperparams {
        &self.hyper
    }

    pub fn scaling(&self) -> &InputScaling {
        &self.scaling
    }

    pub fn train_inputs(&self) -> &DMatrix<f64> {
        &self.train_inputs
    }

    pub fn train_targets(&self) -> &DVector<f64> {
        &self.train_targets
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Lower-triangular factor `L` with `L Lᵀ = K + (σ_n² + jitter) I`.
    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn len(&self) -> usize {
        self.train_targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_targets.is_empty()
    }

    fn cross_covariance(&self, zs: &[f64]) -> DVector<f64> {
        let inv_sq = self.hyper.inv_sq_lengths();
        let sf2 = self.hyper.signal_variance();
        let n = zs.len();
        DVector::from_iterator(
            self.scaled_inputs.nrows(),
            self.scaled_inputs.row_iter().map(|row| {
                let mut r2 = 0.0;
                for i in 0..n {
                    let d = zs[i] - row[i];
                    r2 += d * d * inv_sq[i];
                }
                sf2 * (-0.5 * r2).exp()
            }),
        )
    }

    /// Posterior mean and latent variance at a raw query point.
    pub fn predict(&self, z: &[f64]) -> Result<GpPrediction> {
        if z.len() != self.hyper.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.hyper.dim(),
                actual: z.len(),
            });
        }
        let zs = self.scaling.apply(z);
        let k = self.cross_covariance(&zs);
        let mean = k.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k)
            .ok_or(Error::KernelNotPsd)?;
        let variance = (self.hyper.signal_variance() - v.norm_squared()).max(0.0);
        Ok(GpPrediction {
            mean,
            variance,
            noise_variance: self.hyper.noise_variance(),
        })
    }

    /// Posterior mean only (one kernel row and a dot product).
    pub fn predict_mean(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.hyper.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.hyper.dim(),
                actual: z.len(),
            });
        }
        Ok(self.cross_covariance(&self.scaling.apply(z)).dot(&self.alpha))
    }

    pub fn to_file(&self) -> GpModelFile {
        GpModelFile {
            hyper: self.hyper.clone(),
            scaling: self.scaling.clone(),
            inputs: self.train_inputs.row_iter().map(|r| r.iter().cloned().collect()).collect(),
            targets: self.train_targets.iter().cloned().collect(),
        }
    }

    /// Rebuilds a model from its serialized form; the factorization is
    /// recomputed.
    pub fn from_file(file: &GpModelFile) -> Result<Self> {
        let hyper = file.hyper.clone();
        if hyper.log_length_scales.is_empty() || hyper.to_vector().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("GP hyperparameters"));
        }
        let p = file.inputs.len();
        let n = hyper.dim();
        if file.inputs.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: file.inputs.iter().map(|r| r.len()).find(|l| *l != n).unwrap_or(0),
            });
        }
        let inputs = DMatrix::from_row_iterator(p, n, file.inputs.iter().flatten().cloned());
        let targets = DVector::from_vec(file.targets.clone());
        Self::fit_scaled(&inputs, &targets, &hyper, file.scaling.clone())
    }
}

/// Serialized GP: log-hyperparameters, standardization and data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModelFile {
    pub hyper: GpHyperparams,
    pub scaling: InputScaling,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

/// Negative log marginal likelihood and its gradient with respect to
/// `[log ℓ₁…log ℓₙ, log σ_f², log σ_n²]`.
///
/// ```text
/// NLML = ½ yᵀα + Σ log Lᵢᵢ + (p/2) log 2π
/// ∂NLML/∂θ = ½ tr((K_y⁻¹ − ααᵀ) ∂K_y/∂θ)
/// ```
pub fn negative_log_marginal_likelihood(
    inputs: &DMatrix<f64>,
    targets: &DVector<f64>,
    hyper: &GpHyperparams,
) -> Result<(f64, DVector<f64>)> {
    let p = inputs.nrows();
    if p == 0 {
        return Err(Error::Dataset("GP needs at least one training point".into()));
    }
    if p != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: p,
            actual: targets.len(),
        });
    }
    let kf = gram_matrix(inputs, hyper)?;
    let noise = hyper.noise_variance();
    let (chol, _) = factor(&kf, noise)?;
    let alpha = chol.solve(targets);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let value = 0.5 * targets.dot(&alpha) + log_det + 0.5 * p as f64 * (2.0 * std::f64::consts::PI).ln();

    // W = K_y⁻¹ − ααᵀ
    let mut w = chol.inverse();
    w.ger(-1.0, &alpha, &alpha, 1.0);

    let n = hyper.dim();
    let inv_sq = hyper.inv_sq_lengths();
    let mut grad = DVector::<f64>::zeros(n + 2);
    for i in 0..p {
        for j in 0..p {
            let wk = w[(i, j)] * kf[(i, j)];
            grad[n] += wk;
            if i < j {
                for d in 0..n {
                    let r = inputs[(i, d)] - inputs[(j, d)];
                    // symmetric pair (i, j) and (j, i)
                    grad[d] += 2.0 * wk * r * r * inv_sq[d];
                }
            }
        }
    }
    grad[n + 1] = noise * w.trace();
    grad *= 0.5;
    Ok((value, grad))
}

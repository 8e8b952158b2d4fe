//! Shared domain types: robot state, commands and Gaussian beliefs.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, Matrix2, Matrix5, Vector2, Vector5};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::is_psd;

/// Index of the heading in the state vector `[X, Y, θ, v, ω]`.
pub const THETA: usize = 2;
/// Index of the body-frame linear velocity.
pub const V: usize = 3;
/// Index of the body-frame angular velocity.
pub const OMEGA: usize = 4;

/// Jitter used when validating covariance matrices.
pub const COV_JITTER: f64 = 1e-9;

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::NonFinite("angle"));
    }
    Ok(wrap(theta))
}

/// Infallible variant of [`wrap_angle`] for values already known to be finite.
#[inline]
pub(crate) fn wrap(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Full planar robot state: global pose plus body-frame velocities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State5 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub omega: f64,
}

impl State5 {
    pub fn new(x: f64, y: f64, theta: f64, v: f64, omega: f64) -> Result<Self> {
        Self::from_vector(&Vector5::new(x, y, theta, v, omega))
    }

    /// Builds a state from `[X, Y, θ, v, ω]`, wrapping the heading.
    pub fn from_vector(vec: &Vector5<f64>) -> Result<Self> {
        if vec.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state"));
        }
        Ok(Self {
            x: vec[0],
            y: vec[1],
            theta: wrap(vec[2]),
            v: vec[3],
            omega: vec[4],
        })
    }

    pub fn to_vector(&self) -> Vector5<f64> {
        Vector5::new(self.x, self.y, self.theta, self.v, self.omega)
    }
}

/// Magnitude limits applied to commanded velocities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    pub max_v: f64,
    pub max_omega: f64,
}

impl Default for ControlBounds {
    fn default() -> Self {
        Self {
            max_v: 2.0,
            max_omega: 4.0,
        }
    }
}

/// Commanded body-frame velocities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    pub v_ref: f64,
    pub omega_ref: f64,
}

impl Control {
    pub const ZERO: Control = Control {
        v_ref: 0.0,
        omega_ref: 0.0,
    };

    pub fn new(v_ref: f64, omega_ref: f64) -> Self {
        Self { v_ref, omega_ref }
    }

    /// Checks finiteness and the magnitude bounds.
    pub fn validate(&self, bounds: &ControlBounds) -> Result<()> {
        if !self.v_ref.is_finite() || !self.omega_ref.is_finite() {
            return Err(Error::NonFinite("control"));
        }
        if self.v_ref.abs() > bounds.max_v || self.omega_ref.abs() > bounds.max_omega {
            return Err(Error::InvalidParameter(format!(
                "command ({}, {}) outside bounds ({}, {})",
                self.v_ref, self.omega_ref, bounds.max_v, bounds.max_omega
            )));
        }
        Ok(())
    }
}

fn validate_cov<const N: usize>(cov: &nalgebra::SMatrix<f64, N, N>) -> Result<nalgebra::SMatrix<f64, N, N>>
{
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance"));
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let dynamic = DMatrix::from_column_slice(N, N, sym.as_slice());
    let report = is_psd(&dynamic, COV_JITTER)?;
    if !report.is_psd {
        return Err(Error::NotPsd {
            min_eigenvalue: report.min_eigenvalue,
        });
    }
    Ok(sym)
}

/// Gaussian belief over the five-dimensional robot state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBelief {
    mean: Vector5<f64>,
    cov: Matrix5<f64>,
}

impl GaussianBelief {
    /// Symmetrizes `cov` and rejects it unless it is PSD up to `1e-9` jitter.
    /// The heading component of the mean is wrapped.
    pub fn new(mean: Vector5<f64>, cov: Matrix5<f64>) -> Result<Self> {
        let mut mean = mean;
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("belief mean"));
        }
        mean[THETA] = wrap(mean[THETA]);
        let cov = validate_cov(&cov)?;
        Ok(Self { mean, cov })
    }

    /// Point mass at `state`.
    pub fn certain(state: &State5) -> Self {
        Self {
            mean: state.to_vector(),
            cov: Matrix5::zeros(),
        }
    }

    pub fn mean(&self) -> &Vector5<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix5<f64> {
        &self.cov
    }

    pub fn state(&self) -> State5 {
        State5 {
            x: self.mean[0],
            y: self.mean[1],
            theta: self.mean[2],
            v: self.mean[3],
            omega: self.mean[4],
        }
    }
}

/// Gaussian over the `(v, ω)` velocity residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2 {
    mean: Vector2<f64>,
    cov: Matrix2<f64>,
}

impl Gaussian2 {
    pub fn new(mean: Vector2<f64>, cov: Matrix2<f64>) -> Result<Self> {
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("residual mean"));
        }
        let cov = validate_cov(&cov)?;
        Ok(Self { mean, cov })
    }

    /// Independent channels with the given variances.
    pub fn diagonal(mean_v: f64, mean_omega: f64, var_v: f64, var_omega: f64) -> Result<Self> {
        Self::new(
            Vector2::new(mean_v, mean_omega),
            Matrix2::new(var_v, 0.0, 0.0, var_omega),
        )
    }

    pub fn zero() -> Self {
        Self {
            mean: Vector2::zeros(),
            cov: Matrix2::zeros(),
        }
    }

    pub fn mean(&self) -> &Vector2<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix2<f64> {
        &self.cov
    }
}

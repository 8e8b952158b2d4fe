//! Probabilistic motion modeling for skid-steer wheeled mobile robots.
//!
//! The crate combines a dynamic unicycle model with Gaussian-process
//! estimates of the tire skid/slip residuals, fuses per-terrain GPs with an
//! online simplex-constrained weighting problem and propagates Gaussian state
//! beliefs through the resulting dynamics with sigma-point transforms.
//!
//! Module map:
//!
//! * [`types`]: state, control and Gaussian belief types, angle and PSD helpers
//! * [`dynamics`]: nominal dynamic unicycle model, integration, low-pass filter
//! * [`identify`]: least-squares identification of the lumped parameters
//! * [`gp`]: exact GP regression with an ARD squared-exponential kernel
//! * [`ensemble`]: weighted terrain ensemble and online weight optimization
//! * [`propagation`]: sigma-point, linearized and Monte-Carlo propagation
//! * [`baselines`]: kinematic Jacobian motion models
//! * [`data`]: dataset I/O, velocity derivation and the synthetic simulator
//! * [`eval`]: moving-horizon error sweeps and the other benchmark reports

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod config;
pub mod data;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod gp;
pub mod identify;
pub mod linalg;
pub mod propagation;
pub mod types;

pub use error::{Error, Result};
pub use types::{wrap_angle, Control, Gaussian2, GaussianBelief, State5};

//! Nominal dynamic unicycle model for skid-steer robots.
//!
//! The kinematic sub-state `q = [X, Y, θ]` follows
//!
//! ```text
//! Ẋ = v cosθ − a ω sinθ
//! Ẏ = v sinθ + a ω cosθ
//! θ̇ = ω
//! ```
//!
//! and the dynamic sub-state `η = [v, ω]` is driven by the commands through
//! six lumped constants:
//!
//! ```text
//! v̇ = (c3/c1) ω² − (c4/c1) v + v_ref / c1
//! ω̇ = −(c5/c2) v ω − (c6/c2) ω + ω_ref / c2
//! ```
//!
//! Terrain-dependent skid/slip terms are left out here; the GP residual
//! models supply them.

use nalgebra::{Vector2, Vector3, Vector5};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{wrap, Control, State5, THETA};

/// Lumped physical parameters `c1…c6` and the COM-to-rear-axle offset `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicParams {
    pub c: [f64; 6],
    #[serde(default)]
    pub a: f64,
}

impl DynamicParams {
    pub fn new(c: [f64; 6], a: f64) -> Result<Self> {
        let p = Self { c, a };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.c.iter().any(|v| !v.is_finite()) || !self.a.is_finite() {
            return Err(Error::NonFinite("dynamic parameters"));
        }
        if self.c[0] <= 0.0 || self.c[1] <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "c1 and c2 must be positive (got {}, {})",
                self.c[0], self.c[1]
            )));
        }
        if self.a < 0.0 {
            return Err(Error::InvalidParameter(format!("a must be non-negative (got {})", self.a)));
        }
        Ok(())
    }
}

/// Time-integration scheme for the continuous model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    #[default]
    Rk4,
    Euler,
}

/// `[Ẋ, Ẏ, θ̇]` for the given pose and body velocities.
pub fn kinematic_rates(q: &Vector3<f64>, v: f64, omega: f64, a: f64) -> Result<Vector3<f64>> {
    if q.iter().any(|x| !x.is_finite()) || !v.is_finite() || !omega.is_finite() || !a.is_finite() {
        return Err(Error::NonFinite("kinematic rates input"));
    }
    Ok(kin(q[2], v, omega, a))
}

#[inline]
fn kin(theta: f64, v: f64, omega: f64, a: f64) -> Vector3<f64> {
    let (s, c) = theta.sin_cos();
    Vector3::new(v * c - a * omega * s, v * s + a * omega * c, omega)
}

/// `[v̇, ω̇]` of the nominal model (no skid/slip terms).
pub fn dynamic_rates_nominal(eta: &Vector2<f64>, u: &Control, params: &DynamicParams) -> Result<Vector2<f64>> {
    if params.c[0] == 0.0 || params.c[1] == 0.0 {
        return Err(Error::InvalidParameter("c1 and c2 must be non-zero".into()));
    }
    if eta.iter().any(|x| !x.is_finite()) || !u.v_ref.is_finite() || !u.omega_ref.is_finite() {
        return Err(Error::NonFinite("dynamic rates input"));
    }
    Ok(dyn_rates(eta[0], eta[1], u, &params.c))
}

#[inline]
fn dyn_rates(v: f64, omega: f64, u: &Control, c: &[f64; 6]) -> Vector2<f64> {
    Vector2::new(
        (c[2] * omega * omega - c[3] * v + u.v_ref) / c[0],
        (-c[4] * v * omega - c[5] * omega + u.omega_ref) / c[1],
    )
}

/// Full five-dimensional state derivative with an additive acceleration
/// disturbance on the dynamic sub-state.
#[inline]
pub(crate) fn state_rates(
    x: &Vector5<f64>,
    u: &Control,
    params: &DynamicParams,
    disturbance: Vector2<f64>,
) -> Vector5<f64> {
    let q = kin(x[2], x[3], x[4], params.a);
    let e = dyn_rates(x[3], x[4], u, &params.c) + disturbance;
    Vector5::new(q[0], q[1], q[2], e[0], e[1])
}

/// One integration step of `dx = rates(x)` over `dt` (heading not wrapped).
#[inline]
pub(crate) fn integrate<F>(x: &Vector5<f64>, dt: f64, integrator: Integrator, rates: F) -> Vector5<f64>
where
    F: Fn(&Vector5<f64>) -> Vector5<f64>,
{
    match integrator {
        Integrator::Euler => x + rates(x) * dt,
        Integrator::Rk4 => {
            let k1 = rates(x);
            let k2 = rates(&(x + k1 * (0.5 * dt)));
            let k3 = rates(&(x + k2 * (0.5 * dt)));
            let k4 = rates(&(x + k3 * dt));
            x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
        }
    }
}

/// Discrete nominal map on raw state vectors; the heading is wrapped.
pub fn step_vector(
    x: &Vector5<f64>,
    u: &Control,
    params: &DynamicParams,
    dt: f64,
    integrator: Integrator,
) -> Vector5<f64> {
    let mut next = integrate(x, dt, integrator, |s| state_rates(s, u, params, Vector2::zeros()));
    next[THETA] = wrap(next[THETA]);
    next
}

/// Discrete nominal motion equations: RK4 integration over `dt`.
pub fn step_nominal(x: &State5, u: &Control, params: &DynamicParams, dt: f64) -> Result<State5> {
    step_nominal_with(x, u, params, dt, Integrator::Rk4)
}

pub fn step_nominal_with(
    x: &State5,
    u: &Control,
    params: &DynamicParams,
    dt: f64,
    integrator: Integrator,
) -> Result<State5> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("dt must be positive (got {dt})")));
    }
    params.validate()?;
    if !u.v_ref.is_finite() || !u.omega_ref.is_finite() {
        return Err(Error::NonFinite("control"));
    }
    State5::from_vector(&step_vector(&x.to_vector(), u, params, dt, integrator))
}

/// Nominal one-step prediction of the velocities `[v, ω]` only.
///
/// The dynamic sub-state does not depend on the pose, so this is the
/// velocity half of [`step_vector`].
pub fn velocity_step(eta: &Vector2<f64>, u: &Control, params: &DynamicParams, dt: f64, integrator: Integrator) -> Vector2<f64> {
    let f = |e: &Vector2<f64>| dyn_rates(e[0], e[1], u, &params.c);
    match integrator {
        Integrator::Euler => eta + f(eta) * dt,
        Integrator::Rk4 => {
            let k1 = f(eta);
            let k2 = f(&(eta + k1 * (0.5 * dt)));
            let k3 = f(&(eta + k2 * (0.5 * dt)));
            let k4 = f(&(eta + k3 * dt));
            eta + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
        }
    }
}

/// First-order discrete exponential smoother `y_k = β x_k + (1 − β) y_{k−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowPassFilter {
    beta: f64,
    state: Option<f64>,
}

impl LowPassFilter {
    pub const DEFAULT_BETA: f64 = 0.2;

    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::InvalidParameter(format!("filter beta must be in (0, 1], got {beta}")));
        }
        Ok(Self { beta, state: None })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Feeds one sample; the first call returns the sample unchanged.
    pub fn apply(&mut self, sample: f64) -> f64 {
        let y = match self.state {
            None => sample,
            Some(prev) => self.beta * sample + (1.0 - self.beta) * prev,
        };
        self.state = Some(y);
        y
    }

    pub fn reset(&mut self) {
        self.state = None;
    }

    /// Filters a whole sequence from a fresh state.
    pub fn filter_all(beta: f64, samples: &[f64]) -> Result<Vec<f64>> {
        let mut f = Self::new(beta)?;
        Ok(samples.iter().map(|&s| f.apply(s)).collect())
    }
}

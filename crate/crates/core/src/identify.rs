//! Offline least-squares identification of the lumped parameters `c1…c6`.
//!
//! Rearranging the nominal dynamics gives a model that is linear in `c`:
//!
//! ```text
//! [ v̇  0  −ω²  v  0   0 ] c = v_ref
//! [ 0  ω̇   0   0  vω  ω ]     ω_ref
//! ```
//!
//! Both sides are passed through the same first-order low-pass filter. The
//! filtered acceleration column equals `β (x_k − y_{k−1}) / dt` for filter
//! output `y`, so no raw derivative of a velocity ever enters the normal
//! equations.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicParams, LowPassFilter};
use crate::error::{Error, Result};
use crate::linalg::least_squares;
use crate::types::Control;

/// Minimum number of log samples.
pub const MIN_SAMPLES: usize = 50;
/// Regressor condition number above which the log counts as unexciting.
pub const MAX_CONDITION: f64 = 1e10;

/// One identification sample: measured velocities and the held command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentRecord {
    pub eta: Vector2<f64>,
    pub u: Control,
}

/// How the state terms are sampled across one step of the log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    /// State terms at the start of the step; exact for logs produced with
    /// explicit Euler.
    Forward,
    /// State terms averaged over both ends of the step; second-order accurate
    /// for smooth trajectories with zero-order-hold commands.
    #[default]
    Trapezoid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentReport {
    pub params: DynamicParams,
    /// `‖A c − b‖ / ‖b‖` over the stacked filtered system.
    pub relative_residual: f64,
    pub condition_number: f64,
    pub rows: usize,
}

/// Identifies `c1…c6` from a uniformly sampled log.
pub fn identify_params(
    log: &[IdentRecord],
    dt: f64,
    filter_beta: f64,
    quadrature: Quadrature,
    a: f64,
) -> Result<IdentReport> {
    if log.len() < MIN_SAMPLES {
        return Err(Error::Dataset(format!(
            "identification needs at least {MIN_SAMPLES} samples, got {}",
            log.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive (got {dt})")));
    }
    if log
        .iter()
        .any(|r| r.eta.iter().any(|x| !x.is_finite()) || !r.u.v_ref.is_finite() || !r.u.omega_ref.is_finite())
    {
        return Err(Error::NonFinite("identification log"));
    }
    for (name, get) in [
        ("v_ref", (|r: &IdentRecord| r.u.v_ref) as fn(&IdentRecord) -> f64),
        ("omega_ref", |r: &IdentRecord| r.u.omega_ref),
    ] {
        let n = log.len() as f64;
        let mean = log.iter().map(get).sum::<f64>() / n;
        let var = log.iter().map(|r| (get(r) - mean).powi(2)).sum::<f64>() / n;
        if var < 1e-12 {
            return Err(Error::InsufficientExcitation(format!("{name} is constant")));
        }
    }

    let steps = log.len() - 1;
    // Columns of the raw (unfiltered) per-step regressors and right-hand sides.
    let mut v_cols = std::array::from_fn::<_, 4, _>(|_| Vec::with_capacity(steps)); // v̇, −ω², v, v_ref
    let mut w_cols = std::array::from_fn::<_, 4, _>(|_| Vec::with_capacity(steps)); // ω̇, vω, ω, ω_ref
    for k in 0..steps {
        let (v0, w0) = (log[k].eta[0], log[k].eta[1]);
        let (v1, w1) = (log[k + 1].eta[0], log[k + 1].eta[1]);
        let avg = |f: &dyn Fn(f64, f64) -> f64| match quadrature {
            Quadrature::Forward => f(v0, w0),
            Quadrature::Trapezoid => 0.5 * (f(v0, w0) + f(v1, w1)),
        };
        v_cols[0].push((v1 - v0) / dt);
        v_cols[1].push(-avg(&|_, w| w * w));
        v_cols[2].push(avg(&|v, _| v));
        v_cols[3].push(log[k].u.v_ref);
        w_cols[0].push((w1 - w0) / dt);
        w_cols[1].push(avg(&|v, w| v * w));
        w_cols[2].push(avg(&|_, w| w));
        w_cols[3].push(log[k].u.omega_ref);
    }
    let filt = |col: &Vec<f64>| LowPassFilter::filter_all(filter_beta, col);
    let v_f: Vec<Vec<f64>> = v_cols.iter().map(filt).collect::<Result<_>>()?;
    let w_f: Vec<Vec<f64>> = w_cols.iter().map(filt).collect::<Result<_>>()?;

    let rows = 2 * steps;
    let mut a_mat = DMatrix::<f64>::zeros(rows, 6);
    let mut b = DVector::<f64>::zeros(rows);
    for k in 0..steps {
        a_mat[(k, 0)] = v_f[0][k];
        a_mat[(k, 2)] = v_f[1][k];
        a_mat[(k, 3)] = v_f[2][k];
        b[k] = v_f[3][k];
        let r = steps + k;
        a_mat[(r, 1)] = w_f[0][k];
        a_mat[(r, 4)] = w_f[1][k];
        a_mat[(r, 5)] = w_f[2][k];
        b[r] = w_f[3][k];
    }
    let ls = least_squares(&a_mat, &b, MAX_CONDITION)?;
    let mut c = [0.0; 6];
    c.copy_from_slice(ls.solution.as_slice());
    let params = DynamicParams::new(c, a).map_err(|e| {
        Error::InsufficientExcitation(format!("identified parameters are not physical: {e}"))
    })?;
    let bnorm = b.norm();
    Ok(IdentReport {
        params,
        relative_residual: if bnorm > 0.0 { ls.residual_norm / bnorm } else { 0.0 },
        condition_number: ls.condition_number,
        rows,
    })
}

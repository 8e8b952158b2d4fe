//! Kinematic Jacobian baselines `[v_x, v_y, ω]ᵀ = J [ω_l, ω_r]ᵀ`.
//!
//! | variant | free parameters | form |
//! |---------|-----------------|------|
//! | IDD  | 0 | ideal differential drive |
//! | EDD2 | 2 | IDD with slip scales `α_v` on `v_x` and `α_ω` on `ω` |
//! | EDD5 | 5 | free `v_x` and `ω` rows, `v_y = s (ω_r − ω_l)` |
//! | FL   | 6 | every entry free |
//!
//! Each variant contains the previous one, so least-squares residuals are
//! ordered FL ≤ EDD5 ≤ EDD2 ≤ IDD on any data.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix3x2, Vector2, Vector3, Vector5};
use serde::{Deserialize, Serialize};

use crate::data::TerrainDataset;
use crate::error::{Error, Result};
use crate::identify::{MAX_CONDITION, MIN_SAMPLES};
use crate::linalg::least_squares;
use crate::types::{wrap, Control, State5, THETA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Idd,
    Edd2,
    Edd5,
    Fl,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Idd, Variant::Edd2, Variant::Edd5, Variant::Fl];

    pub fn free_parameters(self) -> usize {
        match self {
            Variant::Idd => 0,
            Variant::Edd2 => 2,
            Variant::Edd5 => 5,
            Variant::Fl => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Idd => "IDD",
            Variant::Edd2 => "EDD2",
            Variant::Edd5 => "EDD5",
            Variant::Fl => "FL",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "idd" => Ok(Variant::Idd),
            "edd2" => Ok(Variant::Edd2),
            "edd5" => Ok(Variant::Edd5),
            "fl" => Ok(Variant::Fl),
            other => Err(Error::InvalidParameter(format!("unknown kinematic model '{other}'"))),
        }
    }
}

/// Wheel radius and track width in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WheelGeometry {
    pub r: f64,
    pub b: f64,
}

impl Default for WheelGeometry {
    fn default() -> Self {
        Self { r: 0.098, b: 0.37 }
    }
}

impl WheelGeometry {
    pub fn new(r: f64, b: f64) -> Result<Self> {
        let g = Self { r, b };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) || !(self.b > 0.0) || !self.r.is_finite() || !self.b.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "wheel radius and track width must be positive (r = {}, b = {})",
                self.r, self.b
            )));
        }
        Ok(())
    }

    /// Nominal differential-drive Jacobian.
    pub fn ideal_jacobian(&self) -> Matrix3x2<f64> {
        let (r, b) = (self.r, self.b);
        Matrix3x2::new(r / 2.0, r / 2.0, 0.0, 0.0, -r / b, r / b)
    }
}

/// Inverse differential-drive map from body commands to wheel speeds.
pub fn wheels_from_body(u: &Control, geometry: &WheelGeometry) -> Result<Vector2<f64>> {
    geometry.validate()?;
    let half = u.omega_ref * geometry.b / 2.0;
    Ok(Vector2::new((u.v_ref - half) / geometry.r, (u.v_ref + half) / geometry.r))
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianModel {
    pub variant: Variant,
    pub geometry: WheelGeometry,
    /// Rows `v_x`, `v_y`, `ω`; columns `ω_l`, `ω_r`.
    pub j: Matrix3x2<f64>,
}

impl JacobianModel {
    pub fn ideal(geometry: WheelGeometry) -> Result<Self> {
        geometry.validate()?;
        Ok(Self {
            variant: Variant::Idd,
            geometry,
            j: geometry.ideal_jacobian(),
        })
    }

    pub fn predict_rates(&self, wheels: &Vector2<f64>) -> Vector3<f64> {
        self.j * wheels
    }

    pub fn to_file(&self) -> JacobianFile {
        JacobianFile {
            variant: self.variant,
            r: self.geometry.r,
            b: self.geometry.b,
            j: [
                [self.j[(0, 0)], self.j[(0, 1)]],
                [self.j[(1, 0)], self.j[(1, 1)]],
                [self.j[(2, 0)], self.j[(2, 1)]],
            ],
        }
    }

    pub fn from_file(file: &JacobianFile) -> Result<Self> {
        let geometry = WheelGeometry::new(file.r, file.b)?;
        let j = Matrix3x2::from_fn(|i, k| file.j[i][k]);
        if j.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Jacobian"));
        }
        Ok(Self {
            variant: file.variant,
            geometry,
            j,
        })
    }

    /// Body rates for a body-frame command.
    pub fn predict_command(&self, u: &Control) -> Result<Vector3<f64>> {
        Ok(self.predict_rates(&wheels_from_body(u, &self.geometry)?))
    }
}

/// Flat JSON form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianFile {
    pub variant: Variant,
    pub r: f64,
    pub b: f64,
    /// Rows `v_x`, `v_y`, `ω`.
    pub j: [[f64; 2]; 3],
}

/// Commanded wheel speeds and the measured body rates they produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WheelSample {
    pub wheels: Vector2<f64>,
    pub rates: Vector3<f64>,
}

/// Pairs each command with the mean measured body rates over its hold
/// interval, `½(η_k + η_{k+1})`.
pub fn wheel_samples(dataset: &TerrainDataset, geometry: &WheelGeometry) -> Result<Vec<WheelSample>> {
    if !dataset.records.is_empty() && !dataset.has_velocities {
        return Err(Error::Dataset(format!("dataset '{}' has no velocities", dataset.label)));
    }
    dataset
        .records
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            Ok(WheelSample {
                wheels: wheels_from_body(&a.control(), geometry)?,
                rates: Vector3::new(0.5 * (a.v + b.v), 0.5 * (a.v_lat + b.v_lat), 0.5 * (a.omega + b.omega)),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedJacobian {
    pub model: JacobianModel,
    /// Sum of squared rate errors over all samples and outputs.
    pub residual: f64,
    pub samples: usize,
}

fn sum_sq(model: &JacobianModel, samples: &[WheelSample]) -> f64 {
    samples
        .iter()
        .map(|s| (model.predict_rates(&s.wheels) - s.rates).norm_squared())
        .sum()
}

/// Least-squares fit of one variant's free parameters.
pub fn fit_jacobian_samples(variant: Variant, samples: &[WheelSample], geometry: &WheelGeometry) -> Result<FittedJacobian> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::Dataset(format!(
            "kinematic fit needs at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|s| s.wheels.iter().chain(s.rates.iter()).any(|x| !x.is_finite())) {
        return Err(Error::NonFinite("kinematic fit data"));
    }
    let n = samples.len();
    let ideal = JacobianModel::ideal(*geometry)?;
    let ls = |a: DMatrix<f64>, b: DVector<f64>| least_squares(&a, &b, MAX_CONDITION).map(|r| r.solution);
    let j = match variant {
        Variant::Idd => ideal.j,
        Variant::Edd2 => {
            let id = ideal.j;
            let av = ls(
                DMatrix::from_iterator(n, 1, samples.iter().map(|s| (id.row(0) * s.wheels)[0])),
                DVector::from_iterator(n, samples.iter().map(|s| s.rates[0])),
            )?[0];
            let aw = ls(
                DMatrix::from_iterator(n, 1, samples.iter().map(|s| (id.row(2) * s.wheels)[0])),
                DVector::from_iterator(n, samples.iter().map(|s| s.rates[2])),
            )?[0];
            Matrix3x2::new(av * id[(0, 0)], av * id[(0, 1)], 0.0, 0.0, aw * id[(2, 0)], aw * id[(2, 1)])
        }
        Variant::Edd5 | Variant::Fl => {
            let wheels = DMatrix::from_fn(n, 2, |i, k| samples[i].wheels[k]);
            let target = |row: usize| DVector::from_iterator(n, samples.iter().map(|s| s.rates[row]));
            let vx = ls(wheels.clone(), target(0))?;
            let om = ls(wheels.clone(), target(2))?;
            let vy = if variant == Variant::Fl {
                let r = ls(wheels, target(1))?;
                [r[0], r[1]]
            } else {
                let diff = DMatrix::from_iterator(n, 1, samples.iter().map(|s| s.wheels[1] - s.wheels[0]));
                let s = ls(diff, target(1))?[0];
                [-s, s]
            };
            Matrix3x2::new(vx[0], vx[1], vy[0], vy[1], om[0], om[1])
        }
    };
    let model = JacobianModel {
        variant,
        geometry: *geometry,
        j,
    };
    Ok(FittedJacobian {
        residual: sum_sq(&model, samples),
        model,
        samples: n,
    })
}

/// Fits a variant on a dataset with velocities.
pub fn fit_jacobian(variant: Variant, dataset: &TerrainDataset, geometry: &WheelGeometry) -> Result<FittedJacobian> {
    if dataset.is_empty() {
        return Err(Error::Dataset("dataset is empty".into()));
    }
    fit_jacobian_samples(variant, &wheel_samples(dataset, geometry)?, geometry)
}

/// Sum of squared rate errors of `model` on a dataset.
pub fn jacobian_residual(model: &JacobianModel, dataset: &TerrainDataset) -> Result<f64> {
    Ok(sum_sq(model, &wheel_samples(dataset, &model.geometry)?))
}

fn pose_rates(theta: f64, rates: &Vector3<f64>) -> Vector3<f64> {
    let (s, c) = theta.sin_cos();
    Vector3::new(rates[0] * c - rates[1] * s, rates[0] * s + rates[1] * c, rates[2])
}

/// Integrates the predicted body rates through the planar pose kinematics
/// (RK4 with rates held over each step). The returned states carry the
/// predicted `v_x` and `ω` as their velocities.
pub fn rollout_kinematic(model: &JacobianModel, x0: &State5, u_seq: &[Control], dt: f64) -> Result<Vec<State5>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive (got {dt})")));
    }
    let mut out = Vec::with_capacity(u_seq.len() + 1);
    out.push(*x0);
    let mut q = Vector3::new(x0.x, x0.y, x0.theta);
    for u in u_seq {
        let rates = model.predict_command(u)?;
        let f = |p: &Vector3<f64>| pose_rates(p[2], &rates);
        let k1 = f(&q);
        let k2 = f(&(q + k1 * (0.5 * dt)));
        let k3 = f(&(q + k2 * (0.5 * dt)));
        let k4 = f(&(q + k3 * dt));
        q += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        q[2] = wrap(q[2]);
        out.push(State5::from_vector(&Vector5::new(q[0], q[1], q[THETA], rates[0], rates[2]))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wheel_map_examples() {
        let g = WheelGeometry::new(0.1, 0.4).unwrap();
        assert_eq!(wheels_from_body(&Control::ZERO, &g).unwrap(), Vector2::zeros());
        let w = wheels_from_body(&Control::new(0.1, 0.0), &g).unwrap();
        assert!((w - Vector2::new(1.0, 1.0)).amax() < 1e-15);
        let w = wheels_from_body(&Control::new(0.0, 0.7), &g).unwrap();
        assert_eq!(w[0], -w[1]);
        assert!(WheelGeometry::new(0.0, 0.4).is_err());
    }

    #[test]
    fn ideal_straight_line() {
        let m = JacobianModel::ideal(WheelGeometry::new(0.1, 0.4).unwrap()).unwrap();
        let r = m.predict_rates(&Vector2::new(1.0, 1.0));
        assert!((r - Vector3::new(0.1, 0.0, 0.0)).amax() < 1e-15);
        let doubled = m.predict_rates(&Vector2::new(2.0, -0.6));
        assert_eq!(doubled, m.predict_rates(&Vector2::new(1.0, -0.3)) * 2.0);
    }

    #[test]
    fn rollout_straight_line() {
        let m = JacobianModel::ideal(WheelGeometry::default()).unwrap();
        let x0 = State5::new(1.0, 2.0, 0.0, 0.0, 0.0).unwrap();
        let traj = rollout_kinematic(&m, &x0, &[Control::new(0.5, 0.0); 10], 0.1).unwrap();
        let last = traj.last().unwrap();
        assert!((last.x - 1.5).abs() < 1e-12 && (last.y - 2.0).abs() < 1e-12);
        let still = rollout_kinematic(&m, &x0, &[Control::ZERO; 10], 0.1).unwrap();
        assert!(still.iter().all(|s| *s == x0 || (s.x == 1.0 && s.y == 2.0)));
    }

    #[test]
    fn too_few_samples() {
        let s = vec![
            WheelSample {
                wheels: Vector2::new(1.0, 2.0),
                rates: Vector3::zeros()
            };
            10
        ];
        assert!(fit_jacobian_samples(Variant::Fl, &s, &WheelGeometry::default()).is_err());
    }
}

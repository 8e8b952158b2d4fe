//! Synthetic multi-terrain simulator.
//!
//! Integrates the full dynamic model including a closed-form skid/slip
//! disturbance at fine substeps and records coarse samples. Alongside the
//! dataset it returns the exact per-step velocity residuals, measured
//! against a fine-step integration of the nominal model from the same state,
//! so the residual pipeline can be checked against an independent route.

use nalgebra::{Vector2, Vector5};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scripts::{command_script_library, ScriptKind};
use super::{Record, TerrainDataset};
use crate::dynamics::{integrate, state_rates, DynamicParams, Integrator};
use crate::error::{Error, Result};
use crate::types::{wrap, Control, ControlBounds, THETA};

/// Number of fine integration substeps per recorded sample.
pub const SUBSTEPS: usize = 100;

/// `coef · v^v · ω^omega · v_ref^v_ref · ω_ref^omega_ref`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceTerm {
    pub coef: f64,
    #[serde(default)]
    pub v: u32,
    #[serde(default)]
    pub omega: u32,
    #[serde(default)]
    pub v_ref: u32,
    #[serde(default)]
    pub omega_ref: u32,
}

impl DisturbanceTerm {
    fn eval(&self, v: f64, omega: f64, u: &Control) -> f64 {
        self.coef
            * v.powi(self.v as i32)
            * omega.powi(self.omega as i32)
            * u.v_ref.powi(self.v_ref as i32)
            * u.omega_ref.powi(self.omega_ref as i32)
    }
}

/// Polynomial acceleration disturbance `(δ̄_v, δ̄_ω)` of the velocities and
/// commands. Polynomials are smooth and bounded on any bounded envelope.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DisturbanceModel {
    #[serde(default)]
    pub v: Vec<DisturbanceTerm>,
    #[serde(default)]
    pub omega: Vec<DisturbanceTerm>,
}

impl DisturbanceModel {
    pub fn eval(&self, v: f64, omega: f64, u: &Control) -> Vector2<f64> {
        Vector2::new(
            self.v.iter().map(|t| t.eval(v, omega, u)).sum(),
            self.omega.iter().map(|t| t.eval(v, omega, u)).sum(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTerrainSpec {
    pub label: String,
    pub params: DynamicParams,
    #[serde(default)]
    pub disturbance: DisturbanceModel,
    /// Standard deviation of the per-step process noise on `v` (m/s).
    #[serde(default)]
    pub noise_v: f64,
    /// Standard deviation of the per-step process noise on `ω` (rad/s).
    #[serde(default)]
    pub noise_omega: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Exact one-step velocity residual between samples `k` and `k + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualTruth {
    pub k: usize,
    pub g_v: f64,
    pub g_omega: f64,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: TerrainDataset,
    pub residuals: Vec<ResidualTruth>,
}

fn fine_step<F>(x: &Vector5<f64>, dt: f64, rates: F) -> Vector5<f64>
where
    F: Fn(&Vector5<f64>) -> Vector5<f64>,
{
    let h = dt / SUBSTEPS as f64;
    let mut s = *x;
    for _ in 0..SUBSTEPS {
        s = integrate(&s, h, Integrator::Rk4, &rates);
    }
    s
}

/// Simulates one terrain under `commands`, starting at rest at the origin.
///
/// Each command is held for `dt`; one record is emitted per command. Process
/// noise, when enabled, is added to the velocities after every step.
pub fn synth_generate(spec: &SyntheticTerrainSpec, commands: &[Control], dt: f64) -> Result<SynthOutput> {
    if commands.is_empty() {
        return Err(Error::InvalidParameter("command script is empty".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive (got {dt})")));
    }
    spec.params.validate()?;
    if spec.noise_v < 0.0 || spec.noise_omega < 0.0 {
        return Err(Error::InvalidParameter("noise levels must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise_v = Normal::new(0.0, spec.noise_v).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let noise_w = Normal::new(0.0, spec.noise_omega).map_err(|e| Error::InvalidParameter(e.to_string()))?;

    let params = &spec.params;
    let mut x = Vector5::<f64>::zeros();
    let mut records = Vec::with_capacity(commands.len());
    let mut residuals = Vec::with_capacity(commands.len().saturating_sub(1));
    for (k, u) in commands.iter().enumerate() {
        records.push(Record {
            t: k as f64 * dt,
            x: x[0],
            y: x[1],
            theta: x[2],
            v_ref: u.v_ref,
            omega_ref: u.omega_ref,
            v: x[3],
            omega: x[4],
            v_lat: params.a * x[4],
        });
        if k + 1 == commands.len() {
            break;
        }
        let mut next = fine_step(&x, dt, |s| {
            state_rates(s, u, params, spec.disturbance.eval(s[3], s[4], u))
        });
        if spec.noise_v > 0.0 {
            next[3] += noise_v.sample(&mut rng);
        }
        if spec.noise_omega > 0.0 {
            next[4] += noise_w.sample(&mut rng);
        }
        next[THETA] = wrap(next[THETA]);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("simulated state"));
        }
        let nominal = fine_step(&x, dt, |s| state_rates(s, u, params, Vector2::zeros()));
        residuals.push(ResidualTruth {
            k,
            g_v: next[3] - nominal[3],
            g_omega: next[4] - nominal[4],
        });
        x = next;
    }
    Ok(SynthOutput {
        dataset: TerrainDataset {
            label: spec.label.clone(),
            dt,
            records,
            has_velocities: true,
        },
        residuals,
    })
}

/// Calibration run used to identify the lumped parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentRun {
    pub dt: f64,
    pub samples: usize,
    pub script: ScriptKind,
    pub spec: SyntheticTerrainSpec,
}

/// A reproducible suite of synthetic terrains plus a calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub dt: f64,
    pub train_duration: f64,
    pub test_duration: f64,
    pub script: ScriptKind,
    #[serde(default)]
    pub bounds: ControlBounds,
    pub ident: IdentRun,
    pub terrains: Vec<SyntheticTerrainSpec>,
}

const DEFAULT_SUITE: &str = include_str!("../../fixtures/suite_default.toml");

impl SuiteConfig {
    /// The three-terrain suite shipped in `fixtures/suite_default.toml`.
    pub fn default_suite() -> Self {
        Self::from_toml_str(DEFAULT_SUITE).expect("bundled suite fixture is valid")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let suite: SuiteConfig = toml::from_str(s)?;
        if suite.terrains.is_empty() {
            return Err(Error::InvalidParameter("suite has no terrains".into()));
        }
        Ok(suite)
    }

    pub fn terrain(&self, label: &str) -> Option<&SyntheticTerrainSpec> {
        self.terrains.iter().find(|t| t.label == label)
    }

    fn run(&self, spec: &SyntheticTerrainSpec, kind: ScriptKind, duration: f64, dt: f64, seed: u64) -> Result<SynthOutput> {
        let commands = command_script_library(kind, duration, dt, seed, &self.bounds)?;
        let spec = SyntheticTerrainSpec {
            seed,
            ..spec.clone()
        };
        synth_generate(&spec, &commands, dt)
    }

    pub fn train_set(&self, spec: &SyntheticTerrainSpec) -> Result<SynthOutput> {
        self.run(spec, self.script, self.train_duration, self.dt, spec.seed.wrapping_mul(2))
    }

    pub fn test_set(&self, spec: &SyntheticTerrainSpec) -> Result<SynthOutput> {
        self.run(spec, self.script, self.test_duration, self.dt, spec.seed.wrapping_mul(2).wrapping_add(1))
    }

    pub fn ident_set(&self) -> Result<SynthOutput> {
        let run = &self.ident;
        let duration = run.samples as f64 * run.dt;
        self.run(&run.spec, run.script, duration, run.dt, run.spec.seed)
    }
}

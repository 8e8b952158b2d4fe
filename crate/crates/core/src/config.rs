//! Parameter files and run configuration.
//!
//! Every section of [`RunConfig`] has defaults, so an empty file is a valid
//! configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{Variant, WheelGeometry};
use crate::data::ColumnMap;
use crate::dynamics::{DynamicParams, LowPassFilter};
use crate::ensemble::EnsembleConfig;
use crate::error::{Error, Result};
use crate::gp::GpTrainConfig;
use crate::identify::Quadrature;
use crate::propagation::SigmaConfig;

/// Flat parameter file: `c1…c6`, `a`, `dt` and `filter_beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    #[serde(default)]
    pub a: f64,
    pub dt: f64,
    #[serde(default = "default_beta")]
    pub filter_beta: f64,
}

fn default_beta() -> f64 {
    LowPassFilter::DEFAULT_BETA
}

impl ParamsFile {
    pub fn new(params: &DynamicParams, dt: f64, filter_beta: f64) -> Self {
        let c = params.c;
        Self {
            c1: c[0],
            c2: c[1],
            c3: c[2],
            c4: c[3],
            c5: c[4],
            c6: c[5],
            a: params.a,
            dt,
            filter_beta,
        }
    }

    pub fn params(&self) -> Result<DynamicParams> {
        DynamicParams::new([self.c1, self.c2, self.c3, self.c4, self.c5, self.c6], self.a)
    }

    pub fn validate(&self) -> Result<()> {
        self.params()?;
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt must be positive (got {})", self.dt)));
        }
        if !(self.filter_beta > 0.0 && self.filter_beta <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "filter_beta must lie in (0, 1] (got {})",
                self.filter_beta
            )));
        }
        Ok(())
    }

    /// Reads JSON, or TOML when the extension is `.toml`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: ParamsFile = if is_toml(path) {
            toml::from_str(&text)?
        } else {
            serde_json::from_str(&text)?
        };
        file.validate()?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

fn is_toml(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteSection {
    /// Suite file; the bundled three-terrain suite when absent.
    pub path: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentifySection {
    pub filter_beta: f64,
    pub quadrature: Quadrature,
}

impl Default for IdentifySection {
    fn default() -> Self {
        Self {
            filter_beta: 1.0,
            quadrature: Quadrature::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineSection {
    pub geometry: WheelGeometry,
    pub variants: Vec<Variant>,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            geometry: WheelGeometry::default(),
            variants: Variant::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    pub horizon_s: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { horizon_s: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoverageSection {
    pub scenarios: usize,
    pub steps: usize,
    pub n_mc: usize,
}

impl Default for CoverageSection {
    fn default() -> Self {
        Self {
            scenarios: 10,
            steps: 10,
            n_mc: 250,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatmapSection {
    pub v_bins: usize,
    pub omega_bins: usize,
}

impl Default for HeatmapSection {
    fn default() -> Self {
        Self {
            v_bins: 6,
            omega_bins: 8,
        }
    }
}

/// Everything a CLI run reads besides its datasets and models.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Low-pass coefficient used when deriving velocities from poses.
    pub filter_beta: Option<f64>,
    pub suite: SuiteSection,
    pub identify: IdentifySection,
    pub gp: GpTrainConfig,
    pub ensemble: EnsembleConfig,
    pub sigma: SigmaConfig,
    pub baselines: BaselineSection,
    pub sweep: SweepSection,
    pub coverage: CoverageSection,
    pub heatmap: HeatmapSection,
    pub columns: ColumnMap,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(s)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn filter_beta(&self) -> f64 {
        self.filter_beta.unwrap_or(LowPassFilter::DEFAULT_BETA)
    }

    pub fn validate(&self) -> Result<()> {
        let beta = self.filter_beta();
        if !(beta > 0.0 && beta <= 1.0) || !(self.identify.filter_beta > 0.0 && self.identify.filter_beta <= 1.0) {
            return Err(Error::InvalidParameter("filter coefficients must lie in (0, 1]".into()));
        }
        if !(self.ensemble.alpha >= 0.0) || self.ensemble.history == 0 {
            return Err(Error::InvalidParameter("ensemble needs alpha >= 0 and history >= 1".into()));
        }
        self.baselines.geometry.validate()?;
        if !(self.sweep.horizon_s > 0.0) {
            return Err(Error::InvalidParameter("sweep horizon must be positive".into()));
        }
        if self.coverage.n_mc < 2 || self.coverage.steps == 0 {
            return Err(Error::InvalidParameter("coverage needs n_mc >= 2 and steps >= 1".into()));
        }
        if self.heatmap.v_bins == 0 || self.heatmap.omega_bins == 0 {
            return Err(Error::InvalidParameter("heatmap needs at least one bin per axis".into()));
        }
        if self.gp.k_clusters == 0 {
            return Err(Error::InvalidParameter("gp.k_clusters must be positive".into()));
        }
        Ok(())
    }
}

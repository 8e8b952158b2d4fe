//! Run-directory writers and the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use skidgp::eval::{ErrorReport, WeightTrace};
use skidgp::propagation::QueryMode;
use skidgp::Result;

use crate::pipeline::{CoverageRecord, HeatmapSummary};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// Inputs, outputs, seed and configuration hash of one run.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

/// Writes files under one directory and records their hashes.
pub struct RunDir {
    root: PathBuf,
    manifest: Manifest,
}

impl RunDir {
    pub fn create(root: &Path, subcommand: &str, seed: u64, config_json: &str) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest: Manifest {
                tool: "skidgp".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                subcommand: subcommand.into(),
                seed,
                config_sha256: sha256_hex(config_json.as_bytes()),
                inputs: Vec::new(),
                outputs: Vec::new(),
            },
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        self.manifest.inputs.push(FileHash {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    /// Writes `bytes` to `rel` under the run directory.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.manifest.outputs.push(FileHash {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.write(rel, text.as_bytes())
    }

    pub fn finish(self) -> Result<Manifest> {
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        fs::write(self.root.join("manifest.json"), text)?;
        Ok(self.manifest)
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| std::io::Error::other(e.to_string()).into())
}

/// Position %-errors.
pub fn table1_csv(errors: &[ErrorReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "terrain",
        "model",
        "angular_position_pct",
        "linear_position_pct",
        "trajectories",
        "angular_excluded",
        "linear_excluded",
    ])?;
    for e in errors {
        w.write_record([
            e.terrain.clone(),
            e.model.clone(),
            opt(e.angular_position_pct),
            opt(e.linear_position_pct),
            e.trajectories.to_string(),
            e.angular_excluded.to_string(),
            e.linear_excluded.to_string(),
        ])?;
    }
    finish(w)
}

/// Velocity MAEs.
pub fn table2_csv(errors: &[ErrorReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["terrain", "model", "angular_velocity_mae", "linear_velocity_mae", "trajectories"])?;
    for e in errors {
        w.write_record([
            e.terrain.clone(),
            e.model.clone(),
            e.angular_velocity_mae.to_string(),
            e.linear_velocity_mae.to_string(),
            e.trajectories.to_string(),
        ])?;
    }
    finish(w)
}

pub fn weights_csv(traces: &[(String, WeightTrace)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let labels = traces.first().map(|(_, t)| t.labels.clone()).unwrap_or_default();
    let mut header = vec!["stream".to_string(), "step".to_string()];
    header.extend(labels.iter().map(|l| format!("w_{l}")));
    w.write_record(&header)?;
    for (stream, trace) in traces {
        for (k, row) in trace.weights.iter().enumerate() {
            let mut rec = vec![stream.clone(), k.to_string()];
            rec.extend(row.iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
    }
    finish(w)
}

pub fn coverage_csv(rows: &[CoverageRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["terrain", "mode", "scenario", "step", "sigma_point", "linear"])?;
    for r in rows {
        let mode = match r.mode {
            QueryMode::PerSample => "per_sample",
            QueryMode::EnsembleMean => "ensemble_mean",
        };
        w.write_record([
            r.terrain.clone(),
            mode.to_string(),
            r.row.scenario.to_string(),
            r.row.step.to_string(),
            r.row.sigma_point.to_string(),
            r.row.linear.to_string(),
        ])?;
    }
    finish(w)
}

pub fn heatmap_csv(maps: &[HeatmapSummary]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["terrain", "model", "v_lo", "v_hi", "omega_lo", "omega_hi", "count", "mean_abs_error", "empty"])?;
    for m in maps {
        let g = &m.grid;
        for i in 0..g.v_edges.len() - 1 {
            for j in 0..g.omega_edges.len() - 1 {
                let e = g.mean_abs_error[i][j];
                w.write_record([
                    m.terrain.clone(),
                    m.model.clone(),
                    g.v_edges[i].to_string(),
                    g.v_edges[i + 1].to_string(),
                    g.omega_edges[j].to_string(),
                    g.omega_edges[j + 1].to_string(),
                    g.counts[i][j].to_string(),
                    opt(e),
                    e.is_none().to_string(),
                ])?;
            }
        }
    }
    finish(w)
}

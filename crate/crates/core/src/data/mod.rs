//! Terrain datasets: CSV ingestion, ground-truth velocity derivation and the
//! synthetic multi-terrain simulator.

mod scripts;
mod synth;

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::LowPassFilter;
use crate::error::{Error, Result};
use crate::types::{wrap, Control, State5};

pub use scripts::{command_script_library, ScriptKind};
pub use synth::{
    synth_generate, DisturbanceModel, DisturbanceTerm, ResidualTruth, SuiteConfig, SynthOutput,
    SyntheticTerrainSpec,
};

/// One time-stamped sample of a terrain log.
///
/// `v`, `omega` and `v_lat` are body-frame velocities; they are only
/// meaningful once the dataset has velocities (see
/// [`TerrainDataset::has_velocities`]).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Record {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v_ref: f64,
    pub omega_ref: f64,
    pub v: f64,
    pub omega: f64,
    pub v_lat: f64,
}

impl Record {
    pub fn state(&self) -> State5 {
        State5 {
            x: self.x,
            y: self.y,
            theta: self.theta,
            v: self.v,
            omega: self.omega,
        }
    }

    pub fn control(&self) -> Control {
        Control::new(self.v_ref, self.omega_ref)
    }
}

/// Time-indexed commanded velocities, poses and body velocities for one terrain.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainDataset {
    pub label: String,
    pub dt: f64,
    pub records: Vec<Record>,
    pub has_velocities: bool,
}

impl TerrainDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Copy with the records in reverse order and time re-indexed forward.
    pub fn time_reversed(&self) -> Self {
        let t_end = self.records.last().map_or(0.0, |r| r.t);
        let mut records: Vec<Record> = self.records.iter().rev().cloned().collect();
        for r in &mut records {
            r.t = t_end - r.t;
        }
        Self {
            records,
            ..self.clone()
        }
    }
}

/// Names of the CSV columns holding each field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub t: String,
    pub x: String,
    pub y: String,
    pub theta: String,
    pub v_ref: String,
    pub omega_ref: String,
    /// Optional velocity columns; when both are present the dataset is
    /// loaded with velocities.
    pub v: String,
    pub omega: String,
    pub v_lat: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            t: "t".into(),
            x: "x".into(),
            y: "y".into(),
            theta: "theta".into(),
            v_ref: "v_ref".into(),
            omega_ref: "omega_ref".into(),
            v: "v".into(),
            omega: "omega".into(),
            v_lat: "v_lat".into(),
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median spacing of the timestamps.
pub fn median_dt(records: &[Record]) -> f64 {
    let mut gaps: Vec<f64> = records.windows(2).map(|w| w[1].t - w[0].t).collect();
    median(&mut gaps)
}

fn label_for(path: &Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .or_else(|| path.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads a CSV log with a named header row.
///
/// Timestamps must be strictly increasing; `dt` is the median gap. Row
/// numbers in errors are 1-based file lines (the header is line 1).
pub fn load_dataset(path: &Path, columns: &ColumnMap) -> Result<TerrainDataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let required = [
        &columns.t,
        &columns.x,
        &columns.y,
        &columns.theta,
        &columns.v_ref,
        &columns.omega_ref,
    ];
    let mut idx = [0usize; 6];
    for (slot, name) in idx.iter_mut().zip(required) {
        *slot = find(name).ok_or_else(|| Error::Dataset(format!("missing column '{name}'")))?;
    }
    let vel_idx = match (find(&columns.v), find(&columns.omega)) {
        (Some(v), Some(w)) => Some((v, w, find(&columns.v_lat))),
        _ => None,
    };

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Row {
            row: line,
            message: e.to_string(),
        })?;
        let get = |col: usize| -> Result<f64> {
            let raw = row.get(col).ok_or_else(|| Error::Row {
                row: line,
                message: format!("missing field {col}"),
            })?;
            let v: f64 = raw.parse().map_err(|_| Error::Row {
                row: line,
                message: format!("cannot parse '{raw}' as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Row {
                    row: line,
                    message: format!("non-finite value '{raw}'"),
                });
            }
            Ok(v)
        };
        let mut rec = Record {
            t: get(idx[0])?,
            x: get(idx[1])?,
            y: get(idx[2])?,
            theta: get(idx[3])?,
            v_ref: get(idx[4])?,
            omega_ref: get(idx[5])?,
            ..Default::default()
        };
        if let Some((v, w, lat)) = vel_idx {
            rec.v = get(v)?;
            rec.omega = get(w)?;
            if let Some(lat) = lat {
                rec.v_lat = get(lat)?;
            }
        }
        if let Some(prev) = records.last() {
            let prev: &Record = prev;
            if rec.t <= prev.t {
                return Err(Error::Row {
                    row: line,
                    message: format!("timestamp {} does not increase (previous {})", rec.t, prev.t),
                });
            }
        }
        records.push(rec);
    }
    Ok(TerrainDataset {
        label: label_for(path),
        dt: median_dt(&records),
        has_velocities: vel_idx.is_some(),
        records,
    })
}

/// Writes the dataset in the default column layout.
///
/// Numbers use the shortest representation that parses back to the same
/// `f64`, so [`load_dataset`] round-trips every numeric field exactly.
pub fn save_dataset(path: &Path, dataset: &TerrainDataset) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = std::io::BufWriter::new(File::create(path)?);
    if dataset.has_velocities {
        writeln!(out, "t,x,y,theta,v_ref,omega_ref,v,omega,v_lat")?;
    } else {
        writeln!(out, "t,x,y,theta,v_ref,omega_ref")?;
    }
    for r in &dataset.records {
        write!(out, "{},{},{},{},{},{}", r.t, r.x, r.y, r.theta, r.v_ref, r.omega_ref)?;
        if dataset.has_velocities {
            write!(out, ",{},{},{}", r.v, r.omega, r.v_lat)?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Derives body-frame velocities from the pose track.
///
/// Poses are low-pass filtered per channel (heading unwrapped first), then
/// backward-differenced. `v` is the global velocity projected on the mean
/// heading of the interval, `v_lat` its lateral complement, and `ω` the
/// wrapped heading difference over the gap. The first record copies the
/// second. Stored poses are left untouched.
pub fn derive_velocities(dataset: &TerrainDataset, filter_beta: f64) -> Result<TerrainDataset> {
    let n = dataset.records.len();
    if n < 2 {
        return Err(Error::Dataset(format!("need at least 2 records to derive velocities, got {n}")));
    }
    let dt = median_dt(&dataset.records);
    for (i, w) in dataset.records.windows(2).enumerate() {
        let gap = w[1].t - w[0].t;
        if (gap - dt).abs() > 0.1 * dt {
            return Err(Error::Row {
                row: i + 3,
                message: format!("sampling gap {gap} deviates more than 10% from {dt}"),
            });
        }
    }
    let mut unwrapped = Vec::with_capacity(n);
    let mut acc = dataset.records[0].theta;
    unwrapped.push(acc);
    for w in dataset.records.windows(2) {
        acc += wrap(w[1].theta - w[0].theta);
        unwrapped.push(acc);
    }
    let xs: Vec<f64> = dataset.records.iter().map(|r| r.x).collect();
    let ys: Vec<f64> = dataset.records.iter().map(|r| r.y).collect();
    let xf = LowPassFilter::filter_all(filter_beta, &xs)?;
    let yf = LowPassFilter::filter_all(filter_beta, &ys)?;
    let tf = LowPassFilter::filter_all(filter_beta, &unwrapped)?;

    let mut records = dataset.records.clone();
    for k in 1..n {
        let gap = records[k].t - records[k - 1].t;
        let dx = (xf[k] - xf[k - 1]) / gap;
        let dy = (yf[k] - yf[k - 1]) / gap;
        let heading = 0.5 * (tf[k] + tf[k - 1]);
        let (s, c) = heading.sin_cos();
        records[k].v = dx * c + dy * s;
        records[k].v_lat = -dx * s + dy * c;
        records[k].omega = wrap(tf[k] - tf[k - 1]) / gap;
    }
    records[0].v = records[1].v;
    records[0].omega = records[1].omega;
    records[0].v_lat = records[1].v_lat;
    Ok(TerrainDataset {
        label: dataset.label.clone(),
        dt,
        records,
        has_velocities: true,
    })
}

/// Returns the dataset unchanged if it already has velocities, otherwise
/// derives them.
pub fn ensure_velocities(dataset: TerrainDataset, filter_beta: f64) -> Result<TerrainDataset> {
    if dataset.has_velocities {
        Ok(dataset)
    } else {
        derive_velocities(&dataset, filter_beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poses(n: usize, f: impl Fn(usize) -> (f64, f64, f64)) -> TerrainDataset {
        let records = (0..n)
            .map(|k| {
                let (x, y, theta) = f(k);
                Record {
                    t: k as f64 * 0.1,
                    x,
                    y,
                    theta,
                    ..Default::default()
                }
            })
            .collect();
        TerrainDataset {
            label: "test".into(),
            dt: 0.1,
            records,
            has_velocities: false,
        }
    }

    #[test]
    fn straight_line_velocity() {
        let ds = derive_velocities(&poses(20, |k| (k as f64 * 0.1, 0.0, 0.0)), 1.0).unwrap();
        for r in &ds.records {
            assert!((r.v - 1.0).abs() < 1e-12);
            assert!(r.omega.abs() < 1e-12);
        }
    }

    #[test]
    fn pure_rotation_velocity() {
        let ds = derive_velocities(&poses(200, |k| (0.0, 0.0, wrap(k as f64 * 0.05))), 1.0).unwrap();
        for r in &ds.records {
            assert!((r.omega - 0.5).abs() < 1e-9, "{}", r.omega);
            assert!(r.v.abs() < 1e-12);
        }
    }

    #[test]
    fn derive_needs_two_records() {
        assert!(derive_velocities(&poses(1, |_| (0.0, 0.0, 0.0)), 1.0).is_err());
    }

    #[test]
    fn derive_rejects_irregular_sampling() {
        let mut ds = poses(10, |k| (k as f64, 0.0, 0.0));
        ds.records[5].t += 0.05;
        assert!(derive_velocities(&ds, 1.0).is_err());
    }

    #[test]
    fn median_of_gaps() {
        let mut v = vec![3.0, 1.0, 2.0, 10.0];
        assert_eq!(median(&mut v), 2.5);
    }
}

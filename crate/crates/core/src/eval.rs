//! Evaluation protocol: moving-horizon error sweeps, weight traces,
//! Monte-Carlo coverage and command-space error heatmaps.

use std::io::Write;

use nalgebra::{Matrix5, Vector2, Vector5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{rollout_kinematic, JacobianModel};
use crate::data::TerrainDataset;
use crate::ensemble::{EnsembleConfig, HistoryRecord, TerrainGpBank, WeightEstimator};
use crate::error::{Error, Result};
use crate::propagation::{
    coverage_fraction, monte_carlo_rollout, propagate_horizon, propagate_linear, QueryMode, ResidualModel, SigmaConfig,
    StepModel,
};
use crate::types::{wrap, Control, ControlBounds, GaussianBelief, State5, OMEGA, V};

/// Trajectories whose heading change is below this are left out of the
/// angular %-error.
pub const MIN_HEADING_CHANGE: f64 = 0.05;
/// Trajectories whose displacement is below this are left out of the linear
/// %-error.
pub const MIN_DISPLACEMENT: f64 = 0.05;

/// A motion model that can be rolled forward from a logged state.
#[derive(Debug, Clone, Copy)]
pub enum MotionModel<'a> {
    /// Dynamic model plus the residual mean (mean-only rollout).
    Dynamic {
        step: StepModel,
        residual: ResidualModel<'a>,
    },
    Kinematic(&'a JacobianModel),
}

impl MotionModel<'_> {
    /// States `x(0) … x(N)` under `u_seq` held for `dt` each. Kinematic
    /// models ignore the initial velocities; dynamic models use their own
    /// step length.
    pub fn rollout(&self, x0: &State5, u_seq: &[Control], dt: f64) -> Result<Vec<State5>> {
        match self {
            MotionModel::Dynamic { step, residual } => {
                let mut out = Vec::with_capacity(u_seq.len() + 1);
                out.push(*x0);
                let mut x = x0.to_vector();
                for u in u_seq {
                    let mu = residual.query_mean(&Vector2::new(x[V], x[OMEGA]), u)?;
                    x = step.step(&x, u);
                    x[V] += mu[0];
                    x[OMEGA] += mu[1];
                    out.push(State5::from_vector(&x)?);
                }
                Ok(out)
            }
            MotionModel::Kinematic(model) => rollout_kinematic(model, x0, u_seq, dt),
        }
    }
}

/// Aggregated sweep errors for one model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub terrain: String,
    pub model: String,
    /// Mean of `|heading error| / |heading change|`, in percent.
    pub angular_position_pct: Option<f64>,
    /// Mean of `‖position error‖ / displacement`, in percent.
    pub linear_position_pct: Option<f64>,
    /// Mean absolute terminal angular-velocity error (rad/s).
    pub angular_velocity_mae: f64,
    /// Mean absolute terminal linear-velocity error (m/s).
    pub linear_velocity_mae: f64,
    pub trajectories: usize,
    pub angular_excluded: usize,
    pub linear_excluded: usize,
}

fn horizon_steps(horizon_s: f64, dt: f64) -> Result<usize> {
    let n = (horizon_s / dt).round();
    if !(dt > 0.0) || !(horizon_s > 0.0) || n < 1.0 || ((n * dt) - horizon_s).abs() > 1e-6 * horizon_s.max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon_s} s is not a positive multiple of dt = {dt}"
        )));
    }
    Ok(n as usize)
}

fn require_velocities(dataset: &TerrainDataset) -> Result<()> {
    if !dataset.has_velocities {
        return Err(Error::Dataset(format!("dataset '{}' has no velocities", dataset.label)));
    }
    Ok(())
}

/// Rolls the model over every window of `horizon_s` and compares the
/// terminal state with the log.
pub fn sweep_errors(model: &MotionModel, model_name: &str, dataset: &TerrainDataset, horizon_s: f64) -> Result<ErrorReport> {
    sweep_with(|_| Ok(*model), model_name, dataset, horizon_s)
}

/// Sweep of the weighted ensemble; the weights used for the window starting
/// at `k` are estimated online from the transitions before `k` only.
pub fn sweep_errors_ensemble(
    bank: &TerrainGpBank,
    step: &StepModel,
    config: &EnsembleConfig,
    model_name: &str,
    dataset: &TerrainDataset,
    horizon_s: f64,
) -> Result<ErrorReport> {
    require_velocities(dataset)?;
    let recs = &dataset.records;
    let mut est = WeightEstimator::new(bank, step.params, step.dt, step.integrator, *config)?;
    let mut weights = Vec::with_capacity(recs.len());
    for k in 0..recs.len() {
        weights.push(est.weights().clone());
        if k + 1 < recs.len() && recs[k + 1].t - recs[k].t <= 1.5 * dataset.dt {
            let (a, b) = (&recs[k], &recs[k + 1]);
            est.update(HistoryRecord::new(Vector2::new(a.v, a.omega), a.control(), Vector2::new(b.v, b.omega)))?;
        }
    }
    sweep_with(
        |k| {
            Ok(MotionModel::Dynamic {
                step: *step,
                residual: ResidualModel::Ensemble {
                    bank,
                    weights: &weights[k],
                },
            })
        },
        model_name,
        dataset,
        horizon_s,
    )
}

struct WindowError {
    omega: f64,
    v: f64,
    angular_pct: Option<f64>,
    linear_pct: Option<f64>,
}

fn sweep_with<'a, F>(model_at: F, model_name: &str, dataset: &TerrainDataset, horizon_s: f64) -> Result<ErrorReport>
where
    F: Fn(usize) -> Result<MotionModel<'a>> + Sync,
{
    require_velocities(dataset)?;
    let dt = dataset.dt;
    let n = horizon_steps(horizon_s, dt)?;
    let recs = &dataset.records;
    if recs.len() <= n {
        return Err(Error::Dataset(format!(
            "dataset '{}' has {} records, shorter than one {n}-step horizon",
            dataset.label,
            recs.len()
        )));
    }
    let controls: Vec<Control> = recs.iter().map(|r| r.control()).collect();
    // Windows are independent; the ordered collect keeps the sums below
    // reproducible.
    let windows: Vec<Option<WindowError>> = (0..recs.len() - n)
        .into_par_iter()
        .map(|k| {
            let window = &recs[k..=k + n];
            if window.windows(2).any(|w| w[1].t - w[0].t > 1.5 * dt) {
                return Ok(None);
            }
            let traj = model_at(k)?.rollout(&recs[k].state(), &controls[k..k + n], dt)?;
            let pred = traj[n];
            let gt = &recs[k + n];
            let heading_change: f64 = window.windows(2).map(|w| wrap(w[1].theta - w[0].theta)).sum::<f64>().abs();
            let displacement = ((gt.x - recs[k].x).powi(2) + (gt.y - recs[k].y).powi(2)).sqrt();
            Ok(Some(WindowError {
                omega: (pred.omega - gt.omega).abs(),
                v: (pred.v - gt.v).abs(),
                angular_pct: (heading_change >= MIN_HEADING_CHANGE)
                    .then(|| 100.0 * wrap(pred.theta - gt.theta).abs() / heading_change),
                linear_pct: (displacement >= MIN_DISPLACEMENT).then(|| {
                    100.0 * ((pred.x - gt.x).powi(2) + (pred.y - gt.y).powi(2)).sqrt() / displacement
                }),
            }))
        })
        .collect::<Result<_>>()?;
    let (mut ang_pct, mut lin_pct) = (Vec::new(), Vec::new());
    let (mut ang_mae, mut lin_mae) = (0.0, 0.0);
    let (mut ang_ex, mut lin_ex) = (0, 0);
    let mut count = 0;
    for e in windows.iter().flatten() {
        count += 1;
        ang_mae += e.omega;
        lin_mae += e.v;
        match e.angular_pct {
            Some(p) => ang_pct.push(p),
            None => ang_ex += 1,
        }
        match e.linear_pct {
            Some(p) => lin_pct.push(p),
            None => lin_ex += 1,
        }
    }
    if count == 0 {
        return Err(Error::Dataset(format!("dataset '{}' has no uniformly sampled window", dataset.label)));
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(ErrorReport {
        terrain: dataset.label.clone(),
        model: model_name.to_string(),
        angular_position_pct: mean(&ang_pct),
        linear_position_pct: mean(&lin_pct),
        angular_velocity_mae: ang_mae / count as f64,
        linear_velocity_mae: lin_mae / count as f64,
        trajectories: count,
        angular_excluded: ang_ex,
        linear_excluded: lin_ex,
    })
}

/// Consecutive-record transitions of a dataset, skipping time gaps.
pub fn transitions(dataset: &TerrainDataset) -> Result<Vec<HistoryRecord>> {
    require_velocities(dataset)?;
    Ok(dataset
        .records
        .windows(2)
        .filter(|w| w[1].t - w[0].t <= 1.5 * dataset.dt)
        .map(|w| {
            HistoryRecord::new(
                Vector2::new(w[0].v, w[0].omega),
                w[0].control(),
                Vector2::new(w[1].v, w[1].omega),
            )
        })
        .collect())
}

/// Weight trajectory of a stream; row 0 is the uniform start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTrace {
    pub labels: Vec<String>,
    pub weights: Vec<Vec<f64>>,
    pub true_index: Option<usize>,
    /// First update after which the true terrain has the largest weight.
    pub steps_to_argmax: Option<usize>,
    /// First update after which the true terrain's weight reaches the
    /// threshold.
    pub steps_to_threshold: Option<usize>,
    pub threshold: f64,
    /// Mean true-terrain weight after the first `2K` updates.
    pub steady_state_weight: Option<f64>,
    /// Fraction of updates with the true terrain on top.
    pub argmax_accuracy: Option<f64>,
}

impl WeightTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string()];
        header.extend(self.labels.iter().map(|l| format!("w_{l}")));
        w.write_record(&header)?;
        for (k, row) in self.weights.iter().enumerate() {
            let mut rec = vec![k.to_string()];
            rec.extend(row.iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const WEIGHT_THRESHOLD: f64 = 0.8;

/// Streams transitions through the online weight estimator.
pub fn run_weight_trace(
    bank: &TerrainGpBank,
    stream: &[HistoryRecord],
    true_index: Option<usize>,
    step: &StepModel,
    config: &EnsembleConfig,
) -> Result<WeightTrace> {
    let mut est = WeightEstimator::new(bank, step.params, step.dt, step.integrator, *config)?;
    let mut weights = vec![est.weights().as_slice().to_vec()];
    for rec in stream {
        weights.push(est.update(*rec)?.as_slice().to_vec());
    }
    let argmax = |w: &[f64]| {
        let mut b = 0;
        for (i, &x) in w.iter().enumerate() {
            if x > w[b] {
                b = i;
            }
        }
        b
    };
    let skip = 2 * config.history;
    let (mut to_argmax, mut to_thr, mut steady, mut acc) = (None, None, None, None);
    if let Some(t) = true_index.filter(|&t| t < bank.len()) {
        to_argmax = (1..weights.len()).find(|&k| argmax(&weights[k]) == t);
        to_thr = (1..weights.len()).find(|&k| weights[k][t] >= WEIGHT_THRESHOLD);
        if weights.len() > skip + 1 {
            let tail = &weights[skip + 1..];
            steady = Some(tail.iter().map(|w| w[t]).sum::<f64>() / tail.len() as f64);
        }
        if weights.len() > 1 {
            let hits = weights[1..].iter().filter(|w| argmax(w) == t).count();
            acc = Some(hits as f64 / (weights.len() - 1) as f64);
        }
    }
    Ok(WeightTrace {
        labels: bank.labels().iter().map(|s| s.to_string()).collect(),
        weights,
        true_index,
        steps_to_argmax: to_argmax,
        steps_to_threshold: to_thr,
        threshold: WEIGHT_THRESHOLD,
        steady_state_weight: steady,
        argmax_accuracy: acc,
    })
}

/// Initial belief and command sequence for a coverage run.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageScenario {
    pub belief0: GaussianBelief,
    pub controls: Vec<Control>,
}

/// Seeded scenarios with an exactly known initial pose, uncertain initial
/// velocities and a random command sequence held for the horizon.
pub fn coverage_scenarios(count: usize, steps: usize, bounds: &ControlBounds, seed: u64) -> Result<Vec<CoverageScenario>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let v = rng.gen_range(0.2..0.8) * bounds.max_v;
            let w = rng.gen_range(-0.6..0.6) * bounds.max_omega;
            let mean = Vector5::new(0.0, 0.0, rng.gen_range(-3.0..3.0), v, w);
            let sv: f64 = rng.gen_range(0.02..0.1);
            let sw: f64 = rng.gen_range(0.02..0.15);
            let cov = Matrix5::from_diagonal(&Vector5::new(0.0, 0.0, 0.0, sv * sv, sw * sw));
            let u0 = Control::new(rng.gen_range(0.2..1.0) * bounds.max_v, rng.gen_range(-0.8..0.8) * bounds.max_omega);
            let du = Control::new(rng.gen_range(-0.05..0.05) * bounds.max_v, rng.gen_range(-0.1..0.1) * bounds.max_omega);
            let controls = (0..steps)
                .map(|k| Control::new(u0.v_ref + du.v_ref * k as f64, u0.omega_ref + du.omega_ref * k as f64))
                .collect();
            Ok(CoverageScenario {
                belief0: GaussianBelief::new(mean, cov)?,
                controls,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub scenario: usize,
    pub step: usize,
    pub sigma_point: f64,
    pub linear: f64,
}

fn coverage_or_degenerate(belief: &GaussianBelief, samples: &[Vector5<f64>]) -> Result<f64> {
    let block = belief.cov().fixed_view::<2, 2>(0, 0);
    if block.amax() <= 1e-14 {
        let mu = belief.mean();
        let inside = samples
            .iter()
            .filter(|s| (s[0] - mu[0]).abs() <= 1e-9 && (s[1] - mu[1]).abs() <= 1e-9)
            .count();
        return Ok(inside as f64 / samples.len() as f64);
    }
    coverage_fraction(belief, samples)
}

/// Per-step 3σ `(X, Y)` coverage of the sigma-point and linear propagators
/// against a Monte-Carlo rollout.
#[allow(clippy::too_many_arguments)]
pub fn run_coverage(
    scenario_index: usize,
    scenario: &CoverageScenario,
    residual: &ResidualModel,
    step: &StepModel,
    sigma: &SigmaConfig,
    n_mc: usize,
    seed: u64,
    mode: QueryMode,
) -> Result<Vec<CoverageRow>> {
    let sp = propagate_horizon(&scenario.belief0, &scenario.controls, residual, step, sigma)?;
    let lin = propagate_linear(&scenario.belief0, &scenario.controls, residual, step)?;
    let mc = monte_carlo_rollout(&scenario.belief0, &scenario.controls, residual, step, n_mc, seed, mode)?;
    (0..=scenario.controls.len())
        .map(|k| {
            let samples = mc.at_step(k);
            Ok(CoverageRow {
                scenario: scenario_index,
                step: k,
                sigma_point: coverage_or_degenerate(&sp.beliefs[k], &samples)?,
                linear: coverage_or_degenerate(&lin.beliefs[k], &samples)?,
            })
        })
        .collect()
}

pub fn write_coverage_csv<W: Write>(rows: &[CoverageRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario", "step", "sigma_point", "linear"])?;
    for r in rows {
        w.write_record([r.scenario.to_string(), r.step.to_string(), r.sigma_point.to_string(), r.linear.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean absolute one-step angular-velocity error binned by command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub v_edges: Vec<f64>,
    pub omega_edges: Vec<f64>,
    /// `[i_v][i_ω]`; `None` marks an empty bin.
    pub mean_abs_error: Vec<Vec<Option<f64>>>,
    pub counts: Vec<Vec<usize>>,
}

impl HeatmapGrid {
    fn bin(edges: &[f64], x: f64) -> Option<usize> {
        let n = edges.len() - 1;
        if x < edges[0] || x > edges[n] {
            return None;
        }
        Some(edges.partition_point(|&e| e <= x).saturating_sub(1).min(n - 1))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["v_lo", "v_hi", "omega_lo", "omega_hi", "count", "mean_abs_error", "empty"])?;
        for i in 0..self.v_edges.len() - 1 {
            for j in 0..self.omega_edges.len() - 1 {
                let e = self.mean_abs_error[i][j];
                w.write_record([
                    self.v_edges[i].to_string(),
                    self.v_edges[i + 1].to_string(),
                    self.omega_edges[j].to_string(),
                    self.omega_edges[j + 1].to_string(),
                    self.counts[i][j].to_string(),
                    e.map_or(String::new(), |x| x.to_string()),
                    e.is_none().to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Bin with the largest mean error.
    pub fn max_bin(&self) -> Option<(usize, usize)> {
        let mut best: Option<((usize, usize), f64)> = None;
        for (i, row) in self.mean_abs_error.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                if let Some(e) = e {
                    if best.is_none_or(|(_, b)| *e > b) {
                        best = Some(((i, j), *e));
                    }
                }
            }
        }
        best.map(|(b, _)| b)
    }
}

/// Evenly spaced edges over `[lo, hi]`.
pub fn uniform_edges(lo: f64, hi: f64, bins: usize) -> Result<Vec<f64>> {
    if bins == 0 || !(hi > lo) {
        return Err(Error::InvalidParameter(format!("invalid bin range [{lo}, {hi}] with {bins} bins")));
    }
    Ok((0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect())
}

/// Bins one-step angular-velocity errors by commanded `(v_ref, ω_ref)`.
pub fn run_heatmap(model: &MotionModel, dataset: &TerrainDataset, v_edges: Vec<f64>, omega_edges: Vec<f64>) -> Result<HeatmapGrid> {
    require_velocities(dataset)?;
    for e in [&v_edges, &omega_edges] {
        if e.len() < 2 || e.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("bin edges must be strictly increasing".into()));
        }
    }
    let (nv, nw) = (v_edges.len() - 1, omega_edges.len() - 1);
    let mut sums = vec![vec![0.0; nw]; nv];
    let mut counts = vec![vec![0usize; nw]; nv];
    for w in dataset.records.windows(2) {
        if w[1].t - w[0].t > 1.5 * dataset.dt {
            continue;
        }
        let u = w[0].control();
        let (Some(i), Some(j)) = (HeatmapGrid::bin(&v_edges, u.v_ref), HeatmapGrid::bin(&omega_edges, u.omega_ref)) else {
            continue;
        };
        let pred = model.rollout(&w[0].state(), &[u], dataset.dt)?[1];
        sums[i][j] += (pred.omega - w[1].omega).abs();
        counts[i][j] += 1;
    }
    let mean_abs_error = sums
        .iter()
        .zip(&counts)
        .map(|(s, c)| s.iter().zip(c).map(|(s, &c)| (c > 0).then(|| s / c as f64)).collect())
        .collect();
    Ok(HeatmapGrid {
        v_edges,
        omega_edges,
        mean_abs_error,
        counts,
    })
}

/// Heading at the end of a rollout relative to its start, for diagnostics.
pub fn heading_change(traj: &[State5]) -> f64 {
    traj.windows(2).map(|w| wrap(w[1].theta - w[0].theta)).sum()
}

//! Computations behind the subcommands, usable without touching the file
//! system.

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use skidgp::baselines::{fit_jacobian, FittedJacobian, Variant};
use skidgp::config::RunConfig;
use skidgp::data::{ensure_velocities, SuiteConfig, SynthOutput, TerrainDataset};
use skidgp::dynamics::{DynamicParams, Integrator};
use skidgp::ensemble::{EnsembleConfig, HistoryRecord, TerrainGpBank};
use skidgp::eval::{
    coverage_scenarios, run_coverage, run_heatmap, run_weight_trace, sweep_errors, sweep_errors_ensemble, transitions,
    uniform_edges, CoverageRow, ErrorReport, HeatmapGrid, MotionModel, WeightTrace,
};
use skidgp::gp::{build_residual_dataset, train_gp_pair, GpPair, GpTrainConfig};
use skidgp::identify::{identify_params, IdentRecord, IdentReport};
use skidgp::propagation::{QueryMode, ResidualModel, StepModel};
use skidgp::types::ControlBounds;
use skidgp::{Error, Result};

/// Monte-Carlo query modes reported by coverage runs. Samples sharing the
/// query at the mean test the same model the propagators represent; the
/// per-sample mode also exposes the error of querying at the mean.
pub const COVERAGE_MODES: [QueryMode; 2] = [QueryMode::EnsembleMean, QueryMode::PerSample];

/// Transitions streamed from the first terrain before a switch.
pub const SWITCH_PREFIX: usize = 100;

/// Suite with every terrain seed mixed with the run seed.
pub fn seeded_suite(suite: &SuiteConfig, seed: u64) -> SuiteConfig {
    let mut out = suite.clone();
    out.ident.spec.seed ^= seed;
    for t in &mut out.terrains {
        t.seed ^= seed;
    }
    out
}

pub struct TerrainRun {
    pub label: String,
    pub train: SynthOutput,
    pub test: SynthOutput,
}

pub struct SuiteRun {
    pub suite: SuiteConfig,
    pub ident: SynthOutput,
    pub terrains: Vec<TerrainRun>,
}

pub fn generate_suite(suite: &SuiteConfig) -> Result<SuiteRun> {
    let terrains = suite
        .terrains
        .par_iter()
        .map(|spec| {
            Ok(TerrainRun {
                label: spec.label.clone(),
                train: suite.train_set(spec)?,
                test: suite.test_set(spec)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteRun {
        suite: suite.clone(),
        ident: suite.ident_set()?,
        terrains,
    })
}

pub fn ident_log(dataset: &TerrainDataset) -> Vec<IdentRecord> {
    dataset
        .records
        .iter()
        .map(|r| IdentRecord {
            eta: Vector2::new(r.v, r.omega),
            u: r.control(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentSummary {
    pub dt: f64,
    pub c: [f64; 6],
    pub a: f64,
    pub relative_residual: f64,
    pub condition_number: f64,
    pub rows: usize,
}

impl IdentSummary {
    pub fn new(report: &IdentReport, dt: f64) -> Self {
        Self {
            dt,
            c: report.params.c,
            a: report.params.a,
            relative_residual: report.relative_residual,
            condition_number: report.condition_number,
            rows: report.rows,
        }
    }
}

/// Identifies the lumped parameters, deriving velocities first if needed.
pub fn identify_dataset(dataset: TerrainDataset, config: &RunConfig) -> Result<IdentReport> {
    let ds = ensure_velocities(dataset, config.filter_beta())?;
    identify_params(&ident_log(&ds), ds.dt, config.identify.filter_beta, config.identify.quadrature, 0.0)
}

/// Trains one residual GP pair per dataset, in order.
pub fn train_bank(datasets: &[TerrainDataset], params: &DynamicParams, dt: f64, config: &GpTrainConfig) -> Result<Vec<GpPair>> {
    datasets
        .par_iter()
        .map(|ds| {
            let rd = build_residual_dataset(ds, params, dt, Integrator::Rk4)?;
            train_gp_pair(&ds.label, &rd.samples, config)
        })
        .collect()
}

/// One-step residual prediction accuracy on held-out data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpAccuracy {
    pub terrain: String,
    pub training_points: usize,
    pub test_samples: usize,
    pub rmse_v: f64,
    pub std_v: f64,
    pub ratio_v: f64,
    pub rmse_omega: f64,
    pub std_omega: f64,
    pub ratio_omega: f64,
}

fn rmse_and_std(pred: &[f64], truth: &[f64]) -> (f64, f64) {
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let var = truth.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    (mse.sqrt(), var.sqrt())
}

pub fn gp_accuracy(pair: &GpPair, test: &TerrainDataset, params: &DynamicParams, dt: f64) -> Result<GpAccuracy> {
    let rd = build_residual_dataset(test, params, dt, Integrator::Rk4)?;
    if rd.samples.is_empty() {
        return Err(Error::Dataset(format!("dataset '{}' has no transitions", test.label)));
    }
    let preds = rd.samples.iter().map(|s| pair.predict_mean(&s.z)).collect::<Result<Vec<_>>>()?;
    let pv: Vec<f64> = preds.iter().map(|p| p[0]).collect();
    let pw: Vec<f64> = preds.iter().map(|p| p[1]).collect();
    let tv: Vec<f64> = rd.samples.iter().map(|s| s.g_v).collect();
    let tw: Vec<f64> = rd.samples.iter().map(|s| s.g_omega).collect();
    let (rmse_v, std_v) = rmse_and_std(&pv, &tv);
    let (rmse_omega, std_omega) = rmse_and_std(&pw, &tw);
    Ok(GpAccuracy {
        terrain: test.label.clone(),
        training_points: pair.gp_v.len(),
        test_samples: rd.samples.len(),
        rmse_v,
        std_v,
        ratio_v: rmse_v / std_v,
        rmse_omega,
        std_omega,
        ratio_omega: rmse_omega / std_omega,
    })
}

/// Fitted residual (sum of squared rate errors) of every variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestingRow {
    pub terrain: String,
    pub dataset: String,
    pub idd: f64,
    pub edd2: f64,
    pub edd5: f64,
    pub fl: f64,
    pub holds: bool,
}

pub fn nesting_row(dataset: &TerrainDataset, split: &str, config: &RunConfig) -> Result<NestingRow> {
    let g = &config.baselines.geometry;
    let r = |v| fit_jacobian(v, dataset, g).map(|f| f.residual);
    let (idd, edd2, edd5, fl) = (r(Variant::Idd)?, r(Variant::Edd2)?, r(Variant::Edd5)?, r(Variant::Fl)?);
    let le = |a: f64, b: f64| a <= b * (1.0 + 1e-9) + 1e-12;
    Ok(NestingRow {
        terrain: dataset.label.clone(),
        dataset: split.to_string(),
        idd,
        edd2,
        edd5,
        fl,
        holds: le(fl, edd5) && le(edd5, edd2) && le(edd2, idd),
    })
}

pub fn fit_baselines(dataset: &TerrainDataset, config: &RunConfig) -> Result<Vec<FittedJacobian>> {
    config
        .baselines
        .variants
        .iter()
        .map(|v| fit_jacobian(*v, dataset, &config.baselines.geometry))
        .collect()
}

/// A model named on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Nominal,
    Gp,
    Ensemble,
    Kinematic(Variant),
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nominal" => Ok(ModelKind::Nominal),
            "gp" => Ok(ModelKind::Gp),
            "ensemble" => Ok(ModelKind::Ensemble),
            other => other.parse().map(ModelKind::Kinematic),
        }
    }
}

impl ModelKind {
    pub fn name(&self) -> String {
        match self {
            ModelKind::Nominal => "nominal".into(),
            ModelKind::Gp => "gp".into(),
            ModelKind::Ensemble => "ensemble".into(),
            ModelKind::Kinematic(v) => v.name().into(),
        }
    }
}

/// Weight-convergence metrics of one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub terrain: String,
    pub updates: usize,
    pub steps_to_argmax: Option<usize>,
    pub steps_to_threshold: Option<usize>,
    pub steady_state_weight: Option<f64>,
    pub argmax_accuracy: Option<f64>,
    pub final_weights: Vec<f64>,
}

impl WeightSummary {
    pub fn new(terrain: &str, trace: &WeightTrace) -> Self {
        Self {
            terrain: terrain.to_string(),
            updates: trace.weights.len() - 1,
            steps_to_argmax: trace.steps_to_argmax,
            steps_to_threshold: trace.steps_to_threshold,
            steady_state_weight: trace.steady_state_weight,
            argmax_accuracy: trace.argmax_accuracy,
            final_weights: trace.weights.last().cloned().unwrap_or_default(),
        }
    }
}

/// Updates after a terrain switch until the new terrain has the largest
/// weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchSummary {
    pub from: String,
    pub to: String,
    pub prefix: usize,
    pub steps_to_flip: Option<usize>,
}

fn argmax(w: &[f64]) -> usize {
    let mut b = 0;
    for (i, &x) in w.iter().enumerate() {
        if x > w[b] {
            b = i;
        }
    }
    b
}

pub fn switch_trace(
    bank: &TerrainGpBank,
    first: &[HistoryRecord],
    second: &[HistoryRecord],
    to: usize,
    step: &StepModel,
    config: &EnsembleConfig,
) -> Result<Option<usize>> {
    let prefix = first.len().min(SWITCH_PREFIX);
    let stream: Vec<HistoryRecord> = first[..prefix].iter().chain(second).copied().collect();
    let trace = run_weight_trace(bank, &stream, None, step, config)?;
    Ok((1..=second.len()).find(|&k| argmax(&trace.weights[prefix + k]) == to))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub terrain: String,
    pub mode: QueryMode,
    #[serde(flatten)]
    pub row: CoverageRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub mode: QueryMode,
    pub scenarios: usize,
    pub steps: usize,
    pub n_mc: usize,
    pub min_sigma_point: f64,
    pub mean_sigma_point: f64,
    pub min_linear: f64,
    pub mean_linear: f64,
    /// Scenario-steps with sigma-point coverage below 0.98.
    pub sigma_point_below_098: usize,
}

impl CoverageSummary {
    pub fn new(mode: QueryMode, rows: &[CoverageRecord], scenarios: usize, steps: usize, n_mc: usize) -> Self {
        let rows: Vec<&CoverageRecord> = rows.iter().filter(|r| r.mode == mode).collect();
        let n = rows.len().max(1) as f64;
        Self {
            mode,
            scenarios,
            steps,
            n_mc,
            min_sigma_point: rows.iter().map(|r| r.row.sigma_point).fold(f64::INFINITY, f64::min),
            mean_sigma_point: rows.iter().map(|r| r.row.sigma_point).sum::<f64>() / n,
            min_linear: rows.iter().map(|r| r.row.linear).fold(f64::INFINITY, f64::min),
            mean_linear: rows.iter().map(|r| r.row.linear).sum::<f64>() / n,
            sigma_point_below_098: rows.iter().filter(|r| r.row.sigma_point < 0.98).count(),
        }
    }
}

/// Coverage of one residual model over the configured seeded scenarios.
pub fn coverage_rows(
    terrain: &str,
    mode: QueryMode,
    residual: &ResidualModel,
    step: &StepModel,
    bounds: &ControlBounds,
    config: &RunConfig,
) -> Result<Vec<CoverageRecord>> {
    let c = &config.coverage;
    let scenarios = coverage_scenarios(c.scenarios, c.steps, bounds, config.seed)?;
    let rows = scenarios
        .par_iter()
        .enumerate()
        .map(|(i, s)| run_coverage(i, s, residual, step, &config.sigma, c.n_mc, config.seed.wrapping_add(i as u64), mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(rows
        .into_iter()
        .flatten()
        .map(|row| CoverageRecord {
            terrain: terrain.to_string(),
            mode,
            row,
        })
        .collect())
}

pub fn heatmap_edges(bounds: &ControlBounds, config: &RunConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((
        uniform_edges(-bounds.max_v, bounds.max_v, config.heatmap.v_bins)?,
        uniform_edges(-bounds.max_omega, bounds.max_omega, config.heatmap.omega_bins)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSummary {
    pub terrain: String,
    pub model: String,
    pub grid: HeatmapGrid,
    /// `(i_v, i_ω)` of the largest mean error.
    pub max_bin: Option<(usize, usize)>,
    pub empty_bins: usize,
}

impl HeatmapSummary {
    pub fn new(terrain: &str, model: &str, grid: HeatmapGrid) -> Self {
        Self {
            terrain: terrain.to_string(),
            model: model.to_string(),
            max_bin: grid.max_bin(),
            empty_bins: grid.counts.iter().flatten().filter(|&&c| c == 0).count(),
            grid,
        }
    }
}

/// GP model against the best fitted kinematic baseline on one terrain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingRow {
    pub terrain: String,
    pub gp_angular_velocity_mae: f64,
    pub best_baseline_angular_velocity_mae: f64,
    pub best_baseline_by_velocity: String,
    pub gp_angular_position_pct: Option<f64>,
    pub best_baseline_angular_position_pct: Option<f64>,
    pub best_baseline_by_position: String,
    pub holds: bool,
}

fn ordering_row(terrain: &str, errors: &[ErrorReport]) -> Option<OrderingRow> {
    let on: Vec<&ErrorReport> = errors.iter().filter(|e| e.terrain == terrain).collect();
    let gp = on.iter().find(|e| e.model == "gp")?;
    let kin: Vec<&&ErrorReport> = on
        .iter()
        .filter(|e| Variant::ALL.iter().any(|v| v.name() == e.model))
        .collect();
    let by_vel = kin.iter().min_by(|a, b| a.angular_velocity_mae.total_cmp(&b.angular_velocity_mae))?;
    let by_pos = kin
        .iter()
        .min_by(|a, b| {
            let key = |e: &ErrorReport| e.angular_position_pct.unwrap_or(f64::INFINITY);
            key(a).total_cmp(&key(b))
        })?;
    let holds = gp.angular_velocity_mae < by_vel.angular_velocity_mae
        && match (gp.angular_position_pct, by_pos.angular_position_pct) {
            (Some(g), Some(b)) => g < b,
            _ => false,
        };
    Some(OrderingRow {
        terrain: terrain.to_string(),
        gp_angular_velocity_mae: gp.angular_velocity_mae,
        best_baseline_angular_velocity_mae: by_vel.angular_velocity_mae,
        best_baseline_by_velocity: by_vel.model.clone(),
        gp_angular_position_pct: gp.angular_position_pct,
        best_baseline_angular_position_pct: by_pos.angular_position_pct,
        best_baseline_by_position: by_pos.model.clone(),
        holds,
    })
}

/// Published figures for the external dataset, kept for comparison only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub terrain: String,
    pub model: String,
    pub angular_position_pct: f64,
    pub linear_position_pct: f64,
    pub angular_velocity_mae: f64,
    pub linear_velocity_mae: f64,
}

pub fn reference_targets() -> Vec<ReferenceRow> {
    let rows = [
        ("asphalt", "EDD5", 17.6, 14.2, 0.19, 0.23),
        ("grass", "EDD5", 18.9, 6.2, 0.16, 0.07),
        ("tile", "EDD5", 21.1, 11.6, 0.30, 0.22),
        ("asphalt", "gp", 5.7, 5.8, 0.02, 0.12),
        ("grass", "gp", 5.6, 5.7, 0.03, 0.09),
        ("tile", "gp", 10.9, 5.0, 0.06, 0.13),
    ];
    rows.iter()
        .map(|&(terrain, model, ap, lp, av, lv)| ReferenceRow {
            terrain: terrain.into(),
            model: model.into(),
            angular_position_pct: ap,
            linear_position_pct: lp,
            angular_velocity_mae: av,
            linear_velocity_mae: lv,
        })
        .collect()
}

/// Everything the `report` subcommand measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub version: String,
    pub seed: u64,
    pub horizon_s: f64,
    pub identification: IdentSummary,
    pub gp_accuracy: Vec<GpAccuracy>,
    pub errors: Vec<ErrorReport>,
    pub ordering: Vec<OrderingRow>,
    pub nesting: Vec<NestingRow>,
    pub weights: Vec<WeightSummary>,
    pub switches: Vec<SwitchSummary>,
    /// One summary per Monte-Carlo query mode.
    pub coverage: Vec<CoverageSummary>,
    pub heatmaps: Vec<HeatmapSummary>,
    pub reference_targets: Vec<ReferenceRow>,
}

pub struct FullRun {
    pub report: SuiteReport,
    pub traces: Vec<(String, WeightTrace)>,
    pub coverage: Vec<CoverageRecord>,
    pub bank: TerrainGpBank,
    pub step: StepModel,
}

/// Sweep of one model on one terrain's test set.
fn sweep_model(
    kind: ModelKind,
    terrain: usize,
    test: &TerrainDataset,
    bank: &TerrainGpBank,
    baselines: &[FittedJacobian],
    step: &StepModel,
    config: &RunConfig,
) -> Result<ErrorReport> {
    let h = config.sweep.horizon_s;
    let name = kind.name();
    match kind {
        ModelKind::Nominal => sweep_errors(&MotionModel::Dynamic { step: *step, residual: ResidualModel::Nominal }, &name, test, h),
        ModelKind::Gp => {
            let residual = ResidualModel::Gp(&bank.members()[terrain]);
            sweep_errors(&MotionModel::Dynamic { step: *step, residual }, &name, test, h)
        }
        ModelKind::Ensemble => sweep_errors_ensemble(bank, step, &config.ensemble, &name, test, h),
        ModelKind::Kinematic(v) => {
            let fit = baselines
                .iter()
                .find(|f| f.model.variant == v)
                .ok_or_else(|| Error::InvalidParameter(format!("baseline {v} was not fitted")))?;
            sweep_errors(&MotionModel::Kinematic(&fit.model), &name, test, h)
        }
    }
}

/// Full pipeline on a synthetic suite: generate, identify, train, sweep,
/// trace weights, check coverage and bin errors.
pub fn run_full(config: &RunConfig, suite: &SuiteConfig) -> Result<FullRun> {
    let data = generate_suite(&seeded_suite(suite, config.seed))?;
    let beta = config.filter_beta();

    let ident = identify_dataset(data.ident.dataset.clone(), config)?;
    let params = ident.params;
    let dt = suite.dt;
    let step = StepModel::new(params, dt)?;

    let trains = data
        .terrains
        .iter()
        .map(|t| ensure_velocities(t.train.dataset.clone(), beta))
        .collect::<Result<Vec<_>>>()?;
    let tests = data
        .terrains
        .iter()
        .map(|t| ensure_velocities(t.test.dataset.clone(), beta))
        .collect::<Result<Vec<_>>>()?;

    let gp_config = GpTrainConfig {
        seed: config.gp.seed ^ config.seed,
        ..config.gp
    };
    let bank = TerrainGpBank::new(train_bank(&trains, &params, dt, &gp_config)?)?;
    let gp_accuracy = bank
        .members()
        .iter()
        .zip(&tests)
        .map(|(pair, test)| gp_accuracy(pair, test, &params, dt))
        .collect::<Result<Vec<_>>>()?;

    let baselines = trains.iter().map(|t| fit_baselines(t, config)).collect::<Result<Vec<_>>>()?;
    let mut kinds = vec![ModelKind::Nominal, ModelKind::Gp, ModelKind::Ensemble];
    kinds.extend(config.baselines.variants.iter().map(|v| ModelKind::Kinematic(*v)));
    let jobs: Vec<(usize, ModelKind)> = (0..tests.len()).flat_map(|i| kinds.iter().map(move |k| (i, *k))).collect();
    let errors = jobs
        .par_iter()
        .map(|&(i, kind)| sweep_model(kind, i, &tests[i], &bank, &baselines[i], &step, config))
        .collect::<Result<Vec<_>>>()?;
    let ordering = tests.iter().filter_map(|t| ordering_row(&t.label, &errors)).collect();

    let mut nesting = Vec::new();
    for (train, test) in trains.iter().zip(&tests) {
        nesting.push(nesting_row(train, "train", config)?);
        nesting.push(nesting_row(test, "test", config)?);
    }

    let streams = tests.iter().map(transitions).collect::<Result<Vec<_>>>()?;
    let traces = streams
        .par_iter()
        .enumerate()
        .map(|(i, s)| run_weight_trace(&bank, s, Some(i), &step, &config.ensemble))
        .collect::<Result<Vec<_>>>()?;
    let weights = tests.iter().zip(&traces).map(|(t, tr)| WeightSummary::new(&t.label, tr)).collect();
    let pairs: Vec<(usize, usize)> = (0..tests.len())
        .flat_map(|i| (0..tests.len()).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let switches = pairs
        .par_iter()
        .map(|&(i, j)| {
            Ok(SwitchSummary {
                from: tests[i].label.clone(),
                to: tests[j].label.clone(),
                prefix: streams[i].len().min(SWITCH_PREFIX),
                steps_to_flip: switch_trace(&bank, &streams[i], &streams[j], j, &step, &config.ensemble)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut coverage = Vec::new();
    for mode in COVERAGE_MODES {
        for pair in bank.members() {
            coverage.extend(coverage_rows(&pair.label, mode, &ResidualModel::Gp(pair), &step, &suite.bounds, config)?);
        }
    }
    let coverage_summary = COVERAGE_MODES
        .iter()
        .map(|&m| CoverageSummary::new(m, &coverage, config.coverage.scenarios * bank.len(), config.coverage.steps, config.coverage.n_mc))
        .collect();

    let (ve, we) = heatmap_edges(&suite.bounds, config)?;
    let mut heatmaps = Vec::new();
    for (i, test) in tests.iter().enumerate() {
        let gp = MotionModel::Dynamic {
            step,
            residual: ResidualModel::Gp(&bank.members()[i]),
        };
        heatmaps.push(HeatmapSummary::new(&test.label, "gp", run_heatmap(&gp, test, ve.clone(), we.clone())?));
        if let Some(best) = ordering_for(&errors, &test.label) {
            let model = &baselines[i].iter().find(|f| f.model.variant == best).expect("fitted").model;
            let grid = run_heatmap(&MotionModel::Kinematic(model), test, ve.clone(), we.clone())?;
            heatmaps.push(HeatmapSummary::new(&test.label, best.name(), grid));
        }
    }

    let report = SuiteReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        horizon_s: config.sweep.horizon_s,
        identification: IdentSummary::new(&ident, data.ident.dataset.dt),
        gp_accuracy,
        errors,
        ordering,
        nesting,
        weights,
        switches,
        coverage: coverage_summary,
        heatmaps,
        reference_targets: reference_targets(),
    };
    let traces = tests.iter().map(|t| t.label.clone()).zip(traces).collect();
    Ok(FullRun {
        report,
        traces,
        coverage,
        bank,
        step,
    })
}

/// Kinematic variant with the lowest angular-velocity MAE on a terrain.
fn ordering_for(errors: &[ErrorReport], terrain: &str) -> Option<Variant> {
    errors
        .iter()
        .filter(|e| e.terrain == terrain)
        .filter_map(|e| Variant::ALL.iter().find(|v| v.name() == e.model).map(|v| (*v, e.angular_velocity_mae)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(v, _)| v)
}

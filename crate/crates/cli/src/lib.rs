//! Benchmark harness: synthetic suites, model training and the evaluation
//! protocol behind the `skidgp` binary.
//!
//! Exit codes are 0 on success, 1 for invalid input or usage and 2 when the
//! numerics fail (factorizations, solvers, unexciting data).

pub mod output;
pub mod pipeline;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use skidgp::baselines::{JacobianFile, JacobianModel};
use skidgp::config::{ParamsFile, RunConfig};
use skidgp::data::{ensure_velocities, load_dataset, save_dataset, ResidualTruth, SuiteConfig, TerrainDataset};
use skidgp::dynamics::DynamicParams;
use skidgp::ensemble::TerrainGpBank;
use skidgp::eval::{run_heatmap, run_weight_trace, transitions, ErrorReport, MotionModel};
use skidgp::gp::{GpPair, GpPairFile, GpTrainConfig};
use skidgp::propagation::{ResidualModel, StepModel};
use skidgp::{Error, Result};

use output::RunDir;
use pipeline::{ModelKind, SwitchSummary};

#[derive(Debug, Parser)]
#[command(name = "skidgp", version, about = "Probabilistic motion models for skid-steer robots")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (TOML); defaults apply when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory for outputs and the manifest.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

/// Where trained models are read from.
#[derive(Debug, Clone, Args)]
pub struct ModelPaths {
    /// Identified parameters (params.json).
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// GP pair files.
    #[arg(long, num_args = 1..)]
    pub gp: Vec<PathBuf>,
    /// Kinematic baseline files.
    #[arg(long, num_args = 1..)]
    pub baseline: Vec<PathBuf>,
    /// Directory holding params.json, gp/ and baselines/ from earlier runs;
    /// the output directory when absent.
    #[arg(long)]
    pub models: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic terrain suite.
    Synth {
        /// `default` or a suite TOML file.
        #[arg(long)]
        suite: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Identify the lumped dynamic parameters from a calibration log.
    Identify {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train one residual GP pair per dataset.
    TrainGp {
        #[arg(long, num_args = 1.., required = true)]
        dataset: Vec<PathBuf>,
        #[command(flatten)]
        models: ModelPaths,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the kinematic Jacobian baselines.
    TrainBaseline {
        #[arg(long, num_args = 1.., required = true)]
        dataset: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Moving-horizon error sweep of one model.
    Sweep {
        /// nominal, gp, ensemble, idd, edd2, edd5 or fl.
        #[arg(long)]
        model: String,
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        models: ModelPaths,
        #[command(flatten)]
        common: Common,
    },
    /// Ensemble weight trace over one or more concatenated datasets.
    Weights {
        #[arg(long, num_args = 1.., required = true)]
        dataset: Vec<PathBuf>,
        #[command(flatten)]
        models: ModelPaths,
        #[command(flatten)]
        common: Common,
    },
    /// Monte-Carlo coverage of the propagators for every GP.
    Coverage {
        #[command(flatten)]
        models: ModelPaths,
        #[command(flatten)]
        common: Common,
    },
    /// One-step angular-velocity error binned by command.
    Heatmap {
        #[arg(long)]
        model: String,
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        models: ModelPaths,
        #[command(flatten)]
        common: Common,
    },
    /// Full pipeline on a synthetic suite.
    Report {
        #[arg(long)]
        suite: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Ctx {
    config: RunConfig,
    out: PathBuf,
    config_path: Option<PathBuf>,
}

impl Ctx {
    fn new(common: Common) -> CliResult<Self> {
        let mut config = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = common.seed {
            config.seed = seed;
        }
        let Some(out) = common.out else {
            return usage("--out <dir> is required");
        };
        Ok(Self {
            config,
            out,
            config_path: common.config,
        })
    }

    fn run_dir(&self, subcommand: &str) -> CliResult<RunDir> {
        let json = serde_json::to_string(&self.config)?;
        let mut dir = RunDir::create(&self.out, subcommand, self.config.seed, &json)?;
        if let Some(p) = &self.config_path {
            dir.add_input(p)?;
        }
        Ok(dir)
    }

    fn dataset(&self, path: &Path, dir: &mut RunDir) -> CliResult<TerrainDataset> {
        dir.add_input(path)?;
        let ds = load_dataset(path, &self.config.columns)?;
        Ok(ensure_velocities(ds, self.config.filter_beta())?)
    }

    fn suite(&self, name: Option<&str>, dir: &mut RunDir) -> CliResult<SuiteConfig> {
        let name = name.map(str::to_string).or_else(|| self.config.suite.path.clone());
        match name.as_deref() {
            None | Some("default") => Ok(SuiteConfig::default_suite()),
            Some(p) => {
                let path = Path::new(p);
                dir.add_input(path)?;
                Ok(SuiteConfig::from_toml_str(&fs::read_to_string(path)?)?)
            }
        }
    }

    fn models_dir(&self, m: &ModelPaths) -> PathBuf {
        m.models.clone().unwrap_or_else(|| self.out.clone())
    }

    fn params(&self, m: &ModelPaths, dir: &mut RunDir) -> CliResult<DynamicParams> {
        let path = m.params.clone().unwrap_or_else(|| self.models_dir(m).join("params.json"));
        if !path.exists() {
            return usage(format!("parameter file {} not found; pass --params", path.display()));
        }
        dir.add_input(&path)?;
        Ok(ParamsFile::load(&path)?.params()?)
    }

    fn gp_files(&self, m: &ModelPaths) -> CliResult<Vec<PathBuf>> {
        if !m.gp.is_empty() {
            return Ok(m.gp.clone());
        }
        json_files(&self.models_dir(m).join("gp"))
    }

    fn bank(&self, m: &ModelPaths, dir: &mut RunDir) -> CliResult<TerrainGpBank> {
        let files = self.gp_files(m)?;
        if files.is_empty() {
            return usage("no GP model files; pass --gp or run train-gp first");
        }
        let mut members = Vec::new();
        for f in &files {
            dir.add_input(f)?;
            let file: GpPairFile = serde_json::from_str(&fs::read_to_string(f)?)?;
            members.push(GpPair::from_file(&file)?);
        }
        Ok(TerrainGpBank::new(members)?)
    }

    fn baselines(&self, m: &ModelPaths, dir: &mut RunDir) -> CliResult<Vec<(String, JacobianModel)>> {
        let files = if m.baseline.is_empty() {
            json_files(&self.models_dir(m).join("baselines"))?
        } else {
            m.baseline.clone()
        };
        let mut out = Vec::new();
        for f in &files {
            dir.add_input(f)?;
            let file: JacobianFile = serde_json::from_str(&fs::read_to_string(f)?)?;
            let stem = f.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
            out.push((stem, JacobianModel::from_file(&file)?));
        }
        Ok(out)
    }
}

fn json_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    Ok(files)
}

fn residuals_csv(residuals: &[ResidualTruth], dataset: &TerrainDataset) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "t", "g_v", "g_omega"])?;
    for r in residuals {
        w.write_record([r.k.to_string(), dataset.records[r.k].t.to_string(), r.g_v.to_string(), r.g_omega.to_string()])?;
    }
    w.into_inner().map_err(|e| std::io::Error::other(e.to_string()).into())
}

fn dataset_bytes(dataset: &TerrainDataset) -> Result<Vec<u8>> {
    // save_dataset writes to a path; round-trip through a scratch file keeps
    // one CSV format.
    let tmp = std::env::temp_dir().join(format!("skidgp-{}-{}.csv", std::process::id(), dataset.label));
    save_dataset(&tmp, dataset)?;
    let bytes = fs::read(&tmp)?;
    let _ = fs::remove_file(&tmp);
    Ok(bytes)
}

#[derive(Serialize)]
struct SynthEntry {
    terrain: String,
    split: String,
    records: usize,
    residual_std_v: f64,
    residual_std_omega: f64,
}

fn std_of(x: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = x.clone().count().max(1) as f64;
    let mean = x.clone().sum::<f64>() / n;
    (x.map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn pick_gp<'a>(bank: &'a TerrainGpBank, label: &str) -> CliResult<&'a GpPair> {
    if let Some(i) = bank.index_of(label) {
        return Ok(&bank.members()[i]);
    }
    match bank.members() {
        [only] => Ok(only),
        _ => usage(format!("no GP for terrain '{label}' among {:?}", bank.labels())),
    }
}

fn pick_baseline<'a>(
    baselines: &'a [(String, JacobianModel)],
    kind: ModelKind,
    label: &str,
) -> CliResult<&'a JacobianModel> {
    let ModelKind::Kinematic(v) = kind else {
        unreachable!("only kinematic kinds have baseline files")
    };
    let matching: Vec<&(String, JacobianModel)> = baselines.iter().filter(|(_, m)| m.variant == v).collect();
    let wanted = format!("{label}_{}", v.name().to_ascii_lowercase());
    if let Some((_, m)) = matching.iter().find(|(stem, _)| *stem == wanted) {
        return Ok(m);
    }
    match matching.as_slice() {
        [(_, m)] => Ok(m),
        [] => usage(format!("no {v} baseline file; pass --baseline or run train-baseline first")),
        _ => usage(format!("several {v} baselines and none named {wanted}.json")),
    }
}

fn parse_model(s: &str) -> CliResult<ModelKind> {
    s.parse().map_err(|_| CliError::Usage(format!("unknown model '{s}'")))
}

fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Synth { suite, common } => {
            let ctx = Ctx::new(common)?;
            let mut dir = ctx.run_dir("synth")?;
            let suite = ctx.suite(suite.as_deref(), &mut dir)?;
            let data = pipeline::generate_suite(&pipeline::seeded_suite(&suite, ctx.config.seed))?;
            let mut entries = Vec::new();
            let mut emit = |dir: &mut RunDir, label: &str, split: &str, out: &skidgp::data::SynthOutput| -> CliResult<()> {
                dir.write(&format!("{label}/{split}.csv"), &dataset_bytes(&out.dataset)?)?;
                dir.write(&format!("{label}/{split}_residuals.csv"), &residuals_csv(&out.residuals, &out.dataset)?)?;
                entries.push(SynthEntry {
                    terrain: label.to_string(),
                    split: split.to_string(),
                    records: out.dataset.len(),
                    residual_std_v: std_of(out.residuals.iter().map(|r| r.g_v)),
                    residual_std_omega: std_of(out.residuals.iter().map(|r| r.g_omega)),
                });
                Ok(())
            };
            emit(&mut dir, "ident", "ident", &data.ident)?;
            for t in &data.terrains {
                emit(&mut dir, &t.label, "train", &t.train)?;
                emit(&mut dir, &t.label, "test", &t.test)?;
            }
            dir.write_json("report.json", &entries)?;
            dir.finish()?;
        }
        Command::Identify { dataset, common } => {
            let ctx = Ctx::new(common)?;
            let mut dir = ctx.run_dir("identify")?;
            let ds = ctx.dataset(&dataset, &mut dir)?;
            let dt = ds.dt;
            let report = pipeline::identify_dataset(ds, &ctx.config)?;
            dir.write_json("params.json", &ParamsFile::new(&report.params, dt, ctx.config.filter_beta()))?;
            dir.write_json("report.json", &pipeline::IdentSummary::new(&report, dt))?;
            dir.finish()?;
        }
        Command::TrainGp { dataset, models, common } => {
            let ctx = Ctx::new(common)?;
            let mut dir = ctx.run_dir("train-gp")?;
            let params = ctx.params(&models, &mut dir)?;
            let sets = dataset.iter().map(|p| ctx.dataset(p, &mut dir)).collect::<CliResult<Vec<_>>>()?;
            let dt = sets[0].dt;
            if sets.iter().any(|s| (s.dt - dt).abs() > 1e-9 * dt) {
                return usage("training datasets must share one sampling period");
            }
            let gp = GpTrainConfig {
                seed: ctx.config.gp.seed ^ ctx.config.seed,
                ..ctx.config.gp
            };
            let pairs = pipeline::train_bank(&sets, &params, dt, &gp)?;
            #[derive(Serialize)]
            struct Entry {
                terrain: String,
                training_points: usize,
                hyper_v: Vec<f64>,
                hyper_omega: Vec<f64>,
            }
            let mut entries = Vec::new();
            for p in &pairs {
                dir.write_json(&format!("gp/{}.json", p.label), &p.to_file())?;
                entries.push(Entry {
                    terrain: p.label.clone(),
                    training_points: p.gp_v.len(),
                    hyper_v: p.gp_v.hyper().to_vector().iter().copied().collect(),
                    hyper_omega: p.gp_omega.hyper().to_vector().iter().copied().collect(),
                });
            }
            dir.write_json("report.json", &entries)?;
            dir.finish()?;
        }
        Command::TrainBaseline { dataset, common } => {
            let ctx = Ctx::new(common)?;
            let mut dir = ctx.run_dir("train-baseline")?;
            let mut rows = Vec::new();
            for p in &dataset {
                let ds = ctx.dataset(p, &mut dir)?;
                for fit in pipeline::fit_baselines(&ds, &ctx.config)? {
                    let name = format!("baselines/{}_{}.json", ds.label, fit.model.variant.name().to_ascii_lowercase());
                    dir.write_json(&name, &fit.model.to_file())?;
                }
                rows.push(pipeline::nesting_row(&ds, "train", &ctx.config)?);
            }
            dir.write_json("report.json", &rows)?;
            dir.finish()?;
        }
        Command::Sweep { model, dataset, models, common } => {
            let ctx = Ctx::new(common)?;
            let kind = parse_model(&model)?;
            let mut dir = ctx.run_dir("sweep")?;
            let ds = ctx.dataset(&dataset, &mut dir)?;
            let report = sweep_one(&ctx, kind, &ds, &models, &mut dir)?;
            let errors = [report];
            dir.write("table1.csv", &output::table1_csv(&errors)?)?;
            dir.write("table2.csv", &output::table2_csv(&errors)?)?;
            dir.write_json("report.json", &errors[0])?;
            dir.finish()?;
        }
        Command::Weights { dataset, models, common } => {
            let ctx = Ctx::new(common)?;
            let mut dir = ctx.run_dir("weights")?;
            let params = ctx.params(&models, &mut dir)?;
            let bank = ctx.bank(&models, &mut dir)?;
            let sets = dataset.iter().map(|p| ctx.dataset(p, &mut dir)).collect::<CliResult<Vec<_>>>()?;
            let step = StepModel::new(params, sets[0].dt)?;
            let streams = sets.iter().map(transitions).collect::<Result<Vec<_>>>()?;
            let stream: Vec<_> = streams.iter().flatten().copied().collect();
            let trace = run_weight_trace(&bank, &stream, bank.index_of(&sets[0].label), &step, &ctx.config.ensemble)?;
            #[derive(Serialize)]
            struct Report {
                summary: pipeline::WeightSummary,
                switches: Vec<SwitchSummary>,
            }
            // Each dataset boundary is a terrain switch.
            let mut switches = Vec::new();
            let mut offset = streams[0].len();
            for (ds, s) in sets.iter().zip(&streams).skip(1) {
                let flip = bank.index_of(&ds.label).and_then(|j| {
                    (1..=s.len()).find(|&k| {
                        let w = &trace.weights[offset + k];
                        w.iter().enumerate().all(|(i, &x)| i == j || x < w[j])
                    })
                });
                switches.push(SwitchSummary {
                    from: sets[0].label.clone(),
                    to: ds.label.clone(),
                    prefix: offset,
                    steps_to_flip: flip,
                });
                offset += s.len();
            }
            let label = sets[0].label.clone();
            dir.write("weights.csv", &output::weights_csv(&[(label.clone(), trace.clone())])?)?;
            dir.write_json(
                "report.json",
                &Report {
                    summary: pipeline::WeightSummary::new(&label, &trace),
                    switches,
                },
            )?;
            dir.finish()?;
        }
        Command::Coverage { models, common } => {
            let ctx = Ctx::new(common)?;
            let mut dir = ctx.run_dir("coverage")?;
            let params = ctx.params(&models, &mut dir)?;
            let bank = ctx.bank(&models, &mut dir)?;
            let c = &ctx.config.coverage;
            if c.steps == 0 {
                return usage("coverage.steps must be at least 1");
            }
            let step = StepModel::new(params, ctx.config.sweep.horizon_s / c.steps as f64)?;
            let bounds = SuiteConfig::default_suite().bounds;
            let mut rows = Vec::new();
            for mode in pipeline::COVERAGE_MODES {
                let part = bank
                    .members()
                    .par_iter()
                    .map(|pair| pipeline::coverage_rows(&pair.label, mode, &ResidualModel::Gp(pair), &step, &bounds, &ctx.config))
                    .collect::<Result<Vec<_>>>()?;
                rows.extend(part.into_iter().flatten());
            }
            dir.write("coverage.csv", &output::coverage_csv(&rows)?)?;
            let summary: Vec<_> = pipeline::COVERAGE_MODES
                .iter()
                .map(|&m| pipeline::CoverageSummary::new(m, &rows, c.scenarios * bank.len(), c.steps, c.n_mc))
                .collect();
            dir.write_json("report.json", &summary)?;
            dir.finish()?;
        }
        Command::Heatmap { model, dataset, models, common } => {
            let ctx = Ctx::new(common)?;
            let kind = parse_model(&model)?;
            let mut dir = ctx.run_dir("heatmap")?;
            let ds = ctx.dataset(&dataset, &mut dir)?;
            let bounds = SuiteConfig::default_suite().bounds;
            let (ve, we) = pipeline::heatmap_edges(&bounds, &ctx.config)?;
            let grid = match kind {
                ModelKind::Kinematic(_) => {
                    let baselines = ctx.baselines(&models, &mut dir)?;
                    let m = pick_baseline(&baselines, kind, &ds.label)?;
                    run_heatmap(&MotionModel::Kinematic(m), &ds, ve, we)?
                }
                ModelKind::Nominal | ModelKind::Gp => {
                    let step = StepModel::new(ctx.params(&models, &mut dir)?, ds.dt)?;
                    let bank;
                    let residual = if kind == ModelKind::Gp {
                        bank = ctx.bank(&models, &mut dir)?;
                        ResidualModel::Gp(pick_gp(&bank, &ds.label)?)
                    } else {
                        ResidualModel::Nominal
                    };
                    run_heatmap(&MotionModel::Dynamic { step, residual }, &ds, ve, we)?
                }
                ModelKind::Ensemble => return usage("heatmap supports nominal, gp and kinematic models"),
            };
            let summary = pipeline::HeatmapSummary::new(&ds.label, &kind.name(), grid);
            dir.write("heatmap.csv", &output::heatmap_csv(std::slice::from_ref(&summary))?)?;
            dir.write_json("report.json", &summary)?;
            dir.finish()?;
        }
        Command::Report { suite, common } => {
            let ctx = Ctx::new(common)?;
            let mut dir = ctx.run_dir("report")?;
            let suite = ctx.suite(suite.as_deref(), &mut dir)?;
            let run = pipeline::run_full(&ctx.config, &suite)?;
            dir.write("table1.csv", &output::table1_csv(&run.report.errors)?)?;
            dir.write("table2.csv", &output::table2_csv(&run.report.errors)?)?;
            dir.write("weights.csv", &output::weights_csv(&run.traces)?)?;
            dir.write("coverage.csv", &output::coverage_csv(&run.coverage)?)?;
            dir.write("heatmap.csv", &output::heatmap_csv(&run.report.heatmaps)?)?;
            dir.write_json("report.json", &run.report)?;
            dir.finish()?;
        }
    }
    Ok(())
}

fn sweep_one(ctx: &Ctx, kind: ModelKind, ds: &TerrainDataset, models: &ModelPaths, dir: &mut RunDir) -> CliResult<ErrorReport> {
    let h = ctx.config.sweep.horizon_s;
    let name = kind.name();
    let report = match kind {
        ModelKind::Kinematic(_) => {
            let baselines = ctx.baselines(models, dir)?;
            let m = pick_baseline(&baselines, kind, &ds.label)?;
            skidgp::eval::sweep_errors(&MotionModel::Kinematic(m), &name, ds, h)?
        }
        ModelKind::Nominal => {
            let step = StepModel::new(ctx.params(models, dir)?, ds.dt)?;
            let m = MotionModel::Dynamic {
                step,
                residual: ResidualModel::Nominal,
            };
            skidgp::eval::sweep_errors(&m, &name, ds, h)?
        }
        ModelKind::Gp => {
            let step = StepModel::new(ctx.params(models, dir)?, ds.dt)?;
            let bank = ctx.bank(models, dir)?;
            let m = MotionModel::Dynamic {
                step,
                residual: ResidualModel::Gp(pick_gp(&bank, &ds.label)?),
            };
            skidgp::eval::sweep_errors(&m, &name, ds, h)?
        }
        ModelKind::Ensemble => {
            let step = StepModel::new(ctx.params(models, dir)?, ds.dt)?;
            let bank = ctx.bank(models, dir)?;
            skidgp::eval::sweep_errors_ensemble(&bank, &step, &ctx.config.ensemble, &name, ds, h)?
        }
    };
    Ok(report)
}

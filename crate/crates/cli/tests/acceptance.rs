//! Acceptance criteria 1 to 9. Each test prints one `criterion N: PASS|FAIL`
//! line straight to stdout so it shows up under captured output too.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use skidgp::config::RunConfig;
use skidgp::data::{command_script_library, synth_generate, DisturbanceModel, ScriptKind, SuiteConfig, SyntheticTerrainSpec};
use skidgp::dynamics::DynamicParams;
use skidgp::ensemble::{solve_weights, EnsembleWeights, SolverOptions, WeightProblem};
use skidgp::eval::coverage_scenarios;
use skidgp::gp::{negative_log_marginal_likelihood, GpHyperparams, GpModel};
use skidgp::identify::{identify_params, IdentRecord, Quadrature};
use skidgp::propagation::{
    monte_carlo_rollout, propagate_horizon, sample_moments, sigma_weights, QueryMode, ResidualModel, SigmaConfig,
};
use skidgp::types::ControlBounds;
use skidgp_cli::pipeline::{self, FullRun};

fn verdict(n: usize, pass: bool, detail: &str) {
    let line = format!("criterion {n}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {n} failed: {detail}");
}

fn full_run() -> &'static FullRun {
    static RUN: OnceLock<FullRun> = OnceLock::new();
    RUN.get_or_init(|| pipeline::run_full(&RunConfig::default(), &SuiteConfig::default_suite()).expect("full run"))
}

// Criterion 1

const C_TRUE: [f64; 6] = [5.0, 1.0, 0.2, 4.0, 0.5, 3.0];
const IDENT_DT: f64 = 0.1;

fn ident_log(noise: f64, seed: u64) -> Vec<IdentRecord> {
    let spec = SyntheticTerrainSpec {
        label: "ident".into(),
        params: DynamicParams::new(C_TRUE, 0.0).unwrap(),
        disturbance: DisturbanceModel::default(),
        noise_v: 0.0,
        noise_omega: 0.0,
        seed,
    };
    let bounds = ControlBounds {
        max_v: 6.0,
        max_omega: 6.0,
    };
    let commands = command_script_library(ScriptKind::PseudoRandom, 500.0 * IDENT_DT, IDENT_DT, seed, &bounds).unwrap();
    let out = synth_generate(&spec, &commands, IDENT_DT).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).unwrap();
    out.dataset
        .records
        .iter()
        .map(|r| {
            let (dv, dw) = if noise > 0.0 {
                (normal.sample(&mut rng), normal.sample(&mut rng))
            } else {
                (0.0, 0.0)
            };
            IdentRecord {
                eta: Vector2::new(r.v + dv, r.omega + dw),
                u: r.control(),
            }
        })
        .collect()
}

fn worst_rel(c: &[f64; 6]) -> f64 {
    c.iter().zip(C_TRUE).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max)
}

#[test]
fn criterion_1_parameter_identification() {
    let start = Instant::now();
    let clean = ident_log(0.0, 21);
    let report = identify_params(&clean, IDENT_DT, 1.0, Quadrature::Trapezoid, 0.0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let clean_err = worst_rel(&report.params.c);
    let noisy_err = [22, 23, 24]
        .iter()
        .map(|&s| {
            let log = ident_log(0.01, s);
            worst_rel(&identify_params(&log, IDENT_DT, 0.2, Quadrature::Trapezoid, 0.0).unwrap().params.c)
        })
        .fold(0.0, f64::max);
    verdict(
        1,
        clean.len() == 500 && clean_err < 0.01 && noisy_err < 0.10 && secs < 5.0,
        &format!("noiseless max rel err {clean_err:.2e}, noisy {noisy_err:.2e}, {secs:.2} s"),
    );
}

// Criterion 2

fn random_problem(rng: &mut ChaCha8Rng, p: usize, d: usize) -> (DMatrix<f64>, DVector<f64>, GpHyperparams) {
    let x = DMatrix::<f64>::from_fn(p, d, |_, _| rng.gen_range(-2.0..2.0));
    let y = DVector::from_fn(p, |i, _| (1.3 * x[(i, 0)]).cos() - 0.4 * x[(i, d - 1)] + rng.gen_range(-0.1..0.1));
    let ls: Vec<f64> = (0..d).map(|_| rng.gen_range(0.3..3.0)).collect();
    let hyper = GpHyperparams::new(&ls, rng.gen_range(0.2..3.0), rng.gen_range(1e-3..0.3)).unwrap();
    (x, y, hyper)
}

#[test]
fn criterion_2_gp_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let h = 1e-5;
    let mut worst_grad = 0.0f64;
    for _ in 0..10 {
        let (x, y, hyper) = random_problem(&mut rng, 20, 4);
        let (_, grad) = negative_log_marginal_likelihood(&x, &y, &hyper).unwrap();
        let theta = hyper.to_vector();
        let floor = 1e-3 * grad.amax().max(1e-8);
        for i in 0..theta.len() {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let fp = negative_log_marginal_likelihood(&x, &y, &GpHyperparams::from_vector(&tp)).unwrap().0;
            let fm = negative_log_marginal_likelihood(&x, &y, &GpHyperparams::from_vector(&tm)).unwrap().0;
            let fd = (fp - fm) / (2.0 * h);
            worst_grad = worst_grad.max((grad[i] - fd).abs() / fd.abs().max(floor));
        }
    }

    let (x, y, _) = random_problem(&mut rng, 20, 4);
    let gp = GpModel::fit(&x, &y, &GpHyperparams::new(&[1.5; 4], 1.0, 1e-8).unwrap()).unwrap();
    let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
    for i in 0..x.nrows() {
        let z: Vec<f64> = x.row(i).iter().copied().collect();
        let pred = gp.predict(&z).unwrap();
        worst_mean = worst_mean.max((pred.mean - y[i]).abs());
        worst_var = worst_var.max(pred.variance);
    }
    verdict(
        2,
        worst_grad < 1e-4 && worst_mean < 1e-4 && worst_var < 1e-6,
        &format!("gradient rel err {worst_grad:.2e}, interpolation err {worst_mean:.2e}, variance {worst_var:.2e}"),
    );
}

// Criterion 3

#[test]
fn criterion_3_residual_learning() {
    let run = full_run();
    let worst = run
        .report
        .gp_accuracy
        .iter()
        .map(|g| g.ratio_v.max(g.ratio_omega))
        .fold(0.0, f64::max);
    let points_ok = run.report.gp_accuracy.iter().all(|g| g.training_points == 100);

    // Wall time of one terrain's training, measured on its own.
    let config = RunConfig::default();
    let suite = pipeline::seeded_suite(&SuiteConfig::default_suite(), config.seed);
    let data = pipeline::generate_suite(&suite).unwrap();
    let params = pipeline::identify_dataset(data.ident.dataset.clone(), &config).unwrap().params;
    let mut slowest = 0.0f64;
    for t in &data.terrains {
        let train = skidgp::data::ensure_velocities(t.train.dataset.clone(), config.filter_beta()).unwrap();
        let start = Instant::now();
        pipeline::train_bank(std::slice::from_ref(&train), &params, suite.dt, &config.gp).unwrap();
        slowest = slowest.max(start.elapsed().as_secs_f64());
    }
    let ratios: Vec<String> = run
        .report
        .gp_accuracy
        .iter()
        .map(|g| format!("{} {:.3}/{:.3}", g.terrain, g.ratio_v, g.ratio_omega))
        .collect();
    verdict(
        3,
        worst <= 0.25 && points_ok && slowest < 60.0,
        &format!("rmse/std (v/omega) {}, slowest training {slowest:.1} s", ratios.join(", ")),
    );
}

// Criterion 4

fn grid_min(p: &WeightProblem, prev: &DVector<f64>, alpha: f64, h: f64) -> f64 {
    let n = (1.0 / h).round() as usize;
    let obj = |w: &[f64]| p.objective(&DVector::from_column_slice(w), prev, alpha);
    match p.members() {
        1 => obj(&[1.0]),
        2 => (0..=n).map(|i| i as f64 / n as f64).map(|a| obj(&[a, 1.0 - a])).fold(f64::INFINITY, f64::min),
        3 => {
            let mut best = f64::INFINITY;
            for i in 0..=n {
                for j in 0..=n - i {
                    let a = i as f64 / n as f64;
                    let b = j as f64 / n as f64;
                    best = best.min(obj(&[a, b, (1.0 - a - b).max(0.0)]));
                }
            }
            best
        }
        _ => unreachable!(),
    }
}

fn random_instance(rng: &mut ChaCha8Rng) -> (WeightProblem, EnsembleWeights, f64) {
    let m = rng.gen_range(1..=3);
    let k = rng.gen_range(1..=10);
    let scale = 10f64.powf(rng.gen_range(-2.0..1.0));
    let fv = DMatrix::from_fn(k, m, |_, _| rng.gen_range(-1.0..1.0) * scale);
    let fw = DMatrix::from_fn(k, m, |_, _| rng.gen_range(-1.0..1.0) * scale);
    let yv = DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0) * scale);
    let yw = DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0) * scale);
    let raw: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0f64) + 1e-3).collect();
    let s: f64 = raw.iter().sum();
    let prev = EnsembleWeights::new(DVector::from_iterator(m, raw.iter().map(|x| x / s)), 0).unwrap();
    let alpha = if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..0.5) };
    (WeightProblem::new(fv, fw, yv, yw).unwrap(), prev, alpha)
}

#[test]
fn criterion_4_ensemble_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut worst_gap, mut worst_constraint) = (f64::NEG_INFINITY, 0.0f64);
    for _ in 0..100 {
        let (p, prev, alpha) = random_instance(&mut rng);
        let w = solve_weights(&p, &prev, alpha, &SolverOptions::default()).unwrap();
        let x = w.as_vector();
        let below = x.iter().map(|&v| (-v).max(0.0)).fold(0.0, f64::max);
        worst_constraint = worst_constraint.max(below).max((x.sum() - 1.0).abs());
        let gap = p.objective(x, prev.as_vector(), alpha) - grid_min(&p, prev.as_vector(), alpha, 1e-3);
        worst_gap = worst_gap.max(gap);
    }
    let solver_ok = worst_gap <= 1e-6 && worst_constraint <= 1e-8;

    let run = full_run();
    let id_ok = run
        .report
        .weights
        .iter()
        .all(|w| w.steps_to_argmax.is_some_and(|k| k <= 10) && w.steps_to_threshold.is_some_and(|k| k <= 20));
    let flip_ok = run.report.switches.iter().all(|s| s.steps_to_flip.is_some_and(|k| k <= 20));
    let ids: Vec<String> = run
        .report
        .weights
        .iter()
        .map(|w| format!("{} {:?}/{:?}", w.terrain, w.steps_to_argmax, w.steps_to_threshold))
        .collect();
    let flips: Vec<Option<usize>> = run.report.switches.iter().map(|s| s.steps_to_flip).collect();
    verdict(
        4,
        solver_ok && id_ok && flip_ok,
        &format!(
            "objective gap {worst_gap:.1e}, constraint {worst_constraint:.1e}, argmax/0.8 steps {}, flips {flips:?}",
            ids.join(", ")
        ),
    );
}

// Criterion 5

#[test]
fn criterion_5_sigma_point_fidelity() {
    let run = full_run();
    let suite = SuiteConfig::default_suite();
    let steps = 10;
    let step = run.step;
    let scenarios = coverage_scenarios(10, steps, &suite.bounds, 505).unwrap();
    let (mut worst_mean, mut worst_cov) = (0.0f64, 0.0f64);
    for (i, sc) in scenarios.iter().enumerate() {
        let residual = ResidualModel::Gp(&run.bank.members()[i % run.bank.len()]);
        let sp = propagate_horizon(&sc.belief0, &sc.controls, &residual, &step, &SigmaConfig::default()).unwrap();
        let mc = monte_carlo_rollout(&sc.belief0, &sc.controls, &residual, &step, 100_000, 500 + i as u64, QueryMode::EnsembleMean)
            .unwrap();
        for k in 1..=steps {
            let (mean, cov) = sample_moments(&mc.at_step(k)).unwrap();
            let b = &sp.beliefs[k];
            for d in 0..5 {
                let sd = cov[(d, d)].sqrt();
                if sd > 1e-9 {
                    worst_mean = worst_mean.max((b.mean()[d] - mean[d]).abs() / sd);
                }
            }
            worst_cov = worst_cov.max((b.cov() - cov).norm() / cov.norm());
        }
    }
    let worst_sum = [0.5, 1.0, 2.0]
        .iter()
        .map(|&lambda| (sigma_weights(&SigmaConfig { lambda }).unwrap().iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    verdict(
        5,
        worst_mean <= 0.05 && worst_cov <= 0.05 && worst_sum <= 1e-15,
        &format!("mean gap {worst_mean:.3} sd, covariance rel Frobenius {worst_cov:.3}, weight sum err {worst_sum:.1e}"),
    );
}

// Criterion 6

#[test]
fn criterion_6_coverage() {
    let run = full_run();
    let summary = |mode| run.report.coverage.iter().find(|c| c.mode == mode).expect("coverage mode");
    let em = summary(QueryMode::EnsembleMean);
    let ps = summary(QueryMode::PerSample);
    verdict(
        6,
        em.min_sigma_point >= 0.98,
        &format!(
            "min 3-sigma coverage {:.3} (mean {:.4}, {} of {} scenario-steps below 0.98, n_mc {}); per-sample query min {:.3}",
            em.min_sigma_point,
            em.mean_sigma_point,
            em.sigma_point_below_098,
            em.scenarios * em.steps,
            em.n_mc,
            ps.min_sigma_point
        ),
    );
}

// Criterion 7

#[test]
fn criterion_7_benchmark_ordering() {
    let run = full_run();
    let rows: Vec<String> = run
        .report
        .ordering
        .iter()
        .map(|o| {
            format!(
                "{} mae {:.3} vs {} {:.3}, pos {:.1}% vs {} {:.1}%",
                o.terrain,
                o.gp_angular_velocity_mae,
                o.best_baseline_by_velocity,
                o.best_baseline_angular_velocity_mae,
                o.gp_angular_position_pct.unwrap_or(f64::NAN),
                o.best_baseline_by_position,
                o.best_baseline_angular_position_pct.unwrap_or(f64::NAN)
            )
        })
        .collect();
    let pass = run.report.ordering.len() == 3 && run.report.ordering.iter().all(|o| o.holds);
    verdict(7, pass, &rows.join("; "));
}

// Criterion 8

fn skidgp(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_skidgp")).args(args).output().expect("spawn skidgp")
}

fn run_ok(args: &[String]) {
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = skidgp(&args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// Every CLI stage on a fresh workspace.
fn pipeline_once(root: &Path) {
    let p = |rel: &str| root.join(rel).display().to_string();
    let s = |x: &str| x.to_string();
    run_ok(&[s("synth"), s("--out"), p("data")]);
    run_ok(&[s("identify"), s("--dataset"), p("data/ident/ident.csv"), s("--out"), p("id")]);
    let trains = ["asphalt", "grass", "tile"].map(|t| p(&format!("data/{t}/train.csv")));
    let params = p("id/params.json");
    let mut args = vec![s("train-gp"), s("--params"), params.clone(), s("--out"), p("gp"), s("--dataset")];
    args.extend(trains.iter().cloned());
    run_ok(&args);
    let mut args = vec![s("train-baseline"), s("--out"), p("bl"), s("--dataset")];
    args.extend(trains.iter().cloned());
    run_ok(&args);
    let test = p("data/grass/test.csv");
    run_ok(&[s("sweep"), s("--model"), s("gp"), s("--dataset"), test.clone(), s("--params"), params.clone(), s("--gp"), p("gp/gp/grass.json"), s("--out"), p("sweep")]);
    run_ok(&[s("sweep"), s("--model"), s("edd5"), s("--dataset"), test.clone(), s("--models"), p("bl"), s("--out"), p("sweep_edd5")]);
    run_ok(&[s("weights"), s("--dataset"), test.clone(), p("data/tile/test.csv"), s("--params"), params.clone(), s("--models"), p("gp"), s("--out"), p("weights")]);
    run_ok(&[s("coverage"), s("--params"), params.clone(), s("--models"), p("gp"), s("--out"), p("coverage")]);
    run_ok(&[s("heatmap"), s("--model"), s("gp"), s("--dataset"), test, s("--params"), params, s("--gp"), p("gp/gp/grass.json"), s("--out"), p("heatmap")]);
    run_ok(&[s("report"), s("--out"), p("report")]);
}

fn reports(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(root).unwrap() {
        let dir = entry.unwrap().path();
        let report = dir.join("report.json");
        if report.exists() {
            out.push((dir.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(report).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_8_determinism() {
    let base = std::env::temp_dir().join(format!("skidgp-accept-{}", std::process::id()));
    let (a, b) = (base.join("a"), base.join("b"));
    pipeline_once(&a);
    pipeline_once(&b);
    let (ra, rb) = (reports(&a), reports(&b));
    let differing: Vec<String> = ra
        .iter()
        .zip(&rb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    let pass = ra.len() == 10 && ra.len() == rb.len() && differing.is_empty();
    let _ = std::fs::remove_dir_all(&base);
    verdict(8, pass, &format!("{} report.json files compared, differing: {differing:?}", ra.len()));
}

// Criterion 9

#[test]
fn criterion_9_nesting() {
    let run = full_run();
    let tests: Vec<_> = run.report.nesting.iter().filter(|n| n.dataset == "test").collect();
    let rows: Vec<String> = tests
        .iter()
        .map(|n| format!("{} {:.4}<={:.4}<={:.4}<={:.4}", n.terrain, n.fl, n.edd5, n.edd2, n.idd))
        .collect();
    let pass = tests.len() == 3 && run.report.nesting.iter().all(|n| n.holds);
    verdict(9, pass, &rows.join("; "));
}

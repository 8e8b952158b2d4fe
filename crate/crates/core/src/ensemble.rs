//! Weighted ensemble of per-terrain residual GPs and the online weight
//! estimator.
//!
//! The ensemble prediction is `N(Σ wᵢ μᵢ, Σ wᵢ² Σᵢ)`. Weights minimize
//!
//! ```text
//! ‖Y_v − F_v w‖² + ‖Y_ω − F_ω w‖² + α ‖w − w_prev‖₁
//! ```
//!
//! over the probability simplex, where the columns of `F` hold each
//! terrain's one-step velocity predictions over a short motion history.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::dynamics::{velocity_step, DynamicParams, Integrator};
use crate::error::{Error, Result};
use crate::gp::GpPair;
use crate::types::{Control, Gaussian2};

/// Tolerance on the simplex constraints.
pub const SIMPLEX_TOL: f64 = 1e-8;
pub const DEFAULT_ALPHA: f64 = 1e-4;
pub const DEFAULT_HISTORY: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleWeights {
    w: DVector<f64>,
    /// Update index at which these weights were computed.
    pub step: usize,
}

impl EnsembleWeights {
    pub fn new(w: DVector<f64>, step: usize) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidParameter("weights must be non-empty".into()));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("ensemble weights"));
        }
        if w.iter().any(|&x| !(-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(&x)) || (w.sum() - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidParameter(format!(
                "weights are not on the simplex: {:?}",
                w.as_slice()
            )));
        }
        Ok(Self { w, step })
    }

    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter("ensemble needs at least one member".into()));
        }
        Ok(Self {
            w: DVector::from_element(m, 1.0 / m as f64),
            step: 0,
        })
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn as_slice(&self) -> &[f64] {
        self.w.as_slice()
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Index of the largest weight; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &x) in self.w.iter().enumerate() {
            if x > self.w[best] {
                best = i;
            }
        }
        best
    }
}

/// One past transition: GP input at `k` and the measured velocities at `k + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRecord {
    pub z: [f64; 4],
    pub v_next: f64,
    pub omega_next: f64,
}

impl HistoryRecord {
    pub fn new(eta: Vector2<f64>, u: Control, eta_next: Vector2<f64>) -> Self {
        Self {
            z: [eta[0], eta[1], u.v_ref, u.omega_ref],
            v_next: eta_next[0],
            omega_next: eta_next[1],
        }
    }

    fn eta(&self) -> Vector2<f64> {
        Vector2::new(self.z[0], self.z[1])
    }

    fn control(&self) -> Control {
        Control::new(self.z[2], self.z[3])
    }
}

/// Fixed-capacity, time-ordered ring buffer of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionHistory {
    capacity: usize,
    records: VecDeque<HistoryRecord>,
}

impl MotionHistory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidParameter("history capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            records: VecDeque::with_capacity(capacity),
        })
    }

    pub fn push(&mut self, record: HistoryRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &HistoryRecord> {
        self.records.iter()
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }
}

/// The `M` per-terrain GP pairs.
#[derive(Debug, Clone)]
pub struct TerrainGpBank {
    members: Vec<GpPair>,
}

impl TerrainGpBank {
    pub fn new(members: Vec<GpPair>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidParameter("terrain bank is empty".into()));
        }
        Ok(Self { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[GpPair] {
        &self.members
    }

    pub fn labels(&self) -> Vec<&str> {
        self.members.iter().map(|m| m.label.as_str()).collect()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.members.iter().position(|m| m.label == label)
    }
}

fn check_len(bank: &TerrainGpBank, weights: &EnsembleWeights) -> Result<()> {
    if bank.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: bank.len(),
            actual: weights.len(),
        });
    }
    Ok(())
}

/// Combines the members' residual predictions with weights `w`.
pub fn ensemble_predict(bank: &TerrainGpBank, weights: &EnsembleWeights, z: &[f64; 4]) -> Result<Gaussian2> {
    check_len(bank, weights)?;
    let mut mean = Vector2::zeros();
    let mut var = Vector2::zeros();
    for (member, &w) in bank.members.iter().zip(weights.w.iter()) {
        if w == 0.0 {
            continue;
        }
        let g = member.predict(z)?;
        mean += g.mean() * w;
        var += g.cov().diagonal() * (w * w);
    }
    Gaussian2::new(mean, Matrix2::from_diagonal(&var))
}

/// Stacked data of the weight problem, `K_eff` rows and `M` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightProblem {
    pub f_v: DMatrix<f64>,
    pub f_omega: DMatrix<f64>,
    pub y_v: DVector<f64>,
    pub y_omega: DVector<f64>,
}

impl WeightProblem {
    pub fn new(f_v: DMatrix<f64>, f_omega: DMatrix<f64>, y_v: DVector<f64>, y_omega: DVector<f64>) -> Result<Self> {
        let (k, m) = f_v.shape();
        if f_omega.shape() != (k, m) {
            return Err(Error::DimensionMismatch {
                expected: k * m,
                actual: f_omega.len(),
            });
        }
        if y_v.len() != k || y_omega.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: y_v.len().min(y_omega.len()),
            });
        }
        if m == 0 {
            return Err(Error::InvalidParameter("weight problem has no columns".into()));
        }
        let all = f_v.iter().chain(f_omega.iter()).chain(y_v.iter()).chain(y_omega.iter());
        if all.into_iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("weight problem"));
        }
        Ok(Self { f_v, f_omega, y_v, y_omega })
    }

    pub fn members(&self) -> usize {
        self.f_v.ncols()
    }

    pub fn rows(&self) -> usize {
        self.f_v.nrows()
    }

    /// Value of the weight objective at `w`.
    pub fn objective(&self, w: &DVector<f64>, w_prev: &DVector<f64>, alpha: f64) -> f64 {
        (&self.y_v - &self.f_v * w).norm_squared()
            + (&self.y_omega - &self.f_omega * w).norm_squared()
            + alpha * (w - w_prev).abs().sum()
    }
}

/// Per-terrain one-step velocity predictions for each history record.
pub fn build_weight_problem(
    bank: &TerrainGpBank,
    history: &MotionHistory,
    params: &DynamicParams,
    dt: f64,
    integrator: Integrator,
) -> Result<WeightProblem> {
    if history.is_empty() {
        return Err(Error::Dataset("motion history is empty".into()));
    }
    let (k, m) = (history.len(), bank.len());
    let mut f_v = DMatrix::zeros(k, m);
    let mut f_w = DMatrix::zeros(k, m);
    let mut y_v = DVector::zeros(k);
    let mut y_w = DVector::zeros(k);
    for (r, rec) in history.iter().enumerate() {
        let nominal = velocity_step(&rec.eta(), &rec.control(), params, dt, integrator);
        for (i, member) in bank.members.iter().enumerate() {
            let mu = member.predict_mean(&rec.z)?;
            f_v[(r, i)] = nominal[0] + mu[0];
            f_w[(r, i)] = nominal[1] + mu[1];
        }
        y_v[r] = rec.v_next;
        y_w[r] = rec.omega_next;
    }
    WeightProblem::new(f_v, f_w, y_v, y_w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Bound on the projected-gradient stationarity residual, in weight units.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 10_000,
        }
    }
}

/// `argmin ½‖w − x‖² + t‖w − p‖₁` over the simplex.
///
/// For a sum multiplier `μ` each coordinate is a soft-threshold around `pᵢ`
/// of `xᵢ − μ`, clipped at zero; the total is monotone in `μ`, which is
/// found by bisection.
fn prox(x: &DVector<f64>, p: &DVector<f64>, t: f64) -> DVector<f64> {
    let coord = |xi: f64, pi: f64, mu: f64| {
        let s = xi - mu;
        let w = if s > pi + t {
            s - t
        } else if s < pi - t {
            s + t
        } else {
            pi
        };
        w.max(0.0)
    };
    let total = |mu: f64| x.iter().zip(p.iter()).map(|(&xi, &pi)| coord(xi, pi, mu)).sum::<f64>();
    let spread = x.iter().chain(p.iter()).fold(0.0f64, |a, v| a.max(v.abs())) + t + 1.0;
    let (mut lo, mut hi) = (-spread, spread);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if total(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = 0.5 * (lo + hi);
    let mut w = DVector::from_iterator(x.len(), x.iter().zip(p.iter()).map(|(&xi, &pi)| coord(xi, pi, mu)));
    let s = w.sum();
    if s > 0.0 {
        w /= s;
    }
    w
}

struct Quadratic {
    h: DMatrix<f64>,
    c: DVector<f64>,
    lipschitz: f64,
}

impl Quadratic {
    fn new(problem: &WeightProblem) -> Self {
        let h = (problem.f_v.transpose() * &problem.f_v + problem.f_omega.transpose() * &problem.f_omega) * 2.0;
        let c = -(problem.f_v.transpose() * &problem.y_v + problem.f_omega.transpose() * &problem.y_omega) * 2.0;
        let lipschitz = h.clone().symmetric_eigenvalues().max().max(0.0);
        Self { h, c, lipschitz }
    }

    fn grad(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.h * w + &self.c
    }
}

/// `‖w − prox(w − ∇q(w)/L)‖∞`, zero exactly at the constrained minimizer.
fn stationarity(q: &Quadratic, w: &DVector<f64>, p: &DVector<f64>, alpha: f64, step: f64) -> f64 {
    let next = prox(&(w - q.grad(w) * step), p, alpha * step);
    (w - next).amax()
}

/// Solves the equality-constrained QP on the coordinates that `w` places
/// strictly inside a linear piece of the objective, with the rest held at
/// zero or at `pᵢ`. Returns `None` when the pattern is inconsistent.
fn polish(q: &Quadratic, w: &DVector<f64>, p: &DVector<f64>, alpha: f64, eps: f64) -> Option<DVector<f64>> {
    let m = w.len();
    let mut fixed = vec![None; m];
    let mut sign = vec![0.0; m];
    for i in 0..m {
        if w[i] <= eps {
            fixed[i] = Some(0.0);
        } else if alpha > 0.0 && (w[i] - p[i]).abs() <= eps {
            fixed[i] = Some(p[i]);
        } else {
            sign[i] = (w[i] - p[i]).signum();
        }
    }
    let free: Vec<usize> = (0..m).filter(|&i| fixed[i].is_none()).collect();
    let mut out = DVector::from_iterator(m, fixed.iter().map(|f| f.unwrap_or(0.0)));
    if free.is_empty() {
        return ((out.sum() - 1.0).abs() <= 1e-12).then_some(out);
    }
    // Solve for the step from the snapped iterate; the minimum-norm step
    // stays close to the iterate when the quadratic is degenerate.
    for &i in &free {
        out[i] = w[i];
    }
    let g = q.grad(&out);
    let nf = free.len();
    let mut a = DMatrix::zeros(nf + 1, nf + 1);
    let mut b = DVector::zeros(nf + 1);
    for (r, &i) in free.iter().enumerate() {
        for (s, &j) in free.iter().enumerate() {
            a[(r, s)] = q.h[(i, j)];
        }
        a[(r, nf)] = 1.0;
        a[(nf, r)] = 1.0;
        b[r] = -g[i] - alpha * sign[i];
    }
    b[nf] = 1.0 - out.sum();
    // The KKT matrix is symmetric; an eigen pseudo-inverse is more accurate
    // here than the SVD solve.
    let eig = a.symmetric_eigen();
    let eps = 1e-12 * eig.eigenvalues.amax();
    let mut step = DVector::zeros(nf + 1);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() > eps {
            let v = eig.eigenvectors.column(k);
            step += v * (v.dot(&b) / lambda);
        }
    }
    for (r, &i) in free.iter().enumerate() {
        let v = out[i] + step[r];
        if v < 0.0 || (alpha > 0.0 && sign[i] * (v - p[i]) < 0.0) {
            return None;
        }
        out[i] = v;
    }
    Some(out)
}

/// Minimizes the weight objective over the simplex, warm-started at `w_prev`.
///
/// Accelerated proximal gradient (exact prox of the L1 trust term plus the
/// simplex), with periodic active-set polishing that solves the KKT system
/// of the identified linear piece exactly.
pub fn solve_weights(
    problem: &WeightProblem,
    w_prev: &EnsembleWeights,
    alpha: f64,
    options: &SolverOptions,
) -> Result<EnsembleWeights> {
    let m = problem.members();
    if w_prev.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: w_prev.len(),
        });
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("alpha must be non-negative (got {alpha})")));
    }
    let step_index = w_prev.step + 1;
    let p = w_prev.as_vector();
    if m == 1 {
        return EnsembleWeights::new(DVector::from_element(1, 1.0), step_index);
    }
    let q = Quadratic::new(problem);
    if q.lipschitz <= 1e-300 {
        // Data term is constant: the trust term alone is minimized at w_prev.
        return EnsembleWeights::new(p.clone(), step_index);
    }
    let step = 1.0 / q.lipschitz;
    let obj = |w: &DVector<f64>| problem.objective(w, p, alpha);

    let mut x = p.clone();
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut residual = f64::INFINITY;
    for it in 0..options.max_iters {
        let x_next = prox(&(&y - q.grad(&y) * step), p, alpha * step);
        // Restart momentum when the objective goes up.
        if obj(&x_next) > obj(&x) && y != x {
            t = 1.0;
            y = x.clone();
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &x_next + (&x_next - &x) * ((t - 1.0) / t_next);
        x = x_next;
        t = t_next;

        residual = stationarity(&q, &x, p, alpha, step);
        if residual <= options.tol {
            return EnsembleWeights::new(x, step_index);
        }
        if it % 20 == 0 {
            let fx = obj(&x);
            // Nested snapping patterns: every coordinate within the given
            // distance of zero (or of pᵢ) is pinned there.
            let mut snaps: Vec<f64> = x
                .iter()
                .zip(p.iter())
                .map(|(&xi, &pi)| if alpha > 0.0 { xi.min((xi - pi).abs()) } else { xi })
                .map(|d| d * (1.0 + 1e-12))
                .collect();
            snaps.push(1e-9);
            snaps.sort_by(f64::total_cmp);
            snaps.dedup();
            for eps in snaps {
                if let Some(candidate) = polish(&q, &x, p, alpha, eps) {
                    let r = stationarity(&q, &candidate, p, alpha, step);
                    if r <= options.tol && obj(&candidate) <= fx + 1e-12 * fx.abs().max(1.0) {
                        return EnsembleWeights::new(candidate, step_index);
                    }
                }
            }
        }
    }
    Err(Error::NotConverged {
        iterations: options.max_iters,
        residual,
        last: x.as_slice().to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    /// History length `K`.
    pub history: usize,
    pub alpha: f64,
    pub solver: SolverOptions,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            history: DEFAULT_HISTORY,
            alpha: DEFAULT_ALPHA,
            solver: SolverOptions::default(),
        }
    }
}

/// Online weight estimator for one robot stream.
#[derive(Debug, Clone)]
pub struct WeightEstimator<'a> {
    bank: &'a TerrainGpBank,
    params: DynamicParams,
    dt: f64,
    integrator: Integrator,
    config: EnsembleConfig,
    history: MotionHistory,
    weights: EnsembleWeights,
}

impl<'a> WeightEstimator<'a> {
    /// Starts from uniform weights.
    pub fn new(bank: &'a TerrainGpBank, params: DynamicParams, dt: f64, integrator: Integrator, config: EnsembleConfig) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            bank,
            params,
            dt,
            integrator,
            history: MotionHistory::new(config.history)?,
            weights: EnsembleWeights::uniform(bank.len())?,
            config,
        })
    }

    pub fn weights(&self) -> &EnsembleWeights {
        &self.weights
    }

    pub fn history(&self) -> &MotionHistory {
        &self.history
    }

    pub fn bank(&self) -> &TerrainGpBank {
        self.bank
    }

    /// Pushes a transition, re-solves and returns the new weights.
    pub fn update(&mut self, record: HistoryRecord) -> Result<&EnsembleWeights> {
        self.weights = update(
            self.bank,
            &mut self.history,
            &self.weights,
            &self.params,
            self.dt,
            self.integrator,
            &self.config,
            record,
        )?;
        Ok(&self.weights)
    }

    pub fn predict(&self, z: &[f64; 4]) -> Result<Gaussian2> {
        ensemble_predict(self.bank, &self.weights, z)
    }
}

/// Pushes `record` into `history`, rebuilds the weight problem and solves it.
#[allow(clippy::too_many_arguments)]
pub fn update(
    bank: &TerrainGpBank,
    history: &mut MotionHistory,
    w_prev: &EnsembleWeights,
    params: &DynamicParams,
    dt: f64,
    integrator: Integrator,
    config: &EnsembleConfig,
    record: HistoryRecord,
) -> Result<EnsembleWeights> {
    check_len(bank, w_prev)?;
    history.push(record);
    let problem = build_weight_problem(bank, history, params, dt, integrator)?;
    solve_weights(&problem, w_prev, config.alpha, &config.solver)
}

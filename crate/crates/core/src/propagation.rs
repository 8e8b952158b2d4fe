//! Belief propagation through the residual-augmented dynamics.
//!
//! The sigma-point transform works on the 10-dimensional augmented state
//! `[x, 0, 0, 0, d_v, d_ω]`, whose covariance is `diag(Σ, Σ_gp)`. Each of the
//! 21 points is mapped through the nominal step and the disturbance half is
//! added to the velocities.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, Matrix2, Matrix5, SMatrix, SVector, Vector2, Vector5};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{step_vector, DynamicParams, Integrator};
use crate::ensemble::{ensemble_predict, EnsembleWeights, TerrainGpBank};
use crate::error::{Error, Result};
use crate::gp::GpPair;
use crate::linalg::psd_sqrt;
use crate::types::{wrap, Control, Gaussian2, GaussianBelief, OMEGA, THETA, V};

/// State dimension.
pub const STATE_DIM: usize = 5;
const AUG_DIM: usize = 2 * STATE_DIM;
pub const SIGMA_POINTS: usize = 4 * STATE_DIM + 1;

type Vector10 = SVector<f64, AUG_DIM>;
type Matrix10 = SMatrix<f64, AUG_DIM, AUG_DIM>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SigmaConfig {
    pub lambda: f64,
}

impl Default for SigmaConfig {
    fn default() -> Self {
        Self { lambda: 1.0 }
    }
}

/// `W₀ = λ/(2n+λ)` followed by `4n` weights of `0.5/(2n+λ)`.
pub fn sigma_weights(config: &SigmaConfig) -> Result<[f64; SIGMA_POINTS]> {
    let denom = AUG_DIM as f64 + config.lambda;
    if !(denom > 0.0) || !config.lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "2n + lambda must be positive (lambda = {})",
            config.lambda
        )));
    }
    let mut w = [0.5 / denom; SIGMA_POINTS];
    w[0] = config.lambda / denom;
    Ok(w)
}

/// Weighted mean with a circular mean for the heading, accumulated as
/// deviations from the first point so identical points average exactly.
fn weighted_mean(points: &[Vector5<f64>], weights: &[f64]) -> Vector5<f64> {
    let r = points[0];
    let mut acc = Vector5::zeros();
    let (mut s, mut c) = (0.0, 0.0);
    for (p, &w) in points.iter().zip(weights) {
        let d = deviation(p, &r);
        acc += d * w;
        s += w * d[THETA].sin();
        c += w * d[THETA].cos();
    }
    let mut mean = r + acc;
    mean[THETA] = wrap(r[THETA] + s.atan2(c));
    mean
}

fn deviation(p: &Vector5<f64>, mean: &Vector5<f64>) -> Vector5<f64> {
    let mut d = p - mean;
    d[THETA] = wrap(d[THETA]);
    d
}

fn weighted_cov(points: &[Vector5<f64>], weights: &[f64], mean: &Vector5<f64>) -> Matrix5<f64> {
    let mut cov = Matrix5::zeros();
    for (p, &w) in points.iter().zip(weights) {
        let d = deviation(p, mean);
        cov += d * d.transpose() * w;
    }
    (cov + cov.transpose()) * 0.5
}

/// Discrete map shared by all propagators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepModel {
    pub params: DynamicParams,
    pub dt: f64,
    pub integrator: Integrator,
}

impl StepModel {
    pub fn new(params: DynamicParams, dt: f64) -> Result<Self> {
        params.validate()?;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt must be positive (got {dt})")));
        }
        Ok(Self {
            params,
            dt,
            integrator: Integrator::Rk4,
        })
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn step(&self, x: &Vector5<f64>, u: &Control) -> Vector5<f64> {
        step_vector(x, u, &self.params, self.dt, self.integrator)
    }
}

/// One sigma-point propagation step with an additive velocity disturbance.
pub fn propagate_step(
    belief: &GaussianBelief,
    u: &Control,
    gp_out: &Gaussian2,
    model: &StepModel,
    config: &SigmaConfig,
) -> Result<GaussianBelief> {
    let weights = sigma_weights(config)?;
    let mut a = Vector10::zeros();
    a.fixed_rows_mut::<5>(0).copy_from(belief.mean());
    a[STATE_DIM + V] = gp_out.mean()[0];
    a[STATE_DIM + OMEGA] = gp_out.mean()[1];
    let mut p = Matrix10::zeros();
    p.fixed_view_mut::<5, 5>(0, 0).copy_from(belief.cov());
    p.fixed_view_mut::<2, 2>(STATE_DIM + V, STATE_DIM + V).copy_from(gp_out.cov());

    let scale = p.diagonal().amax().max(1.0);
    let s = psd_sqrt(&DMatrix::from_column_slice(AUG_DIM, AUG_DIM, p.as_slice()), 1e-12 * scale)?;
    let c = (AUG_DIM as f64 + config.lambda).sqrt();

    let mut points = [a; SIGMA_POINTS];
    for j in 0..AUG_DIM {
        let col = Vector10::from_iterator(s.column(j).iter().copied()) * c;
        points[1 + j] = a + col;
        points[1 + AUG_DIM + j] = a - col;
    }
    let mapped: Vec<Vector5<f64>> = points
        .iter()
        .map(|x| {
            let state: Vector5<f64> = x.fixed_rows::<5>(0).into_owned();
            let mut y = model.step(&state, u);
            y[V] += x[STATE_DIM + V];
            y[OMEGA] += x[STATE_DIM + OMEGA];
            y[THETA] = wrap(y[THETA]);
            y
        })
        .collect();
    let mean = weighted_mean(&mapped, &weights);
    let cov = weighted_cov(&mapped, &weights, &mean);
    GaussianBelief::new(mean, cov)
}

/// Where the per-step residual distribution comes from.
#[derive(Debug, Clone, Copy)]
pub enum ResidualModel<'a> {
    Nominal,
    Gp(&'a GpPair),
    Ensemble {
        bank: &'a TerrainGpBank,
        weights: &'a EnsembleWeights,
    },
}

impl ResidualModel<'_> {
    /// Residual distribution at velocities `eta` under command `u`.
    pub fn query(&self, eta: &Vector2<f64>, u: &Control) -> Result<Gaussian2> {
        let z = [eta[0], eta[1], u.v_ref, u.omega_ref];
        match self {
            ResidualModel::Nominal => Ok(Gaussian2::zero()),
            ResidualModel::Gp(pair) => pair.predict(&z),
            ResidualModel::Ensemble { bank, weights } => ensemble_predict(bank, weights, &z),
        }
    }

    pub fn query_mean(&self, eta: &Vector2<f64>, u: &Control) -> Result<Vector2<f64>> {
        let z = [eta[0], eta[1], u.v_ref, u.omega_ref];
        match self {
            ResidualModel::Nominal => Ok(Vector2::zeros()),
            ResidualModel::Gp(pair) => pair.predict_mean(&z),
            ResidualModel::Ensemble { .. } => self.query(eta, u).map(|g| *g.mean()),
        }
    }
}

fn velocities(x: &Vector5<f64>) -> Vector2<f64> {
    Vector2::new(x[V], x[OMEGA])
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefTrajectory {
    /// `N + 1` beliefs starting with the initial one.
    pub beliefs: Vec<GaussianBelief>,
    pub controls: Vec<Control>,
}

impl BeliefTrajectory {
    pub fn last(&self) -> &GaussianBelief {
        self.beliefs.last().expect("trajectory holds the initial belief")
    }

    /// One row per step: step, mean (5), covariance upper triangle (15).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string()];
        let names = ["x", "y", "theta", "v", "omega"];
        header.extend(names.iter().map(|n| format!("mu_{n}")));
        for i in 0..STATE_DIM {
            for j in i..STATE_DIM {
                header.push(format!("cov_{}_{}", names[i], names[j]));
            }
        }
        w.write_record(&header)?;
        for (k, b) in self.beliefs.iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(b.mean().iter().map(|v| v.to_string()));
            for i in 0..STATE_DIM {
                for j in i..STATE_DIM {
                    row.push(b.cov()[(i, j)].to_string());
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn check_horizon(u_seq: &[Control]) -> Result<()> {
    if u_seq.is_empty() {
        return Err(Error::InvalidParameter("control sequence is empty".into()));
    }
    if u_seq.iter().any(|u| !u.v_ref.is_finite() || !u.omega_ref.is_finite()) {
        return Err(Error::NonFinite("control sequence"));
    }
    Ok(())
}

/// Sigma-point propagation over `u_seq`, querying the residual model at the
/// current mean velocities.
pub fn propagate_horizon(
    belief0: &GaussianBelief,
    u_seq: &[Control],
    residual: &ResidualModel,
    model: &StepModel,
    config: &SigmaConfig,
) -> Result<BeliefTrajectory> {
    check_horizon(u_seq)?;
    let mut beliefs = Vec::with_capacity(u_seq.len() + 1);
    beliefs.push(*belief0);
    for u in u_seq {
        let current = beliefs.last().expect("non-empty");
        let gp_out = residual.query(&velocities(current.mean()), u)?;
        let next = propagate_step(current, u, &gp_out, model, config)?;
        beliefs.push(next);
    }
    Ok(BeliefTrajectory {
        beliefs,
        controls: u_seq.to_vec(),
    })
}

/// Central-difference Jacobian of the discrete map at `x`.
pub fn step_jacobian(model: &StepModel, x: &Vector5<f64>, u: &Control) -> Matrix5<f64> {
    const H: f64 = 1e-6;
    let mut a = Matrix5::zeros();
    for j in 0..STATE_DIM {
        let mut xp = *x;
        let mut xm = *x;
        xp[j] += H;
        xm[j] -= H;
        let mut d = model.step(&xp, u) - model.step(&xm, u);
        d[THETA] = wrap(d[THETA]);
        a.set_column(j, &(d / (2.0 * H)));
    }
    a
}

/// First-order (Taylor) propagation: `Σ' = A Σ Aᵀ + B Σ_gp Bᵀ`.
pub fn propagate_linear(
    belief0: &GaussianBelief,
    u_seq: &[Control],
    residual: &ResidualModel,
    model: &StepModel,
) -> Result<BeliefTrajectory> {
    check_horizon(u_seq)?;
    let mut beliefs = Vec::with_capacity(u_seq.len() + 1);
    beliefs.push(*belief0);
    for u in u_seq {
        let current = beliefs.last().expect("non-empty");
        let mu = current.mean();
        let gp_out = residual.query(&velocities(mu), u)?;
        let a = step_jacobian(model, mu, u);
        let mut mean = model.step(mu, u);
        mean[V] += gp_out.mean()[0];
        mean[OMEGA] += gp_out.mean()[1];
        mean[THETA] = wrap(mean[THETA]);
        let mut cov = a * current.cov() * a.transpose();
        cov.fixed_view_mut::<2, 2>(V, V).add_assign(gp_out.cov());
        beliefs.push(GaussianBelief::new(mean, cov)?);
    }
    Ok(BeliefTrajectory {
        beliefs,
        controls: u_seq.to_vec(),
    })
}

trait AddAssignView {
    fn add_assign(&mut self, m: &Matrix2<f64>);
}

impl<S> AddAssignView for nalgebra::Matrix<f64, nalgebra::Const<2>, nalgebra::Const<2>, S>
where
    S: nalgebra::StorageMut<f64, nalgebra::Const<2>, nalgebra::Const<2>>,
{
    fn add_assign(&mut self, m: &Matrix2<f64>) {
        for i in 0..2 {
            for j in 0..2 {
                self[(i, j)] += m[(i, j)];
            }
        }
    }
}

/// Where Monte-Carlo samples query the residual model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    /// Every sample queries at its own velocities.
    #[default]
    PerSample,
    /// All samples share the residual distribution queried at the sample-mean
    /// velocities, matching the certainty-equivalent query of the
    /// propagators.
    EnsembleMean,
}

/// Sample paths, `paths[i][k]` is sample `i` at step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct McSamples {
    pub paths: Vec<Vec<Vector5<f64>>>,
}

impl McSamples {
    pub fn at_step(&self, k: usize) -> Vec<Vector5<f64>> {
        self.paths.iter().map(|p| p[k]).collect()
    }

    pub fn finals(&self) -> Vec<Vector5<f64>> {
        self.paths.iter().map(|p| *p.last().expect("non-empty path")).collect()
    }

    pub fn steps(&self) -> usize {
        self.paths.first().map_or(0, |p| p.len())
    }

    /// One row per sample and step: sample, step, x, y, theta, v, omega.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sample", "step", "x", "y", "theta", "v", "omega"])?;
        for (i, path) in self.paths.iter().enumerate() {
            for (k, x) in path.iter().enumerate() {
                let mut row = vec![i.to_string(), k.to_string()];
                row.extend(x.iter().map(|v| v.to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn draw<const D: usize>(rng: &mut ChaCha8Rng, l: &DMatrix<f64>) -> SVector<f64, D> {
    let z = SVector::<f64, D>::from_fn(|_, _| StandardNormal.sample(rng));
    let mut out = SVector::<f64, D>::zeros();
    for i in 0..D {
        for j in 0..=i {
            out[i] += l[(i, j)] * z[j];
        }
    }
    out
}

fn sqrt5(m: &Matrix5<f64>) -> Result<DMatrix<f64>> {
    let scale = m.diagonal().amax().max(1.0);
    psd_sqrt(&DMatrix::from_column_slice(5, 5, m.as_slice()), 1e-12 * scale)
}

fn sqrt2(m: &Matrix2<f64>) -> Result<DMatrix<f64>> {
    let scale = m.diagonal().amax().max(1.0);
    psd_sqrt(&DMatrix::from_column_slice(2, 2, m.as_slice()), 1e-12 * scale)
}

/// Samples initial states and per-step disturbances and integrates forward.
///
/// Sample `i` draws from its own ChaCha stream `i` under `seed`, so results
/// do not depend on evaluation order.
pub fn monte_carlo_rollout(
    belief0: &GaussianBelief,
    u_seq: &[Control],
    residual: &ResidualModel,
    model: &StepModel,
    n_samples: usize,
    seed: u64,
    mode: QueryMode,
) -> Result<McSamples> {
    check_horizon(u_seq)?;
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be at least 1".into()));
    }
    let l0 = sqrt5(belief0.cov())?;
    let mut rngs: Vec<ChaCha8Rng> = (0..n_samples)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64);
            r
        })
        .collect();
    let mut paths: Vec<Vec<Vector5<f64>>> = rngs
        .iter_mut()
        .map(|rng| {
            let mut x = belief0.mean() + draw::<5>(rng, &l0);
            x[THETA] = wrap(x[THETA]);
            let mut p = Vec::with_capacity(u_seq.len() + 1);
            p.push(x);
            p
        })
        .collect();
    for (k, u) in u_seq.iter().enumerate() {
        let shared = match mode {
            QueryMode::EnsembleMean => {
                let eta = paths.iter().map(|p| velocities(&p[k])).sum::<Vector2<f64>>() / n_samples as f64;
                let g = residual.query(&eta, u)?;
                Some((g, sqrt2(g.cov())?))
            }
            QueryMode::PerSample => None,
        };
        for (path, rng) in paths.iter_mut().zip(rngs.iter_mut()) {
            let x = path[k];
            let (g, l) = match &shared {
                Some((g, l)) => (*g, l.clone()),
                None => {
                    let g = residual.query(&velocities(&x), u)?;
                    let l = sqrt2(g.cov())?;
                    (g, l)
                }
            };
            let d = g.mean() + draw::<2>(rng, &l);
            let mut y = model.step(&x, u);
            y[V] += d[0];
            y[OMEGA] += d[1];
            y[THETA] = wrap(y[THETA]);
            path.push(y);
        }
    }
    Ok(McSamples { paths })
}

/// Sample mean (circular in heading) and covariance (wrapped deviations,
/// `1/(n−1)` normalization).
pub fn sample_moments(samples: &[Vector5<f64>]) -> Result<(Vector5<f64>, Matrix5<f64>)> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no samples".into()));
    }
    let n = samples.len();
    let w = vec![1.0 / n as f64; n];
    let mean = weighted_mean(samples, &w);
    let cov = if n > 1 {
        weighted_cov(samples, &vec![1.0 / (n - 1) as f64; n], &mean)
    } else {
        Matrix5::zeros()
    };
    Ok((mean, cov))
}

/// Fraction of samples inside the 3σ ellipse of the belief's `(X, Y)`
/// marginal.
pub fn coverage_fraction(belief: &GaussianBelief, samples: &[Vector5<f64>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no samples".into()));
    }
    let block: Matrix2<f64> = belief.cov().fixed_view::<2, 2>(0, 0).into_owned();
    let scale = block.diagonal().amax();
    let det = block.determinant();
    if !(scale > 0.0) || det <= 1e-12 * scale * scale {
        return Err(Error::NotPsd { min_eigenvalue: det });
    }
    let inv = block.try_inverse().ok_or(Error::NotPsd { min_eigenvalue: det })?;
    let mu = Vector2::new(belief.mean()[0], belief.mean()[1]);
    let inside = samples
        .iter()
        .filter(|s| {
            let d = Vector2::new(s[0], s[1]) - mu;
            (d.transpose() * inv * d)[(0, 0)] <= 9.0
        })
        .count();
    Ok(inside as f64 / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> StepModel {
        StepModel::new(DynamicParams::new([0.4, 0.2, 0.02, 1.0, 0.05, 1.0], 0.0).unwrap(), 0.1).unwrap()
    }

    #[test]
    fn weights_examples() {
        let w = sigma_weights(&SigmaConfig { lambda: 0.0 }).unwrap();
        assert_eq!(w[0], 0.0);
        assert!(w[1..].iter().all(|&x| (x - 0.05).abs() < 1e-15));
        let w = sigma_weights(&SigmaConfig { lambda: 2.0 }).unwrap();
        assert!((w[0] - 1.0 / 6.0).abs() < 1e-15);
        assert!((w[20] - 1.0 / 24.0).abs() < 1e-15);
        assert!(sigma_weights(&SigmaConfig { lambda: -10.0 }).is_err());
    }

    #[test]
    fn deterministic_collapse() {
        let m = model();
        let x0 = Vector5::new(1.0, -2.0, 3.1, 0.7, 0.4);
        let b = GaussianBelief::new(x0, Matrix5::zeros()).unwrap();
        let u = Control::new(0.9, 1.2);
        for lambda in [0.5, 1.0, 3.0] {
            let out = propagate_step(&b, &u, &Gaussian2::zero(), &m, &SigmaConfig { lambda }).unwrap();
            let nominal = m.step(&x0, &u);
            assert!((out.mean() - nominal).amax() < 1e-12);
            assert_eq!(*out.cov(), Matrix5::zeros());
        }
    }

    #[test]
    fn additive_disturbance_passes_through() {
        let b = GaussianBelief::new(Vector5::new(0.0, 0.0, 0.0, 0.5, 0.1), Matrix5::zeros()).unwrap();
        let g = Gaussian2::diagonal(0.01, -0.02, 0.003, 0.007).unwrap();
        let out = propagate_step(&b, &Control::new(0.5, 0.2), &g, &model(), &SigmaConfig::default()).unwrap();
        assert!((out.cov()[(V, V)] - 0.003).abs() < 1e-8);
        assert!((out.cov()[(OMEGA, OMEGA)] - 0.007).abs() < 1e-8);
    }

    #[test]
    fn coverage_examples() {
        let cov = Matrix5::from_diagonal(&Vector5::new(4.0, 1.0, 0.1, 0.1, 0.1));
        let b = GaussianBelief::new(Vector5::zeros(), cov).unwrap();
        assert_eq!(coverage_fraction(&b, &[Vector5::zeros()]).unwrap(), 1.0);
        // 4σ along X (σ = 2).
        assert_eq!(coverage_fraction(&b, &[Vector5::new(8.0, 0.0, 0.0, 0.0, 0.0)]).unwrap(), 0.0);
        let degenerate = GaussianBelief::new(Vector5::zeros(), Matrix5::zeros()).unwrap();
        assert!(coverage_fraction(&degenerate, &[Vector5::zeros()]).is_err());
    }

    #[test]
    fn monte_carlo_without_uncertainty_is_nominal() {
        let m = model();
        let x0 = Vector5::new(0.0, 0.0, 0.3, 0.2, 0.0);
        let b = GaussianBelief::new(x0, Matrix5::zeros()).unwrap();
        let u = vec![Control::new(1.0, 0.5); 5];
        let mc = monte_carlo_rollout(&b, &u, &ResidualModel::Nominal, &m, 4, 9, QueryMode::PerSample).unwrap();
        let mut x = x0;
        for c in &u {
            x = m.step(&x, c);
        }
        for f in mc.finals() {
            assert_eq!(f, x);
        }
    }
}

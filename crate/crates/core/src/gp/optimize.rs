//! Marginal-likelihood hyperparameter search.
//!
//! L-BFGS (memory 10) with a backtracking Armijo line search, run in log
//! space from the supplied initial point and from a few random restarts
//! drawn log-uniformly over `[1e-2, 1e2]` per parameter. The best iterate
//! over all starts is returned.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{negative_log_marginal_likelihood, GpHyperparams};
use crate::error::{Error, Result};

const MEMORY: usize = 10;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 50;
/// Log-parameters beyond this magnitude are treated as infeasible.
const LOG_BOUND: f64 = 25.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsReport {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Minimizes a smooth function given as `x ↦ Some((f, ∇f))`; `None` marks
/// an infeasible point, which the line search backs away from.
pub fn lbfgs_minimize<F>(mut objective: F, x0: &DVector<f64>, max_iters: usize, grad_tol: f64) -> Option<LbfgsReport>
where
    F: FnMut(&DVector<f64>) -> Option<(f64, DVector<f64>)>,
{
    let (mut f, mut g) = objective(x0)?;
    let mut x = x0.clone();
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    let mut iterations = 0;
    while iterations < max_iters && g.norm() >= grad_tol {
        // Two-loop recursion for d = −H g.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * s.dot(&q);
            q.axpy(-a, y, 1.0);
            alphas.push(a);
        }
        let gamma = history
            .back()
            .map(|(s, y, _)| s.dot(y) / y.dot(y))
            .unwrap_or_else(|| 1.0 / g.norm().max(1.0));
        q *= gamma;
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * y.dot(&q);
            q.axpy(a - b, s, 1.0);
        }
        let mut d = -q;
        let mut slope = g.dot(&d);
        if slope >= 0.0 {
            history.clear();
            d = -g.clone() / g.norm().max(1.0);
            slope = g.dot(&d);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let candidate = &x + &d * step;
            if candidate.iter().all(|v| v.abs() <= LOG_BOUND) {
                if let Some((fc, gc)) = objective(&candidate) {
                    if fc.is_finite() && fc <= f + ARMIJO * step * slope {
                        accepted = Some((candidate, fc, gc));
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            break;
        };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if history.len() == MEMORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let converged = (f - fn_).abs() <= 1e-14 * f.abs().max(1.0);
        x = xn;
        f = fn_;
        g = gn;
        iterations += 1;
        if converged {
            break;
        }
    }
    Some(LbfgsReport {
        grad_norm: g.norm(),
        x,
        value: f,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    pub max_iters: usize,
    /// Random restarts in addition to the supplied initial point.
    pub restarts: usize,
    pub seed: u64,
    pub grad_tol: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            restarts: 3,
            seed: 0,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport {
    pub hyper: GpHyperparams,
    pub nlml: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Maximum-likelihood hyperparameters for `inputs`/`targets`.
///
/// With `max_iters == 0` the initial hyperparameters are returned unchanged.
pub fn optimize_hyperparams(
    inputs: &DMatrix<f64>,
    targets: &DVector<f64>,
    init: &GpHyperparams,
    options: &OptimizeOptions,
) -> Result<OptimizeReport> {
    if init.dim() != inputs.ncols() {
        return Err(Error::DimensionMismatch {
            expected: inputs.ncols(),
            actual: init.dim(),
        });
    }
    let eval = |x: &DVector<f64>| {
        negative_log_marginal_likelihood(inputs, targets, &GpHyperparams::from_vector(x))
            .ok()
            .filter(|(f, g)| f.is_finite() && g.iter().all(|v| v.is_finite()))
    };
    if options.max_iters == 0 {
        let (nlml, grad_norm) = eval(&init.to_vector()).map_or((f64::NAN, f64::NAN), |(f, g)| (f, g.norm()));
        return Ok(OptimizeReport {
            hyper: init.clone(),
            nlml,
            grad_norm,
            iterations: 0,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let (lo, hi) = (1e-2f64.ln(), 1e2f64.ln());
    let mut starts = vec![init.to_vector()];
    for _ in 0..options.restarts {
        starts.push(DVector::from_fn(init.dim() + 2, |_, _| rng.gen_range(lo..hi)));
    }

    let mut best: Option<LbfgsReport> = None;
    let mut total_iters = 0;
    for start in &starts {
        if let Some(r) = lbfgs_minimize(eval, start, options.max_iters, options.grad_tol) {
            total_iters += r.iterations;
            if best.as_ref().is_none_or(|b| r.value < b.value) {
                best = Some(r);
            }
        }
    }
    let best = best.ok_or(Error::KernelNotPsd)?;
    Ok(OptimizeReport {
        hyper: GpHyperparams::from_vector(&best.x),
        nlml: best.value,
        grad_norm: best.grad_norm,
        iterations: total_iters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lbfgs_on_rosenbrock() {
        let f = |x: &DVector<f64>| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ]);
            Some((v, g))
        };
        let r = lbfgs_minimize(f, &DVector::from_vec(vec![-1.2, 1.0]), 500, 1e-10).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn zero_iterations_returns_init() {
        let inputs = DMatrix::from_fn(6, 4, |i, j| ((i + 1) * (j + 2)) as f64 * 0.1);
        let y = DVector::from_fn(6, |i, _| (i as f64).sin());
        let init = GpHyperparams::new(&[0.7, 1.1, 2.0, 0.3], 0.5, 0.05).unwrap();
        let opts = OptimizeOptions {
            max_iters: 0,
            ..Default::default()
        };
        let r = optimize_hyperparams(&inputs, &y, &init, &opts).unwrap();
        assert_eq!(r.hyper, init);
        assert_eq!(r.iterations, 0);
    }
}

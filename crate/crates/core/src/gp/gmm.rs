//! Training-subset selection with a diagonal Gaussian mixture.
//!
//! A k-component mixture is fitted to the GP input features by EM
//! (k-means++ seeding, fixed seed); the sample nearest to each component
//! mean in Euclidean distance becomes a training point.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::residuals::ResidualSample;
use crate::error::{Error, Result};

pub const EM_MAX_ITERS: usize = 100;
/// Convergence threshold on the mean per-sample log-likelihood.
pub const EM_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    /// `k × d` component means.
    pub means: DMatrix<f64>,
    /// `k × d` per-dimension variances.
    pub variances: DMatrix<f64>,
    /// Mean per-sample log-likelihood at the last EM iteration.
    pub log_likelihood: f64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..points.len())
        };
        let c = points[idx].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    centers
}

impl GaussianMixture {
    /// Fits a `k`-component diagonal mixture by EM.
    pub fn fit(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Self> {
        let n = points.len();
        if k == 0 || n < k {
            return Err(Error::InvalidParameter(format!("cannot fit {k} components to {n} points")));
        }
        let d = points[0].len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut global_mean = vec![0.0; d];
        for p in points {
            for j in 0..d {
                global_mean[j] += p[j] / n as f64;
            }
        }
        let mut global_var = vec![0.0; d];
        for p in points {
            for j in 0..d {
                global_var[j] += (p[j] - global_mean[j]).powi(2) / n as f64;
            }
        }
        let floor: Vec<f64> = global_var.iter().map(|v| 1e-6 * v + 1e-12).collect();

        let centers = kmeans_pp(points, k, &mut rng);
        let mut means = DMatrix::from_fn(k, d, |i, j| centers[i][j]);
        let mut variances = DMatrix::from_fn(k, d, |_, j| global_var[j].max(floor[j]));
        let mut weights = vec![1.0 / k as f64; k];

        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let mut resp = DMatrix::<f64>::zeros(n, k);
        let mut prev_ll = f64::NEG_INFINITY;
        let mut ll = f64::NEG_INFINITY;
        let mut iterations = 0;
        for it in 0..EM_MAX_ITERS {
            iterations = it + 1;
            // E-step
            let log_norm: Vec<f64> = (0..k)
                .map(|c| {
                    weights[c].max(1e-300).ln()
                        - 0.5 * (0..d).map(|j| ln2pi + variances[(c, j)].ln()).sum::<f64>()
                })
                .collect();
            let mut total = 0.0;
            for (i, p) in points.iter().enumerate() {
                let mut maxl = f64::NEG_INFINITY;
                for c in 0..k {
                    let mut q = 0.0;
                    for j in 0..d {
                        q += (p[j] - means[(c, j)]).powi(2) / variances[(c, j)];
                    }
                    let l = log_norm[c] - 0.5 * q;
                    resp[(i, c)] = l;
                    maxl = maxl.max(l);
                }
                let mut s = 0.0;
                for c in 0..k {
                    let e = (resp[(i, c)] - maxl).exp();
                    resp[(i, c)] = e;
                    s += e;
                }
                for c in 0..k {
                    resp[(i, c)] /= s;
                }
                total += maxl + s.ln();
            }
            ll = total / n as f64;

            // M-step
            for c in 0..k {
                let nk: f64 = resp.column(c).sum();
                if nk < 1e-10 {
                    weights[c] = 1e-10;
                    for j in 0..d {
                        variances[(c, j)] = global_var[j].max(floor[j]);
                    }
                    continue;
                }
                weights[c] = nk / n as f64;
                for j in 0..d {
                    let m = points.iter().enumerate().map(|(i, p)| resp[(i, c)] * p[j]).sum::<f64>() / nk;
                    means[(c, j)] = m;
                }
                for j in 0..d {
                    let v = points
                        .iter()
                        .enumerate()
                        .map(|(i, p)| resp[(i, c)] * (p[j] - means[(c, j)]).powi(2))
                        .sum::<f64>()
                        / nk;
                    variances[(c, j)] = v.max(floor[j]);
                }
            }
            if (ll - prev_ll).abs() < EM_TOL {
                break;
            }
            prev_ll = ll;
        }
        Ok(Self {
            weights,
            means,
            variances,
            log_likelihood: ll,
            iterations,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSelection {
    /// Indices into the input samples, in component order, without repeats.
    pub indices: Vec<usize>,
    /// Set when there were fewer distinct samples than clusters and every
    /// distinct sample was returned.
    pub fell_back: bool,
}

/// Picks at most `k_clusters` representative samples.
pub fn select_training_subset(samples: &[ResidualSample], k_clusters: usize, seed: u64) -> Result<SubsetSelection> {
    if k_clusters == 0 {
        return Err(Error::InvalidParameter("k_clusters must be positive".into()));
    }
    let mut distinct: Vec<usize> = Vec::new();
    {
        let mut seen: Vec<[u64; 4]> = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            let key = s.z.map(f64::to_bits);
            if !seen.contains(&key) {
                seen.push(key);
                distinct.push(i);
            }
        }
    }
    if distinct.len() <= k_clusters {
        return Ok(SubsetSelection {
            fell_back: distinct.len() < k_clusters,
            indices: distinct,
        });
    }
    let points: Vec<Vec<f64>> = samples.iter().map(|s| s.z.to_vec()).collect();
    let gmm = GaussianMixture::fit(&points, k_clusters, seed)?;
    let mut indices = Vec::with_capacity(k_clusters);
    for c in 0..k_clusters {
        let mean: Vec<f64> = gmm.means.row(c).iter().cloned().collect();
        let nearest = points
            .iter()
            .enumerate()
            .min_by(|a, b| sq_dist(a.1, &mean).total_cmp(&sq_dist(b.1, &mean)))
            .map(|(i, _)| i)
            .expect("non-empty sample set");
        if !indices.contains(&nearest) {
            indices.push(nearest);
        }
    }
    Ok(SubsetSelection {
        indices,
        fell_back: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(z: [f64; 4]) -> ResidualSample {
        ResidualSample { z, g_v: 0.0, g_omega: 0.0 }
    }

    #[test]
    fn single_cluster_picks_sample_nearest_mean() {
        let samples: Vec<_> = [[0.0, 0.0, 0.0, 0.0], [2.0, 0.0, 0.0, 0.0], [1.1, 0.1, 0.0, 0.0], [0.9, -0.1, 0.0, 0.0], [1.0, 0.0, 0.05, 0.0]]
            .into_iter()
            .map(sample)
            .collect();
        // mean = [1.0, 0.0, 0.01, 0.0]
        let sel = select_training_subset(&samples, 1, 3).unwrap();
        assert_eq!(sel.indices, vec![4]);
    }

    #[test]
    fn all_distinct_samples_when_k_matches() {
        let mut samples: Vec<_> = (0..6).map(|i| sample([i as f64, 0.0, 0.0, 0.0])).collect();
        samples.push(sample([2.0, 0.0, 0.0, 0.0]));
        let sel = select_training_subset(&samples, 6, 0).unwrap();
        assert_eq!(sel.indices, vec![0, 1, 2, 3, 4, 5]);
        assert!(!sel.fell_back);
        let sel = select_training_subset(&samples, 10, 0).unwrap();
        assert_eq!(sel.indices.len(), 6);
        assert!(sel.fell_back);
    }
}

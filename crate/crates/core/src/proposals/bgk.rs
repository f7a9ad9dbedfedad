//! Local Gaussian moments for the BGK proposal.

use nalgebra::DMatrix;
use rand::Rng;
use rand::RngCore;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{engine, log_sum_exp, KernelSumPlan, Profile};
use crate::points::Points;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Per-particle local mean and covariance, with the Cholesky factors used
/// for sampling and density evaluation.
#[derive(Clone, Debug)]
pub struct BgkMoments {
    /// Row `j` is `m_j`.
    pub means: Points,
    /// Row-major `d x d` covariance of particle `j`, jitter included.
    pub covariances: Vec<Vec<f64>>,
    chol: Vec<Vec<f64>>,
    log_norm: Vec<f64>,
}

/// Locality-weighted moments around every particle:
///
/// ```text
/// m_j = sum_i k_ji X_i / sum_i k_ji
/// S_j = sum_i k_ji (X_i - m_j)(X_i - m_j)^T / sum_i k_ji + jitter I
/// ```
///
/// with `k_ji = 1{|X_j - X_i| <= threshold}`; an infinite threshold weights
/// every particle equally.
pub fn bgk_moments(swarm: &Points, threshold: f64, jitter: f64, plan: &KernelSumPlan) -> Result<BgkMoments> {
    let n = swarm.len();
    let d = swarm.dim();
    // Moments are accumulated around the swarm mean for accuracy.
    let center = swarm.mean();
    let shifted = swarm.translated(&center.iter().map(|c| -c).collect::<Vec<_>>());
    let mut weight_sets: Vec<Vec<f64>> = Vec::with_capacity(1 + d + d * (d + 1) / 2);
    weight_sets.push(vec![1.0; n]);
    for a in 0..d {
        weight_sets.push(shifted.rows().map(|x| x[a]).collect());
    }
    for a in 0..d {
        for b in a..d {
            weight_sets.push(shifted.rows().map(|x| x[a] * x[b]).collect());
        }
    }
    let sums: Vec<Vec<f64>> = if threshold.is_infinite() {
        weight_sets.iter().map(|w| vec![w.iter().sum::<f64>(); n]).collect()
    } else {
        let prof = [Profile::Ball {
            r2: threshold * threshold,
            peak: 1.0,
        }];
        weight_sets
            .iter()
            .map(|w| engine(&shifted, &shifted, &prof, w, plan))
            .collect()
    };

    let mut means = Vec::with_capacity(n * d);
    let mut covariances = Vec::with_capacity(n);
    let mut chol = Vec::with_capacity(n);
    let mut log_norm = Vec::with_capacity(n);
    for j in 0..n {
        let mass = sums[0][j];
        let m: Vec<f64> = (0..d).map(|a| sums[1 + a][j] / mass).collect();
        let mut cov = vec![0.0; d * d];
        let mut k = 1 + d;
        for a in 0..d {
            for b in a..d {
                let c = sums[k][j] / mass - m[a] * m[b];
                cov[a * d + b] = c;
                cov[b * d + a] = c;
                k += 1;
            }
        }
        // Clip rounding noise so the matrix stays positive semidefinite.
        for a in 0..d {
            cov[a * d + a] = cov[a * d + a].max(0.0) + jitter;
        }
        let l = cholesky(&cov, d).ok_or_else(|| {
            Error::Numeric(format!("local covariance of particle {j} is not positive definite"))
        })?;
        let log_det: f64 = (0..d).map(|a| 2.0 * l[a * d + a].ln()).sum();
        log_norm.push(-0.5 * (d as f64 * LN_2PI + log_det));
        means.extend(m.iter().zip(&center).map(|(x, c)| x + c));
        covariances.push(cov);
        chol.push(l);
    }
    Ok(BgkMoments {
        means: Points::new(d, means),
        covariances,
        chol,
        log_norm,
    })
}

fn cholesky(cov: &[f64], d: usize) -> Option<Vec<f64>> {
    let m = DMatrix::from_row_slice(d, d, cov);
    let c = m.cholesky()?;
    let l = c.l();
    let mut out = vec![0.0; d * d];
    for a in 0..d {
        for b in 0..=a {
            out[a * d + b] = l[(a, b)];
        }
    }
    Some(out)
}

impl BgkMoments {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// `ln N(y; m_j, S_j)`.
    pub fn log_component(&self, j: usize, y: &[f64]) -> f64 {
        let d = y.len();
        let l = &self.chol[j];
        let m = self.means.row(j);
        // Forward substitution L z = y - m.
        let mut z = [0.0f64; 16];
        let mut zv;
        let z: &mut [f64] = if d <= 16 {
            &mut z[..d]
        } else {
            zv = vec![0.0; d];
            &mut zv
        };
        let mut q = 0.0;
        for a in 0..d {
            let mut s = y[a] - m[a];
            for b in 0..a {
                s -= l[a * d + b] * z[b];
            }
            z[a] = s / l[a * d + a];
            q += z[a] * z[a];
        }
        self.log_norm[j] - 0.5 * q
    }

    /// `ln (1/N) sum_j N(y; m_j, S_j)`.
    pub fn log_density(&self, y: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.len()).map(|j| self.log_component(j, y)).collect();
        log_sum_exp(&terms) - (self.len() as f64).ln()
    }

    pub fn log_density_many(&self, ys: &Points) -> Vec<f64> {
        let rows: Vec<&[f64]> = ys.rows().collect();
        rows.par_iter().map(|y| self.log_density(y)).collect()
    }

    /// Draws `j` uniformly, then `y ~ N(m_j, S_j)`.
    pub fn sample(&self, rng: &mut dyn RngCore, y: &mut [f64]) {
        let d = y.len();
        let j = rng.random_range(0..self.len());
        let mut z = vec![0.0; d];
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let l = &self.chol[j];
        let m = self.means.row(j);
        for a in 0..d {
            let mut s = m[a];
            for b in 0..=a {
                s += l[a * d + b] * z[b];
            }
            y[a] = s;
        }
    }
}

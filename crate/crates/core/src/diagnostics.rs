//! Energy distance, iid baselines and importance-sampling estimates.

pub mod stats;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{log_sum_exp, pairwise_distance_sum, KernelSumPlan};
use crate::points::Points;
use crate::rng::derive_seed;
use crate::rng::Stream;
use crate::targets::{rejection_sample, Target};

/// Energy distance (V-statistic):
///
/// ```text
/// E = 2/(nm) sum |X_i - Y_j| - 1/n^2 sum |X_i - X_j| - 1/m^2 sum |Y_i - Y_j|
/// ```
///
/// The two samples are put in a canonical order first, so the result is
/// exactly symmetric in its arguments.
pub fn energy_distance(x: &Points, y: &Points, plan: &KernelSumPlan) -> f64 {
    let key = |p: &Points| (p.len(), p.dim());
    let swap = match key(x).cmp(&key(y)) {
        std::cmp::Ordering::Equal => x
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .is_some_and(|o| o.is_gt()),
        o => o.is_gt(),
    };
    let (x, y) = if swap { (y, x) } else { (x, y) };
    let (n, m) = (x.len() as f64, y.len() as f64);
    let xy = pairwise_distance_sum(x, y, plan);
    let xx = pairwise_distance_sum(x, x, plan);
    let yy = pairwise_distance_sum(y, y, plan);
    2.0 * xy / (n * m) - xx / (n * n) - yy / (m * m)
}

/// A fixed reference sample with its self-distance term cached.
#[derive(Clone, Debug)]
pub struct EnergyReference {
    sample: Points,
    self_term: f64,
    plan: KernelSumPlan,
}

impl EnergyReference {
    pub fn new(sample: Points, plan: KernelSumPlan) -> Self {
        let m = sample.len() as f64;
        let self_term = pairwise_distance_sum(&sample, &sample, &plan) / (m * m);
        Self { sample, self_term, plan }
    }

    pub fn sample(&self) -> &Points {
        &self.sample
    }

    /// Energy distance from `x` to the reference sample.
    pub fn distance(&self, x: &Points) -> f64 {
        let (n, m) = (x.len() as f64, self.sample.len() as f64);
        let xy = pairwise_distance_sum(x, &self.sample, &self.plan);
        let xx = pairwise_distance_sum(x, x, &self.plan);
        2.0 * xy / (n * m) - xx / (n * n) - self.self_term
    }
}

/// Energy distance between pairs of independent exact samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub n: usize,
    pub mean: f64,
    pub q05: f64,
    pub q95: f64,
    pub values: Vec<f64>,
}

/// `reps` independent pairs of rejection samples of size `n`.
pub fn iid_baseline<T: Target + ?Sized>(target: &T, n: usize, reps: usize, seed: u64) -> Result<Baseline> {
    if reps == 0 {
        return Err(Error::config("baseline.reps", "must be at least 1"));
    }
    let plan = KernelSumPlan::default();
    let values = (0..reps)
        .map(|r| {
            let a = rejection_sample(target, n, derive_seed(seed, Stream::Baseline, &[r as u64, 0]))?;
            let b = rejection_sample(target, n, derive_seed(seed, Stream::Baseline, &[r as u64, 1]))?;
            Ok(energy_distance(&a, &b, &plan))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(Baseline {
        n,
        mean: values.iter().sum::<f64>() / reps as f64,
        q05: stats::quantile(&sorted, 0.05),
        q95: stats::quantile(&sorted, 0.95),
        values,
    })
}

/// Importance-sampling summary of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsEstimate {
    /// `ln Z^ = ln (1/N) sum W_i`.
    pub log_z: f64,
    /// `1 / sum Wbar_i^2`.
    pub ess: f64,
    /// `sum Wbar_i phi(Y_i)`, when an observable was given.
    pub expectation: Option<f64>,
}

/// Normalizing-constant estimate and ESS from log weights.
pub fn log_z_and_ess(log_weights: &[f64]) -> Result<(f64, f64)> {
    let total = log_sum_exp(log_weights);
    if total == f64::NEG_INFINITY || log_weights.is_empty() {
        return Err(Error::DegenerateWeights);
    }
    if total.is_nan() || total == f64::INFINITY {
        return Err(Error::Numeric("importance weights are not finite".into()));
    }
    let sq: f64 = log_weights.iter().map(|l| (2.0 * (l - total)).exp()).sum();
    let n = log_weights.len() as f64;
    Ok((total - n.ln(), (1.0 / sq).clamp(1.0, n)))
}

/// Self-normalized importance estimates from one step's proposals `Y_i`
/// and log weights `ln W_i`.
pub fn is_estimates(
    proposals: &Points,
    log_weights: &[f64],
    phi: Option<&(dyn Fn(&[f64]) -> f64 + Sync)>,
) -> Result<IsEstimate> {
    let (log_z, ess) = log_z_and_ess(log_weights)?;
    let expectation = phi.map(|f| {
        let total = log_sum_exp(log_weights);
        proposals
            .rows()
            .zip(log_weights)
            .filter(|(_, l)| **l > f64::NEG_INFINITY)
            .map(|(y, l)| (l - total).exp() * f(y))
            .sum()
    });
    Ok(IsEstimate { log_z, ess, expectation })
}

/// Mean squared error of `ln Z^` over runs.
pub fn mse_logz(log_z_estimates: &[f64], true_log_z: f64) -> f64 {
    let n = log_z_estimates.len().max(1) as f64;
    log_z_estimates.iter().map(|l| (l - true_log_z).powi(2)).sum::<f64>() / n
}

/// `ln` of the average of `Z^` over several iterations.
pub fn pooled_log_z(log_z: &[f64]) -> f64 {
    log_sum_exp(log_z) - (log_z.len() as f64).ln()
}

/// Fraction of points within `radius` of `center`.
pub fn fraction_near(points: &Points, center: &[f64], radius: f64) -> f64 {
    let rows: Vec<&[f64]> = points.rows().collect();
    let hits = rows
        .par_iter()
        .filter(|x| crate::points::sq_dist(x, center) <= radius * radius)
        .count();
    hits as f64 / points.len().max(1) as f64
}

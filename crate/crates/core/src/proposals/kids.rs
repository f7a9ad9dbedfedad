//! Richardson-Lucy deconvolution weights for the KIDS proposal.

use log::warn;

use crate::kernels::{kernel_sum_with, InteractionKernel, KernelSumPlan};
use crate::points::Points;

use super::self_normalize;

/// Particle weights of the deconvolved empirical measure.
#[derive(Clone, Debug, PartialEq)]
pub struct DeconvolutionWeights {
    pub weights: Vec<f64>,
    pub rl_iterations_used: usize,
}

/// `-sum_j pi~(X_j) ln sum_k w_k K(X_j - X_k)`, the swarm discretization of
/// the deconvolution objective (up to a constant). Terms with a vanishing
/// mixture density are skipped.
pub fn kids_surrogate(swarm: &Points, kernel: &InteractionKernel, log_pi: &[f64], w: &[f64], plan: &KernelSumPlan) -> f64 {
    let pi = self_normalize(log_pi);
    let kw = kernel_sum_with(swarm, swarm, kernel, w, plan);
    pi.iter()
        .zip(&kw)
        .filter(|(_, d)| **d > 0.0)
        .map(|(p, d)| -p * d.ln())
        .sum()
}

/// `S` Richardson-Lucy iterations from uniform weights:
///
/// ```text
/// w_i <- w_i sum_j pi~(X_j) K(X_i - X_j) / (K w)(X_j),   then normalize.
/// ```
///
/// Each iteration costs two kernel sums over the swarm, and the surrogate
/// [`kids_surrogate`] never increases.
pub fn kids_weights(
    swarm: &Points,
    kernel: &InteractionKernel,
    log_pi: &[f64],
    iters: usize,
    plan: &KernelSumPlan,
) -> DeconvolutionWeights {
    let n = swarm.len();
    let mut w = vec![1.0 / n as f64; n];
    if n == 1 {
        return DeconvolutionWeights {
            weights: w,
            rl_iterations_used: iters,
        };
    }
    let pi = self_normalize(log_pi);
    let mut skipped = 0usize;
    for _ in 0..iters {
        let kw = kernel_sum_with(swarm, swarm, kernel, &w, plan);
        let ratio: Vec<f64> = pi
            .iter()
            .zip(&kw)
            .map(|(p, d)| {
                if *d > 0.0 {
                    p / d
                } else {
                    skipped += 1;
                    0.0
                }
            })
            .collect();
        let back = kernel_sum_with(swarm, swarm, kernel, &ratio, plan);
        let mut z = 0.0;
        for (wi, b) in w.iter_mut().zip(&back) {
            *wi *= b;
            z += *wi;
        }
        if !(z > 0.0 && z.is_finite()) {
            warn!("Richardson-Lucy weights collapsed; keeping uniform weights");
            w = vec![1.0 / n as f64; n];
            break;
        }
        w.iter_mut().for_each(|wi| *wi /= z);
    }
    if skipped > 0 {
        warn!("{skipped} Richardson-Lucy terms skipped because the weighted density vanished");
    }
    DeconvolutionWeights {
        weights: w,
        rl_iterations_used: iters,
    }
}

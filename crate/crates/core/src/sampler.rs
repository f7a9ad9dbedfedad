//! The collective Monte Carlo step: acceptance ratio, acceptance function
//! and one synchronized update of the whole swarm.
//!
//! A step freezes the proposal against the current swarm, lets every
//! particle draw `Y_i ~ Theta(.|X_i)` independently, and accepts with
//! probability `h(alpha(X_i, Y_i))` where
//!
//! ```text
//! ln alpha(x, y) = [ln pi(y) - ln pi(x)] - [ln Theta(y|x) - ln Theta(x|y)]
//! ```
//!
//! All arithmetic stays in log space; `alpha` is only exponentiated inside
//! the acceptance function.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::Points;
use crate::rng::{particle_rng, stream_rng, Stream};
use crate::targets::{BoxSupport, Target};

/// Acceptance function `h: [0, inf) -> [0, 1]`, evaluated in log space.
#[derive(Clone, Default)]
pub enum AcceptanceFunction {
    /// `h(u) = min(1, u)`.
    #[default]
    Metropolis,
    /// `h(u) = u / (1 + u)`.
    Barker,
    /// `h = 0`: rejects everything. Not a valid acceptance function
    /// (`h(1) = 0`), kept for tests.
    Zero,
    /// User-supplied `ln h(e^l)` as a function of `l = ln u`.
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for AcceptanceFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Metropolis => "Metropolis",
            Self::Barker => "Barker",
            Self::Zero => "Zero",
            Self::Custom(_) => "Custom",
        })
    }
}

impl AcceptanceFunction {
    /// `ln h(u)` from `ln u`; `-inf` maps to `ln h(0)`.
    #[inline]
    pub fn log_h(&self, log_u: f64) -> f64 {
        match self {
            Self::Metropolis => log_u.min(0.0),
            Self::Barker => {
                // ln(u / (1 + u)) = -ln(1 + 1/u)
                if log_u == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else if log_u > 0.0 {
                    -(-log_u).exp().ln_1p()
                } else {
                    log_u - log_u.exp().ln_1p()
                }
            }
            Self::Zero => f64::NEG_INFINITY,
            Self::Custom(f) => f(log_u),
        }
    }

    /// `h(u)` in linear space.
    pub fn h(&self, u: f64) -> f64 {
        self.log_h(u.ln()).exp()
    }
}

/// `N` particles in `d` dimensions with their stable identities and
/// iteration counter. The random stream of particle `id` at iteration `t`
/// is derived from `(seed, t, id)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleSwarm {
    positions: Points,
    ids: Vec<u64>,
    iteration: u64,
    seed: u64,
}

impl ParticleSwarm {
    /// Swarm with identities `0..N` at iteration 0.
    pub fn new(positions: Points, seed: u64) -> Self {
        let ids = (0..positions.len() as u64).collect();
        Self {
            positions,
            ids,
            iteration: 0,
            seed,
        }
    }

    pub fn from_parts(positions: Points, ids: Vec<u64>, iteration: u64, seed: u64) -> Self {
        assert_eq!(positions.len(), ids.len(), "one id per particle");
        Self {
            positions,
            ids,
            iteration,
            seed,
        }
    }

    pub fn positions(&self) -> &Points {
        &self.positions
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.positions.dim()
    }

    /// Same particles listed in a different order (`order[k]` is the old
    /// index of new slot `k`).
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            positions: self.positions.permuted(order),
            ids: order.iter().map(|&i| self.ids[i]).collect(),
            iteration: self.iteration,
            seed: self.seed,
        }
    }

    /// Slot indices sorted by particle id.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&i| self.ids[i]);
        order
    }

    /// Positions listed in increasing id order.
    pub fn canonical_positions(&self) -> Points {
        self.positions.permuted(&self.canonical_order())
    }
}

/// Initial placement of the particles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `X_0 = lower + (0.9 + 0.1 U) (upper - lower)`, `U ~ Uniform([0,1]^d)`:
    /// all particles start in the upper corner of the box.
    #[default]
    Corner,
    /// Uniform over the support box.
    Uniform,
}

pub fn initialize_swarm(n: usize, support: &BoxSupport, seed: u64, scheme: InitScheme) -> ParticleSwarm {
    assert!(n >= 1, "need at least one particle");
    let d = support.dim();
    let mut data = vec![0.0; n * d];
    data.par_chunks_mut(d).enumerate().for_each(|(i, x)| {
        let mut rng = stream_rng(seed, Stream::Init, &[i as u64]);
        match scheme {
            InitScheme::Corner => {
                for (a, xa) in x.iter_mut().enumerate() {
                    let (l, u) = (support.lower[a], support.upper[a]);
                    *xa = l + (0.9 + 0.1 * rng.random::<f64>()) * (u - l);
                }
            }
            InitScheme::Uniform => support.sample_uniform(&mut rng, x),
        }
    });
    ParticleSwarm::new(Points::new(d, data), seed)
}

/// A proposal distribution frozen against one swarm.
pub trait Proposal: Sync {
    fn dim(&self) -> usize;

    /// Draws `y ~ Theta(.|x)` into `y`. Returns the mixture component used,
    /// or `None` for a draw from the exploration component.
    fn sample(&self, x: &[f64], rng: &mut dyn rand::RngCore, y: &mut [f64]) -> Option<usize>;

    /// `ln Theta(y|x)`.
    fn log_density(&self, y: &[f64], x: &[f64]) -> f64;

    /// `ln Theta(y_i|x_i)` for every row. Implementations override this with
    /// batched kernel sums.
    fn log_density_pairs(&self, ys: &Points, xs: &Points) -> Vec<f64> {
        ys.rows()
            .zip(xs.rows())
            .collect::<Vec<_>>()
            .par_iter()
            .map(|(y, x)| self.log_density(y, x))
            .collect()
    }
}

/// Combines the four log terms of the acceptance ratio.
///
/// `-inf` when `y` is outside the support or the reverse move is impossible.
/// A forward density that is not finite, or any NaN, is a broken proposal.
pub fn combine_log_ratio(log_pi_x: f64, log_pi_y: f64, log_fwd: f64, log_rev: f64) -> Result<f64> {
    if log_pi_y == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    if !log_fwd.is_finite() {
        return Err(Error::BrokenProposal {
            value: log_fwd,
            context: "forward density ln Theta(y|x)".into(),
        });
    }
    if log_rev.is_nan() || log_rev == f64::INFINITY {
        return Err(Error::BrokenProposal {
            value: log_rev,
            context: "reverse density ln Theta(x|y)".into(),
        });
    }
    if log_pi_y.is_nan() || log_pi_x.is_nan() {
        return Err(Error::Numeric("target log-density is NaN".into()));
    }
    if log_rev == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    Ok((log_pi_y - log_pi_x) - (log_fwd - log_rev))
}

/// `ln alpha(x, y)` for one pair evaluated against a frozen proposal.
pub fn log_acceptance_ratio<P: Proposal + ?Sized, T: Target + ?Sized>(
    x: &[f64],
    y: &[f64],
    proposal: &P,
    target: &T,
) -> Result<f64> {
    let lpy = target.log_density(y);
    if lpy == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    combine_log_ratio(
        target.log_density(x),
        lpy,
        proposal.log_density(y, x),
        proposal.log_density(x, y),
    )
}

/// `ln[pi(x) Theta(y|x) h(alpha(x, y))]`, the probability flux from `x` to
/// `y`. Zero-density cases are resolved without forming `0 * inf`.
pub fn log_flux<P: Proposal + ?Sized, T: Target + ?Sized>(
    x: &[f64],
    y: &[f64],
    proposal: &P,
    target: &T,
    h: &AcceptanceFunction,
) -> f64 {
    let lpx = target.log_density(x);
    let lpy = target.log_density(y);
    let lf = proposal.log_density(y, x);
    let lr = proposal.log_density(x, y);
    let a = lpx + lf;
    let b = lpy + lr;
    if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    a + h.log_h(b - a)
}

/// Per-particle record of one step, in swarm slot order.
#[derive(Clone, Debug)]
pub struct StepTrace {
    /// Proposed points `Y_i`.
    pub proposals: Points,
    /// `ln W_i = ln pi(Y_i) - ln Theta(Y_i|X_i)`.
    pub log_weights: Vec<f64>,
    pub accepted: Vec<bool>,
    /// Mixture component of each draw (`None`: exploration).
    pub components: Vec<Option<usize>>,
    pub log_alpha: Vec<f64>,
}

impl StepTrace {
    pub fn acceptance_rate(&self) -> f64 {
        let n = self.accepted.len();
        if n == 0 {
            return 0.0;
        }
        self.accepted.iter().filter(|a| **a).count() as f64 / n as f64
    }
}

/// One synchronized update of the swarm against a proposal already frozen
/// on it. Every particle reads the same frozen state; the result does not
/// depend on particle order or worker count.
pub fn cmc_step<P: Proposal + ?Sized, T: Target + ?Sized>(
    swarm: &ParticleSwarm,
    proposal: &P,
    target: &T,
    h: &AcceptanceFunction,
) -> Result<(ParticleSwarm, StepTrace)> {
    let n = swarm.len();
    let d = swarm.dim();
    let t = swarm.iteration();
    let xs = swarm.positions();

    let mut ys = vec![0.0; n * d];
    let draws: Vec<(Option<usize>, f64)> = ys
        .par_chunks_mut(d)
        .enumerate()
        .map(|(i, y)| {
            let mut rng = particle_rng(swarm.seed(), t, swarm.ids()[i]);
            let c = proposal.sample(xs.row(i), &mut rng, y);
            let u: f64 = 1.0 - rng.random::<f64>();
            (c, u.ln())
        })
        .collect();
    let ys = Points::new(d, ys);
    if !ys.all_finite() {
        let particle = ys.rows().position(|r| r.iter().any(|v| !v.is_finite())).unwrap_or(0);
        return Err(Error::NonFinitePosition {
            iteration: t + 1,
            particle,
        });
    }

    let log_fwd = proposal.log_density_pairs(&ys, xs);
    let log_rev = proposal.log_density_pairs(xs, &ys);

    let decided: Vec<Result<(f64, f64, bool)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let lpy = target.log_density(ys.row(i));
            let lpx = target.log_density(xs.row(i));
            let la = combine_log_ratio(lpx, lpy, log_fwd[i], log_rev[i])?;
            let accept = draws[i].1 <= h.log_h(la);
            let lw = if lpy == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                lpy - log_fwd[i]
            };
            Ok((la, lw, accept))
        })
        .collect();

    let mut next = xs.clone();
    let mut log_alpha = Vec::with_capacity(n);
    let mut log_weights = Vec::with_capacity(n);
    let mut accepted = Vec::with_capacity(n);
    for (i, r) in decided.into_iter().enumerate() {
        let (la, lw, acc) = r?;
        if acc {
            next.row_mut(i).copy_from_slice(ys.row(i));
        }
        log_alpha.push(la);
        log_weights.push(lw);
        accepted.push(acc);
    }

    let out = ParticleSwarm {
        positions: next,
        ids: swarm.ids.clone(),
        iteration: t + 1,
        seed: swarm.seed,
    };
    let trace = StepTrace {
        proposals: ys,
        log_weights,
        accepted,
        components: draws.into_iter().map(|(c, _)| c).collect(),
        log_alpha,
    };
    Ok((out, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metropolis_and_barker_identity() {
        for h in [AcceptanceFunction::Metropolis, AcceptanceFunction::Barker] {
            for &u in &[1e-3, 0.2, 1.0, 3.0, 999.0] {
                let lhs = u * h.h(1.0 / u);
                assert!((lhs - h.h(u)).abs() <= 1e-12, "{h:?} u={u}");
            }
            assert!(h.h(1.0) > 0.0);
        }
        assert_eq!(AcceptanceFunction::Barker.h(1.0), 0.5);
        assert_eq!(AcceptanceFunction::Metropolis.log_h(f64::NEG_INFINITY), f64::NEG_INFINITY);
    }

    #[test]
    fn out_of_support_gives_neg_infinity() {
        assert_eq!(combine_log_ratio(0.0, f64::NEG_INFINITY, 1.0, 1.0).unwrap(), f64::NEG_INFINITY);
        assert!(combine_log_ratio(0.0, 0.0, f64::NEG_INFINITY, 1.0).is_err());
        assert!(combine_log_ratio(0.0, 0.0, 1.0, f64::NAN).is_err());
        assert_eq!(combine_log_ratio(0.0, 0.7, 0.3, 0.3).unwrap(), 0.7);
    }

    #[test]
    fn corner_init_lies_in_corner() {
        let s = initialize_swarm(500, &BoxSupport::unit(2), 3, InitScheme::Corner);
        assert!(s.positions().as_slice().iter().all(|x| (0.9..=1.0).contains(x)));
        let one = initialize_swarm(1, &BoxSupport::unit(3), 3, InitScheme::Uniform);
        assert!(BoxSupport::unit(3).contains(one.positions().row(0)));
    }

    #[test]
    fn canonical_order_undoes_permutation() {
        let s = initialize_swarm(6, &BoxSupport::unit(2), 1, InitScheme::Uniform);
        let p = s.permuted(&[3, 1, 5, 0, 2, 4]);
        assert_eq!(p.canonical_positions(), s.positions().clone());
    }
}

//! Collective proposal families.
//!
//! | family    | draw                                   | density `Theta(y|x)`                         |
//! |-----------|----------------------------------------|----------------------------------------------|
//! | `pmh`     | `y = x + e`                            | `K(y - x)`                                   |
//! | `vanilla` | `y = X_j + e`, `j` uniform             | `(1/N) sum_j K(y - X_j)`                     |
//! | `moka`    | kernel `p ~ a`, then as vanilla        | `sum_p a_p (K_p * mu)(y)`                    |
//! | `kids`    | `j ~ w`, then `y = X_j + e`            | `sum_j w_j K(y - X_j)`                       |
//! | `bgk`     | `j` uniform, `y ~ N(m_j, S_j)`         | `(1/N) sum_j N(y; m_j, S_j)`                 |
//!
//! Any family can be wrapped with an exploration component: with probability
//! `prob` the particle instead draws `y = x + N(0, std^2 I)`. The wrapper's
//! density enters both directions of the acceptance ratio.
//!
//! Ball kernels make the density vanish away from the swarm, outside the
//! positivity assumption of the convergence theory; they are supported
//! because they are the fastest choice in practice.

mod bgk;
mod kids;
mod moka;

pub use bgk::{bgk_moments, BgkMoments};
pub use kids::{kids_surrogate, kids_weights, DeconvolutionWeights};
pub use moka::{markov_objective, moka_weights_adaptive, moka_weights_markov, normalized_kernel_columns};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{kernel_sums_many, log_add_weighted, log_kernel_sum, log_sum_exp, InteractionKernel, KernelSumPlan};
use crate::points::Points;
use crate::sampler::{ParticleSwarm, Proposal, StepTrace};
use crate::targets::Target;

/// How MoKA chooses its mixture weights each iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Fit the mixture to the target on the swarm (L1 objective).
    #[default]
    Markov,
    /// Geometric mean of the previous iteration's acceptance ratios.
    Adaptive,
}

/// A proposal family, before it is frozen on a swarm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ProposalFamily {
    Pmh {
        kernel: InteractionKernel,
    },
    Vanilla {
        kernel: InteractionKernel,
    },
    Moka {
        kernels: Vec<InteractionKernel>,
        weight_mode: WeightMode,
    },
    Kids {
        kernel: InteractionKernel,
        rl_iters: usize,
    },
    Bgk {
        /// Locality ball radius; `inf` weights all particles equally.
        threshold: f64,
    },
}

impl ProposalFamily {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Pmh { .. } => "pmh",
            Self::Vanilla { .. } => "vanilla",
            Self::Moka { .. } => "moka",
            Self::Kids { .. } => "kids",
            Self::Bgk { .. } => "bgk",
        }
    }

    pub fn n_kernels(&self) -> usize {
        match self {
            Self::Moka { kernels, .. } => kernels.len(),
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |k: &InteractionKernel| {
            if k.is_valid() {
                Ok(())
            } else {
                Err(Error::config("proposal.kernels", format!("kernel scale must be finite and positive, got {}", k.scale())))
            }
        };
        match self {
            Self::Pmh { kernel } | Self::Vanilla { kernel } | Self::Kids { kernel, .. } => check(kernel),
            Self::Moka { kernels, .. } => {
                if kernels.is_empty() {
                    return Err(Error::config("proposal.radii", "moka needs at least one kernel"));
                }
                kernels.iter().try_for_each(check)
            }
            Self::Bgk { threshold } => {
                if *threshold > 0.0 {
                    Ok(())
                } else {
                    Err(Error::config("proposal.bgk_threshold", "must be positive"))
                }
            }
        }
    }
}

/// Exploration component: with probability `prob`, `y = x + N(0, std^2 I)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exploration {
    pub prob: f64,
    pub std: f64,
}

impl Exploration {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.prob) {
            return Err(Error::config("proposal.exploration.prob", "must lie in [0, 1]"));
        }
        if !(self.std > 0.0 && self.std.is_finite()) {
            return Err(Error::config("proposal.exploration.std", "must be positive"));
        }
        Ok(())
    }

    fn kernel(&self) -> InteractionKernel {
        InteractionKernel::gaussian(self.std)
    }
}

/// Swarm-dependent state of a family, refreshed once per iteration.
#[derive(Clone, Debug)]
enum Body {
    Pmh(InteractionKernel),
    /// Vanilla, MoKA and KIDS: `sum_p a_p sum_j w_j K_p(y - X_j)`.
    Mixture {
        kernels: Vec<InteractionKernel>,
        alphas: Vec<f64>,
        /// Particle weights; `None` is uniform.
        particle_weights: Option<Vec<f64>>,
        kernel_pick: Option<WeightedIndex<f64>>,
        particle_pick: Option<WeightedIndex<f64>>,
    },
    Bgk(BgkMoments),
}

/// A proposal frozen on one swarm: all particles of an iteration read the
/// same instance. The swarm is stored in increasing id order.
#[derive(Clone, Debug)]
pub struct FrozenProposal {
    swarm: Points,
    body: Body,
    exploration: Option<Exploration>,
    plan: KernelSumPlan,
}

impl FrozenProposal {
    pub fn pmh(dim: usize, kernel: InteractionKernel) -> Self {
        Self {
            swarm: Points::zeros(0, dim),
            body: Body::Pmh(kernel),
            exploration: None,
            plan: KernelSumPlan::default(),
        }
    }

    /// Mixture kernel-density proposal on `swarm`: kernel weights `alphas`
    /// and optional particle weights.
    pub fn mixture(
        swarm: Points,
        kernels: Vec<InteractionKernel>,
        alphas: Vec<f64>,
        particle_weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        assert_eq!(kernels.len(), alphas.len());
        let kernel_pick = if kernels.len() > 1 {
            Some(WeightedIndex::new(&alphas).map_err(|e| Error::Numeric(format!("mixture weights: {e}")))?)
        } else {
            None
        };
        let particle_pick = match &particle_weights {
            Some(w) => {
                assert_eq!(w.len(), swarm.len());
                Some(WeightedIndex::new(w).map_err(|e| Error::Numeric(format!("particle weights: {e}")))?)
            }
            None => None,
        };
        Ok(Self {
            swarm,
            body: Body::Mixture {
                kernels,
                alphas,
                particle_weights,
                kernel_pick,
                particle_pick,
            },
            exploration: None,
            plan: KernelSumPlan::default(),
        })
    }

    pub fn vanilla(swarm: Points, kernel: InteractionKernel) -> Self {
        Self::mixture(swarm, vec![kernel], vec![1.0], None).expect("single kernel")
    }

    pub fn bgk(moments: BgkMoments) -> Self {
        Self {
            swarm: moments.means.clone(),
            body: Body::Bgk(moments),
            exploration: None,
            plan: KernelSumPlan::default(),
        }
    }

    /// Adds an exploration component (a no-op for `prob = 0`).
    pub fn with_exploration(mut self, exploration: Option<Exploration>) -> Self {
        self.exploration = exploration.filter(|e| e.prob > 0.0);
        self
    }

    pub fn with_plan(mut self, plan: KernelSumPlan) -> Self {
        self.plan = plan;
        self
    }

    /// Kernel mixture weights (MoKA), if any.
    pub fn mixture_weights(&self) -> Option<&[f64]> {
        match &self.body {
            Body::Mixture { alphas, .. } => Some(alphas),
            _ => None,
        }
    }

    pub fn particle_weights(&self) -> Option<&[f64]> {
        match &self.body {
            Body::Mixture { particle_weights, .. } => particle_weights.as_deref(),
            _ => None,
        }
    }

    pub fn swarm(&self) -> &Points {
        &self.swarm
    }

    /// `ln Theta_base(y_i | x_i)` without the exploration component.
    fn base_log_density_pairs(&self, ys: &Points, xs: &Points) -> Vec<f64> {
        match &self.body {
            Body::Pmh(k) => ys
                .rows()
                .zip(xs.rows())
                .map(|(y, x)| {
                    let d2 = crate::points::sq_dist(y, x);
                    k.log_density_sq(d2, y.len())
                })
                .collect(),
            Body::Mixture {
                kernels,
                alphas,
                particle_weights,
                ..
            } => log_mixture_density(ys, &self.swarm, kernels, alphas, particle_weights.as_deref(), &self.plan),
            Body::Bgk(m) => m.log_density_many(ys),
        }
    }
}

/// `ln sum_p a_p sum_j w_j K_p(q - s_j)` for every query. Ball kernels share
/// one direct pass; Gaussian kernels use the streaming log-sum-exp path.
pub fn log_mixture_density(
    queries: &Points,
    sources: &Points,
    kernels: &[InteractionKernel],
    alphas: &[f64],
    weights: Option<&[f64]>,
    plan: &KernelSumPlan,
) -> Vec<f64> {
    let n = sources.len();
    let uniform;
    let w = match weights {
        Some(w) => w,
        None => {
            uniform = vec![1.0 / n as f64; n];
            &uniform
        }
    };
    let m = queries.len();
    let mut terms: Vec<Vec<f64>> = vec![Vec::with_capacity(kernels.len()); m];
    let balls: Vec<(usize, InteractionKernel)> = kernels
        .iter()
        .enumerate()
        .filter(|(p, k)| matches!(k, InteractionKernel::UniformBall { .. }) && alphas[*p] > 0.0)
        .map(|(p, k)| (p, *k))
        .collect();
    if !balls.is_empty() {
        let ks: Vec<InteractionKernel> = balls.iter().map(|(_, k)| *k).collect();
        let sums = kernel_sums_many(queries, sources, &ks, w, plan);
        for ((p, _), s) in balls.iter().zip(&sums) {
            let la = alphas[*p].ln();
            for (t, v) in terms.iter_mut().zip(s) {
                t.push(la + v.ln());
            }
        }
    }
    for (p, k) in kernels.iter().enumerate() {
        if matches!(k, InteractionKernel::Gaussian { .. }) && alphas[p] > 0.0 {
            let la = alphas[p].ln();
            let s = log_kernel_sum(queries, sources, k, w, plan);
            for (t, v) in terms.iter_mut().zip(&s) {
                t.push(la + v);
            }
        }
    }
    terms.iter().map(|t| log_sum_exp(t)).collect()
}

impl Proposal for FrozenProposal {
    fn dim(&self) -> usize {
        self.swarm.dim()
    }

    fn sample(&self, x: &[f64], rng: &mut dyn RngCore, y: &mut [f64]) -> Option<usize> {
        if let Some(e) = &self.exploration {
            if rng.random::<f64>() < e.prob {
                e.kernel().sample_around(x, rng, y);
                return None;
            }
        }
        match &self.body {
            Body::Pmh(k) => {
                k.sample_around(x, rng, y);
                Some(0)
            }
            Body::Mixture {
                kernels,
                kernel_pick,
                particle_pick,
                ..
            } => {
                let p = kernel_pick.as_ref().map_or(0, |d| d.sample(rng));
                let j = match particle_pick {
                    Some(d) => d.sample(rng),
                    None => rng.random_range(0..self.swarm.len()),
                };
                kernels[p].sample_around(self.swarm.row(j), rng, y);
                Some(p)
            }
            Body::Bgk(m) => {
                m.sample(rng, y);
                Some(0)
            }
        }
    }

    fn log_density(&self, y: &[f64], x: &[f64]) -> f64 {
        let d = y.len();
        self.log_density_pairs(&Points::new(d, y.to_vec()), &Points::new(d, x.to_vec()))[0]
    }

    fn log_density_pairs(&self, ys: &Points, xs: &Points) -> Vec<f64> {
        assert_eq!(ys.len(), xs.len());
        let base = self.base_log_density_pairs(ys, xs);
        match &self.exploration {
            None => base,
            Some(e) => {
                let k = e.kernel();
                base.iter()
                    .zip(ys.rows().zip(xs.rows()))
                    .map(|(lb, (y, x))| {
                        let le = k.log_density_sq(crate::points::sq_dist(y, x), y.len());
                        log_add_weighted(e.prob, le, 1.0 - e.prob, *lb)
                    })
                    .collect()
            }
        }
    }
}

/// A family plus its optional exploration wrapper.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalSpec {
    pub family: ProposalFamily,
    #[serde(default)]
    pub exploration: Option<Exploration>,
}

impl ProposalSpec {
    pub fn new(family: ProposalFamily) -> Self {
        Self {
            family,
            exploration: None,
        }
    }

    pub fn with_exploration(mut self, prob: f64, std: f64) -> Self {
        self.exploration = Some(Exploration { prob, std });
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        if let Some(e) = &self.exploration {
            e.validate()?;
        }
        Ok(())
    }
}

/// Default floor applied to adaptive mixture weights.
pub const ADAPTIVE_WEIGHT_FLOOR: f64 = 1e-3;

/// Builds the frozen proposal for each iteration and carries the adaptive
/// MoKA weights from one iteration to the next.
#[derive(Clone, Debug)]
pub struct ProposalState {
    spec: ProposalSpec,
    adaptive_weights: Option<Vec<f64>>,
    jitter: f64,
    plan: KernelSumPlan,
    adaptive_floor: f64,
}

impl ProposalState {
    /// `diameter` is the support diameter; the BGK covariance jitter is
    /// `1e-8 diameter^2`.
    pub fn new(spec: ProposalSpec, diameter: f64) -> Result<Self> {
        spec.validate()?;
        let adaptive_weights = match &spec.family {
            ProposalFamily::Moka {
                kernels,
                weight_mode: WeightMode::Adaptive,
            } => Some(vec![1.0 / kernels.len() as f64; kernels.len()]),
            _ => None,
        };
        Ok(Self {
            spec,
            adaptive_weights,
            jitter: 1e-8 * diameter * diameter,
            plan: KernelSumPlan::default(),
            adaptive_floor: ADAPTIVE_WEIGHT_FLOOR,
        })
    }

    pub fn with_plan(mut self, plan: KernelSumPlan) -> Self {
        self.plan = plan;
        self
    }

    pub fn spec(&self) -> &ProposalSpec {
        &self.spec
    }

    /// Refreshes the swarm-dependent state against `swarm`.
    pub fn freeze<T: Target + ?Sized>(&self, swarm: &ParticleSwarm, target: &T) -> Result<FrozenProposal> {
        let canon = swarm.canonical_positions();
        let d = canon.dim();
        let frozen = match &self.spec.family {
            ProposalFamily::Pmh { kernel } => FrozenProposal::pmh(d, *kernel),
            ProposalFamily::Vanilla { kernel } => FrozenProposal::vanilla(canon, *kernel),
            ProposalFamily::Moka { kernels, weight_mode } => {
                let alphas = match weight_mode {
                    WeightMode::Markov => {
                        let log_pi = log_target_on(target, &canon);
                        moka_weights_markov(&canon, kernels, &log_pi, &self.plan)
                    }
                    WeightMode::Adaptive => self.adaptive_weights.clone().expect("adaptive state"),
                };
                FrozenProposal::mixture(canon, kernels.clone(), alphas, None)?
            }
            ProposalFamily::Kids { kernel, rl_iters } => {
                let log_pi = log_target_on(target, &canon);
                let w = kids_weights(&canon, kernel, &log_pi, *rl_iters, &self.plan);
                FrozenProposal::mixture(canon, vec![*kernel], vec![1.0], Some(w.weights))?
            }
            ProposalFamily::Bgk { threshold } => {
                FrozenProposal::bgk(bgk_moments(&canon, *threshold, self.jitter, &self.plan)?)
            }
        };
        Ok(frozen.with_exploration(self.spec.exploration).with_plan(self.plan))
    }

    /// Feeds the outcome of a step back (adaptive MoKA only). `swarm` is the
    /// swarm the step started from, giving the particle ids.
    pub fn observe(&mut self, swarm: &ParticleSwarm, trace: &StepTrace) {
        if let Some(w) = self.adaptive_weights.as_mut() {
            let order = swarm.canonical_order();
            let comps: Vec<Option<usize>> = order.iter().map(|&i| trace.components[i]).collect();
            let la: Vec<f64> = order.iter().map(|&i| trace.log_alpha[i]).collect();
            *w = moka_weights_adaptive(w.len(), &comps, &la, self.adaptive_floor);
        }
    }

    pub fn current_adaptive_weights(&self) -> Option<&[f64]> {
        self.adaptive_weights.as_deref()
    }
}

fn log_target_on<T: Target + ?Sized>(target: &T, pts: &Points) -> Vec<f64> {
    let rows: Vec<&[f64]> = pts.rows().collect();
    rows.par_iter().map(|x| target.log_density(x)).collect()
}

/// Self-normalized target weights `pi(X_i) / sum_j pi(X_j)`.
pub(crate) fn self_normalize(log_pi: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(log_pi);
    if z == f64::NEG_INFINITY {
        return vec![1.0 / log_pi.len() as f64; log_pi.len()];
    }
    log_pi.iter().map(|l| (l - z).exp()).collect()
}

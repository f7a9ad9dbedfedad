//! Collective Monte Carlo: interacting-particle MCMC samplers whose proposal
//! is built from the empirical measure of the whole swarm.
//!
//! ```
//! use swarm_mc::prelude::*;
//!
//! let target = TargetSpec::from_id("banana3")?.build()?;
//! let spec = ProposalSpec::new(ProposalFamily::Vanilla {
//!     kernel: InteractionKernel::uniform_ball(0.1),
//! });
//! let mut state = ProposalState::new(spec, target.support().diameter())?;
//! let mut swarm = initialize_swarm(200, target.support(), 7, InitScheme::Corner);
//! for _ in 0..5 {
//!     let frozen = state.freeze(&swarm, &target)?;
//!     let (next, trace) = cmc_step(&swarm, &frozen, &target, &AcceptanceFunction::Metropolis)?;
//!     state.observe(&swarm, &trace);
//!     swarm = next;
//! }
//! assert_eq!(swarm.iteration(), 5);
//! # Ok::<(), swarm_mc::Error>(())
//! ```

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod kernels;
pub mod meanfield;
pub mod points;
pub mod proposals;
pub mod rng;
pub mod run;
pub mod sampler;
pub mod targets;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::config::{FamilyKind, KernelKind, ProposalConfig, RunConfig};
    pub use crate::diagnostics::{energy_distance, iid_baseline, is_estimates, EnergyReference};
    pub use crate::error::{Error, Result};
    pub use crate::kernels::{kernel_sum, log_kernel_density, InteractionKernel, KernelSumPlan};
    pub use crate::points::Points;
    pub use crate::proposals::{Exploration, FrozenProposal, ProposalFamily, ProposalSpec, ProposalState, WeightMode};
    pub use crate::run::{run_chain, RunOutput};
    pub use crate::sampler::{
        cmc_step, initialize_swarm, log_acceptance_ratio, AcceptanceFunction, InitScheme, ParticleSwarm, Proposal,
    };
    pub use crate::targets::{rejection_sample, BoxSupport, Target, TargetDensity, TargetSpec};
}

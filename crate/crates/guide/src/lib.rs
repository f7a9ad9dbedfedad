//! The guide in `book/` compiled as doc-tests, one module per chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/swarm-step.md")]
pub mod swarm_step {}
#[doc = include_str!("../../../book/src/proposals.md")]
pub mod proposals {}
#[doc = include_str!("../../../book/src/kernel-sums.md")]
pub mod kernel_sums {}
#[doc = include_str!("../../../book/src/targets.md")]
pub mod targets {}
#[doc = include_str!("../../../book/src/diagnostics.md")]
pub mod diagnostics {}
#[doc = include_str!("../../../book/src/meanfield.md")]
pub mod meanfield {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

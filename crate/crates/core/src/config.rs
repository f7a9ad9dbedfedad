//! JSON run configuration.
//!
//! ```json
//! {
//!   "target": "banana3",
//!   "proposal": {
//!     "family": "moka",
//!     "radii": [0.01, 0.03, 0.1, 0.3],
//!     "weight_mode": "markov",
//!     "exploration": { "prob": 0.01, "std": 0.3 }
//!   },
//!   "n_particles": 4000,
//!   "n_iterations": 80,
//!   "seed": 1,
//!   "diagnostics_every": 1
//! }
//! ```
//!
//! `target` is either an id string or an object `{"id": ..., <parameters>}`.
//! Kernels are given by `radii` (uniform balls unless `"kernel": "gaussian"`),
//! by a single `sigma` (Gaussian), or by an explicit `kernels` list.

use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::kernels::InteractionKernel;
use crate::proposals::{Exploration, ProposalFamily, ProposalSpec, WeightMode};
use crate::sampler::{AcceptanceFunction, InitScheme};
use crate::targets::TargetSpec;

/// Kernel shape used with `radii`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    #[default]
    UniformBall,
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Pmh,
    Vanilla,
    Moka,
    Kids,
    Bgk,
}

/// Default number of Richardson-Lucy iterations for KIDS.
pub const DEFAULT_KIDS_ITERS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalConfig {
    pub family: FamilyKind,
    #[serde(default)]
    pub kernel: KernelKind,
    #[serde(default)]
    pub radii: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernels: Option<Vec<InteractionKernel>>,
    #[serde(default)]
    pub weight_mode: WeightMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exploration: Option<Exploration>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kids_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bgk_threshold: Option<f64>,
}

impl ProposalConfig {
    pub fn new(family: FamilyKind) -> Self {
        Self {
            family,
            kernel: KernelKind::UniformBall,
            radii: Vec::new(),
            sigma: None,
            kernels: None,
            weight_mode: WeightMode::Markov,
            exploration: None,
            kids_iters: None,
            bgk_threshold: None,
        }
    }

    fn kernels(&self) -> Result<Vec<InteractionKernel>> {
        if let Some(k) = &self.kernels {
            return Ok(k.clone());
        }
        if !self.radii.is_empty() {
            if let Some(r) = self.radii.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
                return Err(Error::config("proposal.radii", format!("radii must be strictly positive, got {r}")));
            }
            return Ok(self
                .radii
                .iter()
                .map(|&r| match self.kernel {
                    KernelKind::UniformBall => InteractionKernel::uniform_ball(r),
                    KernelKind::Gaussian => InteractionKernel::gaussian(r),
                })
                .collect());
        }
        if let Some(s) = self.sigma {
            return Ok(vec![InteractionKernel::gaussian(s)]);
        }
        Err(Error::config("proposal.radii", "give radii, sigma or kernels"))
    }

    /// Resolves the configuration into a validated proposal specification.
    pub fn resolve(&self) -> Result<ProposalSpec> {
        let single = || -> Result<InteractionKernel> {
            let ks = self.kernels()?;
            if ks.len() != 1 {
                return Err(Error::config(
                    "proposal.radii",
                    format!("family {:?} takes exactly one kernel, got {}", self.family, ks.len()),
                ));
            }
            Ok(ks[0])
        };
        let family = match self.family {
            FamilyKind::Pmh => ProposalFamily::Pmh { kernel: single()? },
            FamilyKind::Vanilla => ProposalFamily::Vanilla { kernel: single()? },
            FamilyKind::Moka => ProposalFamily::Moka {
                kernels: self.kernels()?,
                weight_mode: self.weight_mode,
            },
            FamilyKind::Kids => ProposalFamily::Kids {
                kernel: single()?,
                rl_iters: self.kids_iters.unwrap_or(DEFAULT_KIDS_ITERS),
            },
            FamilyKind::Bgk => {
                let threshold = match self.bgk_threshold {
                    Some(t) => t,
                    None => match self.radii.as_slice() {
                        [r] => *r,
                        _ => return Err(Error::config("proposal.bgk_threshold", "required for the bgk family")),
                    },
                };
                ProposalFamily::Bgk { threshold }
            }
        };
        let spec = ProposalSpec {
            family,
            exploration: self.exploration,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Acceptance function selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptanceKind {
    #[default]
    Metropolis,
    Barker,
}

impl AcceptanceKind {
    pub fn function(self) -> AcceptanceFunction {
        match self {
            Self::Metropolis => AcceptanceFunction::Metropolis,
            Self::Barker => AcceptanceFunction::Barker,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(deserialize_with = "target_from_json")]
    pub target: TargetSpec,
    pub proposal: ProposalConfig,
    pub n_particles: usize,
    pub n_iterations: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub diagnostics_every: u64,
    #[serde(default)]
    pub init: InitScheme,
    /// Size of the reference rejection sample for the energy distance;
    /// defaults to `n_particles`, `0` disables the energy distance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_size: Option<usize>,
    #[serde(default)]
    pub acceptance: AcceptanceKind,
    /// Average `Z^` over the last `k` recorded iterations (off by default).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_tail_average: Option<usize>,
}

fn one() -> u64 {
    1
}

fn target_from_json<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<TargetSpec, D::Error> {
    use serde::de::Error as _;
    let v = serde_json::Value::deserialize(d)?;
    match v {
        serde_json::Value::String(id) => TargetSpec::from_id(&id).map_err(D::Error::custom),
        other => serde_json::from_value(other).map_err(D::Error::custom),
    }
}

impl RunConfig {
    pub fn new(target: TargetSpec, proposal: ProposalConfig, n_particles: usize, n_iterations: u64, seed: u64) -> Self {
        Self {
            target,
            proposal,
            n_particles,
            n_iterations,
            seed,
            diagnostics_every: 1,
            init: InitScheme::Corner,
            reference_size: None,
            acceptance: AcceptanceKind::Metropolis,
            z_tail_average: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_at(text, Path::new("<config>"))
    }

    fn from_json_at(text: &str, path: &Path) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_at(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::config("n_particles", "must be at least 1"));
        }
        if self.diagnostics_every == 0 {
            return Err(Error::config("diagnostics_every", "must be at least 1"));
        }
        self.proposal.resolve()?;
        Ok(())
    }

    pub fn reference_size(&self) -> usize {
        self.reference_size.unwrap_or(self.n_particles)
    }
}

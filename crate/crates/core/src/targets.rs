//! Target densities on axis-aligned boxes, the benchmark targets and an
//! exact rejection sampler for reference samples.
//!
//! Benchmark targets are mixtures clipped to the unit (hyper)cube:
//!
//! * `banana3`: three isotropic Gaussian bells and one banana component, a
//!   standard bivariate normal in coordinates warped by
//!   `u2 -> u2 + b (u1^2 - a^2)`. The exact parameters of the original
//!   benchmark are not published; the defaults below are a reconstruction
//!   with all four modes inside the unit square, mirror-symmetric about
//!   `x1 = 0.5`.
//! * `gauss8`: two equal-weight isotropic Gaussians in dimension 8 with means
//!   `1/2 -+ 1/(4 sqrt 8)` per coordinate (first coordinate flipped).
//! * `cauchy_mix`: two equal-weight product-form Cauchy components located at
//!   `(0.2, 0.8)` and `(0.8, 0.2)` with scale `0.01`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::log_sum_exp;
use crate::points::Points;
use crate::rng::{stream_rng, Stream};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Axis-aligned box `[lower, upper]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxSupport {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSupport {
    pub fn unit(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::config("support", "lower/upper must be nonempty and of equal length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::config("support", "need finite lower < upper on every axis"));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub fn ln_volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| (u - l).ln()).sum()
    }

    pub fn diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l) * (u - l))
            .sum::<f64>()
            .sqrt()
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for (o, (l, u)) in out.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *o = l + (u - l) * rng.random::<f64>();
        }
    }
}

/// Unnormalized target density `pi` on a compact box.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    fn support(&self) -> &BoxSupport;

    /// `ln pi(x)`; `-inf` exactly when `x` lies outside the support.
    fn log_density(&self, x: &[f64]) -> f64;

    /// `ln int pi`, when known (validation only, never used by samplers).
    fn known_log_normalizer(&self) -> Option<f64> {
        None
    }

    /// Points near which the density peaks; seeds the envelope search of the
    /// rejection sampler.
    fn mode_hints(&self) -> Vec<Vec<f64>> {
        Vec::new()
    }

    /// Whether `ln pi(x) >= threshold`. Targets may answer without the full
    /// evaluation when the outcome is clear.
    fn log_density_at_least(&self, x: &[f64], threshold: f64) -> bool {
        self.log_density(x) >= threshold
    }
}

/// One mixture component, normalized over `R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Component {
    /// Isotropic normal.
    Gaussian { mean: Vec<f64>, std: f64 },
    /// Product of independent Cauchy marginals.
    Cauchy { location: Vec<f64>, scale: f64 },
    /// Standard bivariate normal in warped coordinates
    /// `u1 = (x1 - c1)/s1`, `u2 = (x2 - c2)/s2 + b (u1^2 - a^2)`.
    Banana {
        center: [f64; 2],
        scale: [f64; 2],
        a: f64,
        b: f64,
    },
}

impl Component {
    fn dim(&self) -> usize {
        match self {
            Component::Gaussian { mean, .. } => mean.len(),
            Component::Cauchy { location, .. } => location.len(),
            Component::Banana { .. } => 2,
        }
    }

    #[inline]
    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.log_norm() + self.log_kernel(x)
    }

    /// The additive constant of [`Component::log_density`].
    fn log_norm(&self) -> f64 {
        match self {
            Component::Gaussian { mean, std } => -0.5 * mean.len() as f64 * (LN_2PI + 2.0 * std.ln()),
            Component::Cauchy { location, scale } => -(location.len() as f64) * (std::f64::consts::PI * scale).ln(),
            Component::Banana { scale, .. } => -(LN_2PI + scale[0].ln() + scale[1].ln()),
        }
    }

    /// `ln` density up to [`Component::log_norm`].
    #[inline]
    fn log_kernel(&self, x: &[f64]) -> f64 {
        match self {
            Component::Gaussian { mean, std } => {
                let d2: f64 = x.iter().zip(mean).map(|(a, m)| (a - m) * (a - m)).sum();
                -d2 / (2.0 * std * std)
            }
            Component::Cauchy { location, scale } => x
                .iter()
                .zip(location)
                .map(|(a, l)| {
                    let z = (a - l) / scale;
                    -(z * z).ln_1p()
                })
                .sum(),
            Component::Banana { center, scale, a, b } => {
                let u1 = (x[0] - center[0]) / scale[0];
                let u2 = (x[1] - center[1]) / scale[1] + b * (u1 * u1 - a * a);
                -0.5 * (u1 * u1 + u2 * u2)
            }
        }
    }

    /// Mass inside `support`, when available in closed form.
    fn box_mass(&self, support: &BoxSupport) -> Option<f64> {
        let axes = support.lower.iter().zip(&support.upper);
        match self {
            Component::Gaussian { mean, std } => Some(
                axes.zip(mean)
                    .map(|((l, u), m)| normal_cdf((u - m) / std) - normal_cdf((l - m) / std))
                    .product(),
            ),
            Component::Cauchy { location, scale } => Some(
                axes.zip(location)
                    .map(|((l, u), c)| ((u - c) / scale).atan() / std::f64::consts::PI - ((l - c) / scale).atan() / std::f64::consts::PI)
                    .product(),
            ),
            Component::Banana { .. } => None,
        }
    }

    fn mode(&self) -> Vec<f64> {
        match self {
            Component::Gaussian { mean, .. } => mean.clone(),
            Component::Cauchy { location, .. } => location.clone(),
            Component::Banana { center, scale, a, b } => {
                vec![center[0], center[1] + scale[1] * b * a * a]
            }
        }
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Weighted mixture (or flat density) restricted to a box.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetDensity {
    name: String,
    support: BoxSupport,
    body: Body,
    log_normalizer: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
enum Body {
    /// `ln pi = level` on the box.
    Flat { level: f64 },
    /// `offsets[k]` is the log weight plus the log normalizer of component `k`.
    Mixture {
        log_weights: Vec<f64>,
        offsets: Vec<f64>,
        components: Vec<Component>,
    },
}

impl TargetDensity {
    /// Constant density `exp(log_level)` on `support`.
    pub fn flat(support: BoxSupport, log_level: f64) -> Self {
        let log_normalizer = Some(log_level + support.ln_volume());
        Self {
            name: "uniform".into(),
            support,
            body: Body::Flat { level: log_level },
            log_normalizer,
        }
    }

    /// Mixture `sum_k w_k p_k(x)` clipped to `support`. Weights need not be
    /// normalized. The normalizer over the box is recorded when every
    /// component has a closed-form box mass, otherwise it is computed by
    /// midpoint quadrature for `d <= 2`.
    pub fn mixture(
        name: impl Into<String>,
        support: BoxSupport,
        weights: &[f64],
        components: Vec<Component>,
    ) -> Result<Self> {
        let d = support.dim();
        if components.is_empty() || weights.len() != components.len() {
            return Err(Error::config("target.components", "need one weight per component"));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::config("target.components.weight", "weights must be positive"));
        }
        for c in &components {
            if c.dim() != d {
                return Err(Error::config("target.components", format!("component dimension {} != {}", c.dim(), d)));
            }
            let ok = match c {
                Component::Gaussian { std, .. } => *std > 0.0,
                Component::Cauchy { scale, .. } => *scale > 0.0,
                Component::Banana { scale, .. } => scale[0] > 0.0 && scale[1] > 0.0,
            };
            if !ok {
                return Err(Error::config("target.components", "scales must be positive"));
            }
        }
        let mut t = Self {
            name: name.into(),
            support,
            body: Body::Mixture {
                log_weights: weights.iter().map(|w| w.ln()).collect(),
                offsets: weights.iter().zip(&components).map(|(w, c)| w.ln() + c.log_norm()).collect(),
                components,
            },
            log_normalizer: None,
        };
        t.log_normalizer = t.closed_form_log_normalizer().or_else(|| {
            (d <= 2).then(|| quadrature_log_normalizer(&t, if d == 1 { 1 << 16 } else { 512 }))
        });
        Ok(t)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Same density with a different recorded normalizer; used when a
    /// caller knows `ln Z` more precisely than the built-in quadrature.
    pub fn with_log_normalizer(mut self, ln_z: f64) -> Self {
        self.log_normalizer = Some(ln_z);
        self
    }

    fn closed_form_log_normalizer(&self) -> Option<f64> {
        match &self.body {
            Body::Flat { level } => Some(level + self.support.ln_volume()),
            Body::Mixture {
                log_weights, components, ..
            } => {
                let mut terms = Vec::with_capacity(components.len());
                for (lw, c) in log_weights.iter().zip(components) {
                    terms.push(lw + c.box_mass(&self.support)?.ln());
                }
                Some(log_sum_exp(&terms))
            }
        }
    }

    pub fn components(&self) -> &[Component] {
        match &self.body {
            Body::Flat { .. } => &[],
            Body::Mixture { components, .. } => components,
        }
    }
}

impl Target for TargetDensity {
    fn dim(&self) -> usize {
        self.support.dim()
    }

    fn support(&self) -> &BoxSupport {
        &self.support
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        if !self.support.contains(x) {
            return f64::NEG_INFINITY;
        }
        match &self.body {
            Body::Flat { level } => *level,
            Body::Mixture { offsets, components, .. } => {
                if components.len() == 1 {
                    return offsets[0] + components[0].log_kernel(x);
                }
                let mut buf = [0.0f64; 8];
                let mut heap;
                let terms: &mut [f64] = if components.len() <= buf.len() {
                    &mut buf[..components.len()]
                } else {
                    heap = vec![0.0; components.len()];
                    &mut heap
                };
                let mut top = 0;
                for (k, (o, c)) in offsets.iter().zip(components).enumerate() {
                    terms[k] = o + c.log_kernel(x);
                    if terms[k] > terms[top] {
                        top = k;
                    }
                }
                let m = terms[top];
                if m == f64::NEG_INFINITY {
                    return m;
                }
                let rest: f64 = terms
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != top)
                    .map(|(_, t)| (t - m).exp())
                    .sum();
                m + rest.ln_1p()
            }
        }
    }

    fn known_log_normalizer(&self) -> Option<f64> {
        self.log_normalizer
    }

    fn log_density_at_least(&self, x: &[f64], threshold: f64) -> bool {
        if let Body::Mixture { offsets, components, .. } = &self.body {
            if !self.support.contains(x) {
                return false;
            }
            let mut m = f64::NEG_INFINITY;
            for (o, c) in offsets.iter().zip(components) {
                m = m.max(o + c.log_kernel(x));
            }
            // ln sum_k e^{t_k} <= m + ln K <= m + K - 1.
            if m + ((components.len() - 1) as f64) < threshold {
                return false;
            }
        }
        self.log_density(x) >= threshold
    }

    fn mode_hints(&self) -> Vec<Vec<f64>> {
        self.components()
            .iter()
            .map(|c| {
                let mut m = c.mode();
                for (v, (l, u)) in m.iter_mut().zip(self.support.lower.iter().zip(&self.support.upper)) {
                    *v = v.clamp(*l, *u);
                }
                m
            })
            .collect()
    }
}

/// Midpoint-rule `ln int pi` over the support with `cells` cells per axis
/// (`d <= 3`).
pub fn quadrature_log_normalizer<T: Target + ?Sized>(target: &T, cells: usize) -> f64 {
    let s = target.support();
    let d = s.dim();
    assert!(d <= 3, "quadrature is only offered up to three dimensions");
    let h: Vec<f64> = s.lower.iter().zip(&s.upper).map(|(l, u)| (u - l) / cells as f64).collect();
    let total = cells.pow(d as u32);
    let ln_cell: f64 = h.iter().map(|x| x.ln()).sum();
    let logs: Vec<f64> = (0..total)
        .into_par_iter()
        .with_min_len(1024)
        .map(|mut k| {
            let mut x = [0.0; 3];
            for a in 0..d {
                x[a] = s.lower[a] + (k % cells) as f64 * h[a] + 0.5 * h[a];
                k /= cells;
            }
            target.log_density(&x[..d])
        })
        .collect();
    log_sum_exp(&logs) + ln_cell
}

// ---------------------------------------------------------------------------
// Benchmark targets

/// How the "variance" figures of the benchmark definitions are read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleReading {
    /// The quoted number is a standard deviation.
    #[default]
    Std,
    /// The quoted number is a variance.
    Variance,
}

/// Parameters of the four-mode banana benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Banana3Params {
    pub bell_means: Vec<[f64; 2]>,
    pub bell_std: f64,
    /// When set, overrides `bell_std` with `sqrt(bell_variance)`.
    pub bell_variance: Option<f64>,
    pub banana_center: [f64; 2],
    pub banana_scale: [f64; 2],
    pub banana_a: f64,
    pub banana_b: f64,
    /// Mixture weights: three bells then the banana.
    pub weights: [f64; 4],
}

impl Default for Banana3Params {
    fn default() -> Self {
        Self {
            bell_means: vec![[0.2, 0.8], [0.5, 0.65], [0.8, 0.8]],
            bell_std: 0.045,
            bell_variance: None,
            banana_center: [0.5, 0.3],
            banana_scale: [0.15, 0.03],
            banana_a: 1.0,
            banana_b: 1.25,
            weights: [0.25; 4],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Gauss8Params {
    /// How `sqrt(0.05)/2` is read; `std` gives sigma ~ 0.1118.
    pub reading: ScaleReading,
}

impl Default for Gauss8Params {
    fn default() -> Self {
        Self {
            reading: ScaleReading::Std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CauchyMixParams {
    pub locations: Vec<[f64; 2]>,
    pub scale: f64,
}

impl Default for CauchyMixParams {
    fn default() -> Self {
        Self {
            locations: vec![[0.2, 0.8], [0.8, 0.2]],
            scale: 0.01,
        }
    }
}

/// A custom mixture target supplied in JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomTarget {
    pub dim: usize,
    #[serde(default)]
    pub lower: Option<Vec<f64>>,
    #[serde(default)]
    pub upper: Option<Vec<f64>>,
    pub components: Vec<WeightedComponent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedComponent {
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(flatten)]
    pub component: Component,
}

fn one() -> f64 {
    1.0
}

/// Target selection as it appears in a run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum TargetSpec {
    Banana3(#[serde(default)] Banana3Params),
    Gauss8(#[serde(default)] Gauss8Params),
    CauchyMix(#[serde(default)] CauchyMixParams),
    /// Flat density `exp(log_level)` on the unit cube.
    Uniform {
        dim: usize,
        #[serde(default)]
        log_level: f64,
    },
    Custom(CustomTarget),
}

impl TargetSpec {
    /// Looks up a benchmark target with default parameters.
    pub fn from_id(id: &str) -> Result<Self> {
        Ok(match id {
            "banana3" => TargetSpec::Banana3(Banana3Params::default()),
            "gauss8" => TargetSpec::Gauss8(Gauss8Params::default()),
            "cauchy_mix" => TargetSpec::CauchyMix(CauchyMixParams::default()),
            other => {
                return Err(Error::config(
                    "target",
                    format!("unknown target id `{other}` (expected banana3, gauss8 or cauchy_mix; uniform and custom targets are given as objects)"),
                ))
            }
        })
    }

    pub fn id(&self) -> &'static str {
        match self {
            TargetSpec::Banana3(_) => "banana3",
            TargetSpec::Gauss8(_) => "gauss8",
            TargetSpec::CauchyMix(_) => "cauchy_mix",
            TargetSpec::Uniform { .. } => "uniform",
            TargetSpec::Custom(_) => "custom",
        }
    }

    pub fn build(&self) -> Result<TargetDensity> {
        match self {
            TargetSpec::Banana3(p) => banana3(p),
            TargetSpec::Gauss8(p) => gauss8(p),
            TargetSpec::CauchyMix(p) => cauchy_mix(p),
            TargetSpec::Uniform { dim, log_level } => {
                if *dim == 0 {
                    return Err(Error::config("target.dim", "must be positive"));
                }
                Ok(TargetDensity::flat(BoxSupport::unit(*dim), *log_level))
            }
            TargetSpec::Custom(c) => {
                let support = match (&c.lower, &c.upper) {
                    (None, None) => BoxSupport::unit(c.dim),
                    (Some(l), Some(u)) => BoxSupport::new(l.clone(), u.clone())?,
                    _ => return Err(Error::config("target.lower", "give both lower and upper or neither")),
                };
                if support.dim() != c.dim {
                    return Err(Error::config("target.dim", "does not match the support"));
                }
                let w: Vec<f64> = c.components.iter().map(|c| c.weight).collect();
                TargetDensity::mixture(
                    "custom",
                    support,
                    &w,
                    c.components.iter().map(|c| c.component.clone()).collect(),
                )
            }
        }
    }
}

pub fn banana3(p: &Banana3Params) -> Result<TargetDensity> {
    let std = match p.bell_variance {
        Some(v) if v > 0.0 => v.sqrt(),
        Some(_) => return Err(Error::config("target.bell_variance", "must be positive")),
        None => p.bell_std,
    };
    if p.bell_means.len() != 3 {
        return Err(Error::config("target.bell_means", "expected three bell means"));
    }
    let mut comps: Vec<Component> = p
        .bell_means
        .iter()
        .map(|m| Component::Gaussian {
            mean: m.to_vec(),
            std,
        })
        .collect();
    comps.push(Component::Banana {
        center: p.banana_center,
        scale: p.banana_scale,
        a: p.banana_a,
        b: p.banana_b,
    });
    TargetDensity::mixture("banana3", BoxSupport::unit(2), &p.weights, comps)
}

/// Per-coordinate offset `1/(4 sqrt 8)` of the two `gauss8` means from 1/2.
pub fn gauss8_offset() -> f64 {
    1.0 / (4.0 * 8f64.sqrt())
}

pub fn gauss8_means() -> [Vec<f64>; 2] {
    let o = gauss8_offset();
    let mut m1 = vec![0.5 + o; 8];
    let mut m2 = vec![0.5 - o; 8];
    m1[0] = 0.5 - o;
    m2[0] = 0.5 + o;
    [m1, m2]
}

pub fn gauss8(p: &Gauss8Params) -> Result<TargetDensity> {
    let quoted = 0.05f64.sqrt() / 2.0;
    let std = match p.reading {
        ScaleReading::Std => quoted,
        ScaleReading::Variance => quoted.sqrt(),
    };
    let [m1, m2] = gauss8_means();
    TargetDensity::mixture(
        "gauss8",
        BoxSupport::unit(8),
        &[0.5, 0.5],
        vec![Component::Gaussian { mean: m1, std }, Component::Gaussian { mean: m2, std }],
    )
}

pub fn cauchy_mix(p: &CauchyMixParams) -> Result<TargetDensity> {
    if p.locations.is_empty() {
        return Err(Error::config("target.locations", "need at least one location"));
    }
    let w = vec![1.0; p.locations.len()];
    TargetDensity::mixture(
        "cauchy_mix",
        BoxSupport::unit(2),
        &w,
        p.locations
            .iter()
            .map(|l| Component::Cauchy {
                location: l.to_vec(),
                scale: p.scale,
            })
            .collect(),
    )
}

// ---------------------------------------------------------------------------
// Rejection sampling

const REJECTION_CHUNK: usize = 512;
const MIN_ACCEPTANCE: f64 = 1e-6;

/// Grid-search estimate of `sup ln pi` over the support: a lattice with at
/// most ~65k nodes, the target's mode hints, then coordinate hill climbing
/// from the best candidates.
pub fn estimate_log_sup<T: Target + ?Sized>(target: &T) -> f64 {
    let s = target.support();
    let d = s.dim();
    let per_axis = ((65_536f64).powf(1.0 / d as f64).floor() as usize).clamp(2, 512);
    let total = per_axis.pow(d as u32);
    let node = |mut k: usize| -> Vec<f64> {
        (0..d)
            .map(|a| {
                let i = k % per_axis;
                k /= per_axis;
                s.lower[a] + (s.upper[a] - s.lower[a]) * i as f64 / (per_axis - 1) as f64
            })
            .collect()
    };
    let mut cands: Vec<(f64, Vec<f64>)> = (0..total)
        .into_par_iter()
        .map(|k| {
            let x = node(k);
            (target.log_density(&x), x)
        })
        .collect();
    for h in target.mode_hints() {
        cands.push((target.log_density(&h), h));
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0));
    cands.truncate(8);
    let mut best = f64::NEG_INFINITY;
    for (mut val, mut x) in cands {
        let mut step: Vec<f64> = s.lower.iter().zip(&s.upper).map(|(l, u)| (u - l) / per_axis as f64).collect();
        for _ in 0..200 {
            let mut moved = false;
            for a in 0..d {
                for sign in [-1.0, 1.0] {
                    let mut y = x.clone();
                    y[a] = (y[a] + sign * step[a]).clamp(s.lower[a], s.upper[a]);
                    let v = target.log_density(&y);
                    if v > val {
                        val = v;
                        x = y;
                        moved = true;
                    }
                }
            }
            if !moved {
                step.iter_mut().for_each(|h| *h *= 0.5);
                if step.iter().all(|h| *h < 1e-9) {
                    break;
                }
            }
        }
        best = best.max(val);
    }
    best
}

/// Result of [`rejection_sample`]: the samples and the observed acceptance
/// rate of the uniform-envelope scheme.
#[derive(Clone, Debug)]
pub struct RejectionOutput {
    pub samples: Points,
    pub acceptance_rate: f64,
    pub log_envelope: f64,
}

/// `n` exact draws from `pi` by rejection from the uniform law on the box,
/// with envelope `1.2 x` the grid-estimated supremum.
pub fn rejection_sample<T: Target + ?Sized>(target: &T, n: usize, seed: u64) -> Result<Points> {
    rejection_sample_detailed(target, n, seed).map(|o| o.samples)
}

pub fn rejection_sample_detailed<T: Target + ?Sized>(
    target: &T,
    n: usize,
    seed: u64,
) -> Result<RejectionOutput> {
    let d = target.dim();
    let log_env = estimate_log_sup(target) + 1.2f64.ln();
    if !log_env.is_finite() {
        return Err(Error::Numeric("target density vanishes on the whole support grid".into()));
    }
    let chunks = n.div_ceil(REJECTION_CHUNK);
    let results: Vec<Result<(Vec<f64>, u64)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let quota = REJECTION_CHUNK.min(n - c * REJECTION_CHUNK);
            let mut rng: ChaCha8Rng = stream_rng(seed, Stream::Reference, &[c as u64]);
            let mut out = Vec::with_capacity(quota * d);
            let mut x = vec![0.0; d];
            let mut tries: u64 = 0;
            let mut got = 0;
            // Give up once the budget implies an acceptance rate below 1e-6.
            let budget = (quota as f64 / MIN_ACCEPTANCE) as u64 + 1000;
            while got < quota {
                target.support().sample_uniform(&mut rng, &mut x);
                // -ln U for uniform U, drawn directly.
                let e: f64 = rng.sample(Exp1);
                tries += 1;
                if target.log_density_at_least(&x, log_env - e) {
                    out.extend_from_slice(&x);
                    got += 1;
                }
                if tries >= budget {
                    return Err(Error::RejectionTooLoose {
                        rate: got as f64 / tries as f64,
                    });
                }
            }
            Ok((out, tries))
        })
        .collect();
    let mut data = Vec::with_capacity(n * d);
    let mut tries = 0u64;
    for r in results {
        let (chunk, t) = r?;
        data.extend(chunk);
        tries += t;
    }
    Ok(RejectionOutput {
        samples: Points::new(d, data),
        acceptance_rate: if tries == 0 { 1.0 } else { n as f64 / tries as f64 },
        log_envelope: log_env,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outside_unit_square_is_neg_infinity() {
        let t = banana3(&Banana3Params::default()).unwrap();
        for x in [[-0.01, 0.5], [0.5, 1.0001], [1.2, -3.0]] {
            assert_eq!(t.log_density(&x), f64::NEG_INFINITY);
        }
        assert!(t.log_density(&[0.5, 0.5]).is_finite());
        assert!(t.log_density(&[0.0, 0.0]).is_finite());
    }

    #[test]
    fn banana_default_is_mirror_symmetric() {
        let t = banana3(&Banana3Params::default()).unwrap();
        for x in [[0.1, 0.3], [0.33, 0.71], [0.45, 0.2], [0.02, 0.97]] {
            let a = t.log_density(&x);
            let b = t.log_density(&[1.0 - x[0], x[1]]);
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn banana_normalizer_is_positive_and_close_to_mass() {
        let t = banana3(&Banana3Params::default()).unwrap();
        let z = t.known_log_normalizer().unwrap().exp();
        assert!(z.is_finite() && z > 0.0);
        // All four components sit well inside the square.
        assert!(z > 0.95 && z <= 1.0 + 1e-6, "z = {z}");
    }

    #[test]
    fn gauss8_means_and_symmetry() {
        let [m1, m2] = gauss8_means();
        assert!((m1[0] - 0.4116).abs() < 1e-4 && (m1[1] - 0.5884).abs() < 1e-4);
        assert!((m2[0] - 0.5884).abs() < 1e-4 && (m2[7] - 0.4116).abs() < 1e-4);
        let t = gauss8(&Gauss8Params::default()).unwrap();
        assert!((t.log_density(&m1) - t.log_density(&m2)).abs() < 1e-12);
        let mid = vec![0.5; 8];
        let comps = t.components();
        assert!((comps[0].log_density(&mid) - comps[1].log_density(&mid)).abs() < 1e-12);
    }

    #[test]
    fn gauss8_readings() {
        let std = match &gauss8(&Gauss8Params::default()).unwrap().components()[0] {
            Component::Gaussian { std, .. } => *std,
            _ => unreachable!(),
        };
        assert!((std - 0.111_803_398_874_989_48).abs() < 1e-15);
        let alt = gauss8(&Gauss8Params {
            reading: ScaleReading::Variance,
        })
        .unwrap();
        match &alt.components()[0] {
            Component::Gaussian { std, .. } => assert!((std * std - 0.05f64.sqrt() / 2.0).abs() < 1e-15),
            _ => unreachable!(),
        }
    }

    #[test]
    fn cauchy_modes() {
        let t = cauchy_mix(&CauchyMixParams::default()).unwrap();
        let a = t.log_density(&[0.2, 0.8]);
        assert!((a - t.log_density(&[0.8, 0.2])).abs() < 1e-12);
        assert!(a > t.log_density(&[0.25, 0.8]));
        assert!(a > t.log_density(&[0.15, 0.8]));
        // Hand evaluation of the mixture: component density at offset (dx, dy)
        // is 1/(pi s)^2 / ((1 + (dx/s)^2)(1 + (dy/s)^2)).
        let s: f64 = 0.01;
        let comp = |dx: f64, dy: f64| 1.0 / (std::f64::consts::PI * s).powi(2) / ((1.0 + (dx / s).powi(2)) * (1.0 + (dy / s).powi(2)));
        let at_mode = comp(0.0, 0.0) + comp(0.6, -0.6);
        let at_mid = 2.0 * comp(0.3, -0.3);
        let ratio = (t.log_density(&[0.5, 0.5]) - a).exp();
        assert!((ratio - at_mid / at_mode).abs() < 1e-12 * (at_mid / at_mode));
    }

    #[test]
    fn closed_form_normalizer_matches_quadrature() {
        let t = cauchy_mix(&CauchyMixParams::default()).unwrap();
        let exact = t.known_log_normalizer().unwrap();
        let quad = quadrature_log_normalizer(&t, 2048);
        assert!((exact - quad).abs() < 1e-3, "{exact} vs {quad}");
    }

    #[test]
    fn uniform_rejection_rate_is_one_over_safety() {
        let t = TargetDensity::flat(BoxSupport::unit(2), 0.0);
        let out = rejection_sample_detailed(&t, 20_000, 5).unwrap();
        assert!((out.acceptance_rate - 1.0 / 1.2).abs() < 0.01, "{}", out.acceptance_rate);
    }

    #[test]
    fn rejection_is_seed_deterministic_and_in_box() {
        let t = banana3(&Banana3Params::default()).unwrap();
        let a = rejection_sample(&t, 1500, 11).unwrap();
        let b = rejection_sample(&t, 1500, 11).unwrap();
        let c = rejection_sample(&t, 1500, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 1500);
        assert!(a.rows().all(|x| t.support().contains(x)));
    }

    #[test]
    fn too_peaked_target_aborts() {
        let t = TargetDensity::mixture(
            "spike",
            BoxSupport::unit(2),
            &[1.0],
            vec![Component::Gaussian {
                mean: vec![0.5, 0.5],
                std: 1e-5,
            }],
        )
        .unwrap();
        assert!(matches!(rejection_sample(&t, 10, 1), Err(Error::RejectionTooLoose { .. })));
    }
}

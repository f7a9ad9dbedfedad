//! Deterministic mean-field evolution on a grid.
//!
//! Densities live on a regular lattice of cell centers over a box. With
//! `g = f / pi` and the symmetric flux `S(x, y) = pi(x) Theta(y|x) h(alpha(x, y))`,
//! the transition operator reads
//!
//! ```text
//! T(f)(x) = f(x) + v sum_y S(x, y) (g(y) - g(x))
//! ```
//!
//! and the continuous-time evolution `df/dt = T(f) - f` is integrated with
//! forward Euler (`dt = 1` is the discrete iteration `f <- T(f)`).
//!
//! Gaussian kernels are discretized on the lattice and normalized over the
//! infinite lattice, so mass proposed outside the box is simply rejected and
//! stays in place.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::AcceptanceFunction;
use crate::targets::{BoxSupport, Component, Target};

/// Regular lattice with `cells` cells per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    support: BoxSupport,
    cells: usize,
}

impl Grid {
    pub fn new(support: BoxSupport, cells: usize) -> Result<Self> {
        if cells == 0 {
            return Err(Error::config("grid", "need at least one cell per axis"));
        }
        if support.dim() > 2 {
            return Err(Error::config("grid", "only 1-D and 2-D grids are supported"));
        }
        Ok(Self { support, cells })
    }

    pub fn unit(dim: usize, cells: usize) -> Result<Self> {
        Self::new(BoxSupport::unit(dim), cells)
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.support.upper[axis] - self.support.lower[axis]) / self.cells as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    /// Center of cell `k` (the first axis varies fastest).
    pub fn center(&self, mut k: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|a| {
                let i = k % self.cells;
                k /= self.cells;
                self.support.lower[a] + (i as f64 + 0.5) * self.spacing(a)
            })
            .collect()
    }

    fn index(&self, k: usize) -> [usize; 2] {
        [k % self.cells, k / self.cells]
    }
}

/// Nonnegative cell values of a probability density (`sum values * v = 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity {
    grid: Grid,
    values: Vec<f64>,
}

impl GridDensity {
    /// Normalizes `values` to unit mass.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::config("grid", "one value per cell"));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Numeric("grid density values must be finite and nonnegative".into()));
        }
        let mut g = Self { grid, values };
        let m = g.mass();
        if !(m > 0.0) {
            return Err(Error::Numeric("grid density has zero mass".into()));
        }
        g.values.iter_mut().for_each(|x| *x /= m);
        Ok(g)
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|k| f(&grid.center(k))).collect();
        Self::new(grid, values)
    }

    /// Samples `exp(ln pi)` at the cell centers.
    pub fn from_target<T: Target + ?Sized>(grid: Grid, target: &T) -> Result<Self> {
        Self::from_fn(grid, |x| target.log_density(x).exp())
    }

    pub fn uniform(grid: Grid) -> Self {
        let n = grid.len();
        Self::new(grid, vec![1.0; n]).expect("uniform density")
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// `a self + b other`, renormalized.
    pub fn blend(&self, a: f64, other: &GridDensity, b: f64) -> Result<Self> {
        let v = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Self::new(self.grid.clone(), v)
    }
}

/// Proposal used on the grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridProposal {
    /// `Theta_f(y|x) = (K_sigma * f)(y)`.
    Convolution { sigma: f64 },
    /// `Theta_f(y|x) = f(y)`.
    Degenerate,
    /// `Theta(y|x) = K_sigma(y - x)`, independent of `f`.
    Linear { sigma: f64 },
}

impl GridProposal {
    /// Parses `conv:<sigma>`, `degenerate` or `linear:<sigma>`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::config("proposal", format!("expected conv:<sigma>, degenerate or linear:<sigma>, got `{s}`"));
        let sigma = |v: &str| -> Result<f64> {
            let x: f64 = v.parse().map_err(|_| bad())?;
            if x > 0.0 && x.is_finite() {
                Ok(x)
            } else {
                Err(bad())
            }
        };
        match s.split_once(':') {
            None if s == "degenerate" => Ok(Self::Degenerate),
            Some(("conv", v)) => Ok(Self::Convolution { sigma: sigma(v)? }),
            Some(("linear", v)) => Ok(Self::Linear { sigma: sigma(v)? }),
            _ => Err(bad()),
        }
    }
}

/// Gaussian kernel on the lattice along one axis: `table[m + G - 1]` is the
/// weight of an offset of `m` cells, normalized so that the sum over all
/// integer offsets times the spacing is one.
fn axis_kernel(sigma: f64, h: f64, cells: usize) -> Vec<f64> {
    let g = |m: f64| (-0.5 * (m * h / sigma).powi(2)).exp();
    let mut z = g(0.0);
    let mut m = 1.0;
    loop {
        let t = g(m);
        z += 2.0 * t;
        if t < 1e-300 || t < z * 1e-18 {
            break;
        }
        m += 1.0;
    }
    let norm = z * h;
    (0..2 * cells - 1)
        .map(|k| g(k as f64 - (cells - 1) as f64) / norm)
        .collect()
}

struct KernelTables {
    axes: Vec<Vec<f64>>,
    cells: usize,
}

impl KernelTables {
    fn new(grid: &Grid, sigma: f64) -> Self {
        Self {
            axes: (0..grid.dim()).map(|a| axis_kernel(sigma, grid.spacing(a), grid.cells)).collect(),
            cells: grid.cells,
        }
    }

    /// `K(y - x)` for cells `x`, `y`.
    #[inline]
    fn eval(&self, grid: &Grid, x: usize, y: usize) -> f64 {
        let (ix, iy) = (grid.index(x), grid.index(y));
        let mut k = 1.0;
        for (a, t) in self.axes.iter().enumerate() {
            k *= t[iy[a] + self.cells - 1 - ix[a]];
        }
        k
    }
}

/// `(K_sigma * f)(y) = sum_z K(y - z) f(z) v` on the lattice.
pub fn convolve(grid: &Grid, sigma: f64, values: &[f64]) -> Vec<f64> {
    let tables = KernelTables::new(grid, sigma);
    let g = grid.cells;
    let mut cur = values.to_vec();
    for (a, t) in tables.axes.iter().enumerate() {
        let h = grid.spacing(a);
        let stride = if a == 0 { 1 } else { g };
        let mut next = vec![0.0; cur.len()];
        next.par_iter_mut().enumerate().for_each(|(k, out)| {
            let i = (k / stride) % g;
            let base = k - i * stride;
            let mut s = 0.0;
            for j in 0..g {
                s += t[i + g - 1 - j] * cur[base + j * stride];
            }
            *out = s * h;
        });
        cur = next;
    }
    cur
}

/// Frozen ingredients of one application of the operator.
struct Flux<'a> {
    grid: &'a Grid,
    pi: &'a [f64],
    kind: FluxKind,
    h: &'a AcceptanceFunction,
}

enum FluxKind {
    /// `Theta(y|x) = q(y)`.
    Independent(Vec<f64>),
    Linear(KernelTables),
}

impl<'a> Flux<'a> {
    fn new(f: &'a GridDensity, proposal: GridProposal, pi: &'a GridDensity, h: &'a AcceptanceFunction) -> Self {
        let grid = f.grid();
        let kind = match proposal {
            GridProposal::Convolution { sigma } => FluxKind::Independent(convolve(grid, sigma, f.values())),
            GridProposal::Degenerate => FluxKind::Independent(f.values().to_vec()),
            GridProposal::Linear { sigma } => FluxKind::Linear(KernelTables::new(grid, sigma)),
        };
        Self {
            grid,
            pi: pi.values(),
            kind,
            h,
        }
    }

    #[inline]
    fn theta(&self, y: usize, x: usize) -> f64 {
        match &self.kind {
            FluxKind::Independent(q) => q[y],
            FluxKind::Linear(t) => t.eval(self.grid, x, y),
        }
    }

    /// `pi(x) Theta(y|x) h(alpha(x, y))`, the one-directional flux.
    #[inline]
    fn directed(&self, x: usize, y: usize) -> f64 {
        let a = self.pi[x] * self.theta(y, x);
        let b = self.pi[y] * self.theta(x, y);
        directed_flux(self.h, a, b)
    }

    /// Symmetrized flux: always evaluated from the lower-indexed cell.
    #[inline]
    fn sym(&self, x: usize, y: usize) -> f64 {
        if x <= y {
            self.directed(x, y)
        } else {
            self.directed(y, x)
        }
    }
}

#[inline]
fn directed_flux(h: &AcceptanceFunction, a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        return 0.0;
    }
    match h {
        AcceptanceFunction::Metropolis => a.min(b),
        _ => a * h.log_h(b.ln() - a.ln()).exp(),
    }
}

/// One application of the transition operator.
pub fn transition_operator(
    f: &GridDensity,
    proposal: GridProposal,
    pi: &GridDensity,
    h: &AcceptanceFunction,
) -> Result<GridDensity> {
    euler_step(f, proposal, pi, h, 1.0)
}

fn drift(f: &GridDensity, proposal: GridProposal, pi: &GridDensity, h: &AcceptanceFunction) -> Vec<f64> {
    let flux = Flux::new(f, proposal, pi, h);
    let v = f.grid().cell_volume();
    let g: Vec<f64> = f.values().iter().zip(pi.values()).map(|(a, b)| a / b).collect();
    let n = g.len();
    (0..n)
        .into_par_iter()
        .map(|x| {
            let mut s = 0.0;
            for y in 0..n {
                if y != x {
                    s += flux.sym(x, y) * (g[y] - g[x]);
                }
            }
            v * s
        })
        .collect()
}

fn euler_step(f: &GridDensity, proposal: GridProposal, pi: &GridDensity, h: &AcceptanceFunction, dt: f64) -> Result<GridDensity> {
    let d = drift(f, proposal, pi, h);
    let mut values: Vec<f64> = f.values().iter().zip(&d).map(|(a, b)| a + dt * b).collect();
    for (cell, x) in values.iter_mut().enumerate() {
        if *x < 0.0 {
            if *x < -1e-12 {
                return Err(Error::NegativeMass { cell, value: *x });
            }
            *x = 0.0;
        }
    }
    GridDensity::new(f.grid().clone(), values)
}

/// Entropy functional `phi`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phi {
    /// `phi(s) = (s - 1)^2 / 2`.
    #[default]
    Chi2,
    /// `phi(s) = s ln s - s + 1`.
    Kl,
}

impl Phi {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "chi2" => Ok(Self::Chi2),
            "kl" => Ok(Self::Kl),
            _ => Err(Error::config("phi", format!("expected chi2 or kl, got `{s}`"))),
        }
    }

    fn phi(self, s: f64) -> f64 {
        match self {
            Self::Chi2 => 0.5 * (s - 1.0).powi(2),
            Self::Kl => {
                if s == 0.0 {
                    1.0
                } else {
                    s * s.ln() - s + 1.0
                }
            }
        }
    }

    fn dphi(self, s: f64) -> f64 {
        match self {
            Self::Chi2 => s - 1.0,
            Self::Kl => s.max(f64::MIN_POSITIVE).ln(),
        }
    }
}

/// `sum_x pi(x) phi(f(x) / pi(x)) v`.
pub fn entropy(f: &GridDensity, pi: &GridDensity, phi: Phi) -> f64 {
    let v = f.grid().cell_volume();
    f.values()
        .iter()
        .zip(pi.values())
        .map(|(a, b)| b * phi.phi(a / b))
        .sum::<f64>()
        * v
}

/// `1/2 sum_x sum_y v^2 S(x, y) (g(y) - g(x)) (phi'(g(y)) - phi'(g(x)))`,
/// the entropy decay rate along the continuous-time evolution.
pub fn dissipation(f: &GridDensity, pi: &GridDensity, proposal: GridProposal, h: &AcceptanceFunction, phi: Phi) -> f64 {
    let flux = Flux::new(f, proposal, pi, h);
    let v = f.grid().cell_volume();
    let g: Vec<f64> = f.values().iter().zip(pi.values()).map(|(a, b)| a / b).collect();
    let dp: Vec<f64> = g.iter().map(|s| phi.dphi(*s)).collect();
    let n = g.len();
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|x| {
            let mut s = 0.0;
            for y in (x + 1)..n {
                s += flux.sym(x, y) * (g[y] - g[x]) * (dp[y] - dp[x]);
            }
            s
        })
        .sum();
    total * v * v
}

/// Cellwise extrema of `f / pi`.
pub fn min_max_ratio(f: &GridDensity, pi: &GridDensity) -> (f64, f64) {
    f.values()
        .iter()
        .zip(pi.values())
        .map(|(a, b)| a / b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)))
}

/// Largest `|pi(x) W(x -> y) - pi(y) W(y -> x)|` over cell pairs, relative
/// to the larger flux. Uses the directed fluxes, not the symmetrized ones.
pub fn check_micro_reversibility_grid(f: &GridDensity, proposal: GridProposal, pi: &GridDensity, h: &AcceptanceFunction) -> f64 {
    let flux = Flux::new(f, proposal, pi, h);
    let n = f.values().len();
    (0..n)
        .into_par_iter()
        .map(|x| {
            let mut worst = 0.0f64;
            for y in (x + 1)..n {
                let a = flux.directed(x, y);
                let b = flux.directed(y, x);
                let scale = a.abs().max(b.abs());
                if scale > 0.0 {
                    worst = worst.max((a - b).abs() / scale);
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

/// One row of an entropy trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyRecord {
    pub step: usize,
    pub time: f64,
    pub chi2: f64,
    pub kl: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// Dissipation for the selected `phi`.
    pub dissipation: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub records: Vec<EntropyRecord>,
    pub last: GridDensity,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn chi2(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.chi2).collect()
    }
}

fn record(step: usize, dt: f64, f: &GridDensity, pi: &GridDensity, proposal: GridProposal, h: &AcceptanceFunction, phi: Phi, with_dissipation: bool) -> EntropyRecord {
    let (min_ratio, max_ratio) = min_max_ratio(f, pi);
    EntropyRecord {
        step,
        time: step as f64 * dt,
        chi2: entropy(f, pi, Phi::Chi2),
        kl: entropy(f, pi, Phi::Kl),
        min_ratio,
        max_ratio,
        dissipation: if with_dissipation {
            dissipation(f, pi, proposal, h, phi)
        } else {
            f64::NAN
        },
    }
}

/// Forward-Euler integration of `df/dt = T(f) - f` for `steps` steps.
#[derive(Clone, Debug)]
pub struct Evolution {
    pub proposal: GridProposal,
    pub h: AcceptanceFunction,
    pub dt: f64,
    pub steps: usize,
    pub phi: Phi,
    /// Record the dissipation at each step (a second pass over cell pairs).
    pub dissipation: bool,
}

impl Evolution {
    pub fn new(proposal: GridProposal, dt: f64, steps: usize) -> Self {
        Self {
            proposal,
            h: AcceptanceFunction::Metropolis,
            dt,
            steps,
            phi: Phi::Chi2,
            dissipation: false,
        }
    }

    pub fn run(&self, f0: &GridDensity, pi: &GridDensity) -> Result<Trajectory> {
        pde_evolve(f0, self.proposal, pi, &self.h, self.dt, self.steps, self.phi, self.dissipation)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn pde_evolve(
    f0: &GridDensity,
    proposal: GridProposal,
    pi: &GridDensity,
    h: &AcceptanceFunction,
    dt: f64,
    steps: usize,
    phi: Phi,
    with_dissipation: bool,
) -> Result<Trajectory> {
    if !(dt > 0.0 && dt <= 1.0) {
        return Err(Error::config("dt", "must lie in (0, 1]"));
    }
    if f0.grid() != pi.grid() {
        return Err(Error::config("grid", "initial density and target live on different grids"));
    }
    if pi.values().iter().any(|p| !(*p > 0.0)) {
        return Err(Error::Numeric("target must be positive on every cell".into()));
    }
    let mut f = f0.clone();
    let mut records = Vec::with_capacity(steps + 1);
    records.push(record(0, dt, &f, pi, proposal, h, phi, with_dissipation));
    for s in 1..=steps {
        f = euler_step(&f, proposal, pi, h, dt)?;
        records.push(record(s, dt, &f, pi, proposal, h, phi, with_dissipation));
    }
    Ok(Trajectory { records, last: f })
}

/// Exponential decay rate: minus the least-squares slope of `ln H` against
/// time over the points with `1e-8 <= H <= H_0 / 2`. `None` with fewer than
/// two points in the window.
pub fn fit_decay_rate(times: &[f64], entropy: &[f64]) -> Option<f64> {
    let h0 = *entropy.first()?;
    let (t, l): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(entropy)
        .filter(|(_, h)| **h >= 1e-8 && **h <= 0.5 * h0)
        .map(|(t, h)| (*t, h.ln()))
        .unzip();
    if t.len() < 2 {
        return None;
    }
    Some(-crate::diagnostics::stats::linear_fit(&t, &l).slope)
}

/// Lower bound `c(m) = m min_y (K * pi)(y) / pi(y)` on the convolution
/// proposal's kernel ratio, for `m = min f / pi`.
pub fn convolution_rate_constant(pi: &GridDensity, sigma: f64, m: f64) -> f64 {
    let kp = convolve(pi.grid(), sigma, pi.values());
    m * kp
        .iter()
        .zip(pi.values())
        .map(|(a, b)| a / b)
        .fold(f64::INFINITY, f64::min)
}

/// Default smooth bimodal target on the unit interval (or square): two
/// Gaussian bumps over a flat floor, positive on every cell.
pub fn default_grid_target(grid: &Grid) -> Result<GridDensity> {
    let (m1, m2): (&[f64], &[f64]) = match grid.dim() {
        1 => (&[0.3], &[0.72]),
        _ => (&[0.3, 0.35], &[0.7, 0.65]),
    };
    let bumps = [
        Component::Gaussian { mean: m1.to_vec(), std: 0.08 },
        Component::Gaussian { mean: m2.to_vec(), std: 0.1 },
    ];
    GridDensity::from_fn(grid.clone(), |x| {
        0.45 * bumps[0].log_density(x).exp() + 0.45 * bumps[1].log_density(x).exp() + 0.1
    })
}

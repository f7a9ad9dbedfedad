//! Interaction kernels and the tiled pairwise kernel-sum engine.
//!
//! Every collective proposal spends its time in sums of the form
//! `a_i = sum_j K(q_i - s_j) b_j` over two point clouds. The engine below
//! evaluates them exactly (no far-field approximation), in parallel over
//! query tiles. Each query is reduced by a single worker in a fixed order:
//! sources are visited tile by tile, inside a tile eight lane accumulators
//! collect sources by index modulo eight and are folded by a fixed binary
//! tree. The result is therefore bit-identical for any worker count.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::points::{sq_dist, Points};

const LANES: usize = 8;

/// Radial interaction kernel, normalized to integrate to one over R^d.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InteractionKernel {
    /// Isotropic normal density with standard deviation `sigma` per axis.
    Gaussian { sigma: f64 },
    /// Uniform density on the closed ball of radius `r`.
    UniformBall { r: f64 },
}

/// `ln |B_1|` for the unit ball in `d` dimensions.
pub fn ln_unit_ball_volume(d: usize) -> f64 {
    let half = d as f64 / 2.0;
    half * std::f64::consts::PI.ln() - ln_gamma_half_integer(d + 2)
}

/// `ln Gamma(k / 2)` for a positive integer `k`.
fn ln_gamma_half_integer(k: usize) -> f64 {
    assert!(k > 0);
    // Gamma(1/2) = sqrt(pi), Gamma(1) = 1, Gamma(x + 1) = x Gamma(x).
    let (mut acc, mut x) = if k % 2 == 0 {
        (0.0, 1.0)
    } else {
        (0.5 * std::f64::consts::PI.ln(), 0.5)
    };
    while x < k as f64 / 2.0 {
        acc += x.ln();
        x += 1.0;
    }
    acc
}

impl InteractionKernel {
    pub fn gaussian(sigma: f64) -> Self {
        Self::Gaussian { sigma }
    }

    pub fn uniform_ball(r: f64) -> Self {
        Self::UniformBall { r }
    }

    /// Bandwidth: `sigma` or `r`.
    pub fn scale(&self) -> f64 {
        match *self {
            Self::Gaussian { sigma } => sigma,
            Self::UniformBall { r } => r,
        }
    }

    pub fn is_valid(&self) -> bool {
        let s = self.scale();
        s.is_finite() && s > 0.0
    }

    /// Log of the kernel value at the origin in `d` dimensions.
    pub fn log_peak(&self, d: usize) -> f64 {
        match *self {
            Self::Gaussian { sigma } => {
                -0.5 * d as f64 * (2.0 * std::f64::consts::PI * sigma * sigma).ln()
            }
            Self::UniformBall { r } => -(ln_unit_ball_volume(d) + d as f64 * r.ln()),
        }
    }

    /// `ln K(z)` as a function of `|z|^2`.
    #[inline]
    pub fn log_density_sq(&self, d2: f64, d: usize) -> f64 {
        match *self {
            Self::Gaussian { sigma } => self.log_peak(d) - d2 / (2.0 * sigma * sigma),
            Self::UniformBall { r } => {
                if d2 <= r * r {
                    self.log_peak(d)
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn density(&self, z: &[f64]) -> f64 {
        self.log_density(z).exp()
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        let d2: f64 = z.iter().map(|x| x * x).sum();
        self.log_density_sq(d2, z.len())
    }

    /// Draws `y = center + e` with `e ~ K`. For the ball kernel the draw is
    /// repeated until `|y - center|` computed in floating point lies inside
    /// the ball, so that the density at the returned point never vanishes.
    pub fn sample_around<R: Rng + ?Sized>(&self, center: &[f64], rng: &mut R, y: &mut [f64]) {
        let d = center.len();
        match *self {
            Self::Gaussian { sigma } => {
                for (yi, ci) in y.iter_mut().zip(center) {
                    let z: f64 = rng.sample(StandardNormal);
                    *yi = ci + sigma * z;
                }
            }
            Self::UniformBall { r } => loop {
                let mut norm2 = 0.0;
                for yi in y.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *yi = z;
                    norm2 += z * z;
                }
                if norm2 == 0.0 {
                    continue;
                }
                let u: f64 = rng.random();
                let radius = r * u.powf(1.0 / d as f64) / norm2.sqrt();
                for (yi, ci) in y.iter_mut().zip(center) {
                    *yi = ci + radius * *yi;
                }
                if sq_dist(y, center) <= r * r {
                    break;
                }
            },
        }
    }

    pub(crate) fn profile(&self, d: usize) -> Profile {
        match *self {
            Self::Gaussian { sigma } => Profile::Gauss {
                neg_inv_two_var: -1.0 / (2.0 * sigma * sigma),
                peak: self.log_peak(d).exp(),
            },
            Self::UniformBall { r } => Profile::Ball {
                r2: r * r,
                peak: self.log_peak(d).exp(),
            },
        }
    }
}

/// A radial function of the squared distance, as evaluated by the engine.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Profile {
    Gauss { neg_inv_two_var: f64, peak: f64 },
    Ball { r2: f64, peak: f64 },
    /// Euclidean distance `|q - s|`.
    Distance,
}

impl Profile {
    #[inline(always)]
    fn eval(self, d2: f64) -> f64 {
        match self {
            Profile::Gauss {
                neg_inv_two_var,
                peak,
            } => peak * (neg_inv_two_var * d2).exp(),
            Profile::Ball { r2, peak } => {
                if d2 <= r2 {
                    peak
                } else {
                    0.0
                }
            }
            Profile::Distance => d2.sqrt(),
        }
    }
}

/// Execution parameters of the kernel-sum engine.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelSumPlan {
    /// Number of sources per reduction tile (and of queries per work item).
    pub tile: usize,
    /// Worker count; `None` uses the ambient rayon pool.
    pub workers: Option<usize>,
}

impl Default for KernelSumPlan {
    fn default() -> Self {
        Self {
            tile: 256,
            workers: None,
        }
    }
}

impl KernelSumPlan {
    pub fn with_workers(workers: usize) -> Self {
        Self {
            workers: Some(workers),
            ..Self::default()
        }
    }

    pub(crate) fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match self.workers {
            Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
                Ok(pool) => pool.install(f),
                Err(_) => f(),
            },
            None => f(),
        }
    }
}

/// Sources transposed to one contiguous column per coordinate.
struct Columns {
    len: usize,
    cols: Vec<Vec<f64>>,
}

impl Columns {
    fn new(p: &Points) -> Self {
        let len = p.len();
        let mut cols = vec![Vec::with_capacity(len); p.dim()];
        for r in p.rows() {
            for (c, x) in cols.iter_mut().zip(r) {
                c.push(*x);
            }
        }
        Self { len, cols }
    }
}

#[inline(always)]
fn fold_lanes(l: &[f64; LANES]) -> f64 {
    ((l[0] + l[1]) + (l[2] + l[3])) + ((l[4] + l[5]) + (l[6] + l[7]))
}

/// Sum of `f(|q - s_j|^2) w_j` over the source tile `[start, end)`: eight
/// lane accumulators collect sources by offset modulo eight, then fold.
#[inline(always)]
fn tile_single<F: Fn(f64) -> f64>(q: &[f64], src: &Columns, weights: &[f64], f: &F, start: usize, end: usize) -> f64 {
    let mut lanes = [0.0f64; LANES];
    let mut j = start;
    while j + LANES <= end {
        let mut d2 = [0.0f64; LANES];
        for (qa, col) in q.iter().zip(&src.cols) {
            let c: &[f64; LANES] = col[j..j + LANES].try_into().expect("lane block");
            for k in 0..LANES {
                let t = qa - c[k];
                d2[k] += t * t;
            }
        }
        let w: &[f64; LANES] = weights[j..j + LANES].try_into().expect("lane block");
        for k in 0..LANES {
            lanes[k] += f(d2[k]) * w[k];
        }
        j += LANES;
    }
    while j < end {
        let mut d2 = 0.0;
        for (qa, col) in q.iter().zip(&src.cols) {
            let t = qa - col[j];
            d2 += t * t;
        }
        lanes[(j - start) % LANES] += f(d2) * weights[j];
        j += 1;
    }
    fold_lanes(&lanes)
}

/// [`tile_single`] for several profiles sharing the distance computation;
/// adds each profile's tile sum to `out[p]`.
#[inline]
fn tile_multi(
    q: &[f64],
    src: &Columns,
    weights: &[f64],
    profiles: &[Profile],
    start: usize,
    end: usize,
    lanes: &mut [[f64; LANES]],
    out: &mut [f64],
) {
    lanes.iter_mut().for_each(|l| *l = [0.0; LANES]);
    let mut j = start;
    while j + LANES <= end {
        let mut d2 = [0.0f64; LANES];
        for (qa, col) in q.iter().zip(&src.cols) {
            let c: &[f64; LANES] = col[j..j + LANES].try_into().expect("lane block");
            for k in 0..LANES {
                let t = qa - c[k];
                d2[k] += t * t;
            }
        }
        let w: &[f64; LANES] = weights[j..j + LANES].try_into().expect("lane block");
        for (prof, lp) in profiles.iter().zip(lanes.iter_mut()) {
            for k in 0..LANES {
                lp[k] += prof.eval(d2[k]) * w[k];
            }
        }
        j += LANES;
    }
    while j < end {
        let mut d2 = 0.0;
        for (qa, col) in q.iter().zip(&src.cols) {
            let t = qa - col[j];
            d2 += t * t;
        }
        let k = (j - start) % LANES;
        for (prof, lp) in profiles.iter().zip(lanes.iter_mut()) {
            lp[k] += prof.eval(d2) * weights[j];
        }
        j += 1;
    }
    for (o, l) in out.iter_mut().zip(lanes.iter()) {
        *o += fold_lanes(l);
    }
}

/// Visits source tiles in order for a block of queries, so each tile stays
/// in cache while the block is reduced against it.
#[inline(always)]
fn block_single<F: Fn(f64) -> f64>(qs: &[f64], d: usize, src: &Columns, weights: &[f64], f: F, tile: usize, out: &mut [f64]) {
    let mut start = 0;
    while start < src.len {
        let end = (start + tile).min(src.len);
        for (o, q) in out.iter_mut().zip(qs.chunks_exact(d)) {
            *o += tile_single(q, src, weights, &f, start, end);
        }
        start = end;
    }
}

/// The single-profile reduction compiled for AVX2. Separate multiplies and
/// adds are kept (no contraction), so results match the baseline build bit
/// for bit.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn block_dispatch_avx2(qs: &[f64], d: usize, src: &Columns, weights: &[f64], prof: Profile, tile: usize, out: &mut [f64]) {
    match prof {
        Profile::Gauss { neg_inv_two_var, peak } => {
            block_single(qs, d, src, weights, |d2| peak * (neg_inv_two_var * d2).exp(), tile, out)
        }
        Profile::Ball { r2, peak } => block_single(qs, d, src, weights, |d2| if d2 <= r2 { peak } else { 0.0 }, tile, out),
        Profile::Distance => block_single(qs, d, src, weights, f64::sqrt, tile, out),
    }
}

/// Engine entry point: returns a query-major `M x P` matrix of sums.
pub(crate) fn engine(
    queries: &Points,
    sources: &Points,
    profiles: &[Profile],
    weights: &[f64],
    plan: &KernelSumPlan,
) -> Vec<f64> {
    assert_eq!(queries.dim(), sources.dim(), "query/source dimension mismatch");
    assert_eq!(weights.len(), sources.len(), "one weight per source");
    let np = profiles.len();
    let m = queries.len();
    let mut out = vec![0.0; m * np];
    if m == 0 || np == 0 {
        return out;
    }
    let tile = plan.tile.max(1);
    let src = Columns::new(sources);
    let d = queries.dim();
    plan.install(|| {
        out.par_chunks_mut(tile * np).enumerate().for_each(|(block, chunk)| {
            let first = block * tile;
            let rows = chunk.len() / np;
            let qs = &queries.as_slice()[first * d..(first + rows) * d];
            if np == 1 {
                #[cfg(target_arch = "x86_64")]
                if std::arch::is_x86_feature_detected!("avx2") {
                    // SAFETY: the CPU supports AVX2, checked just above.
                    unsafe { block_dispatch_avx2(qs, d, &src, weights, profiles[0], tile, chunk) };
                    return;
                }
                match profiles[0] {
                    Profile::Gauss { neg_inv_two_var, peak } => {
                        block_single(qs, d, &src, weights, |d2| peak * (neg_inv_two_var * d2).exp(), tile, chunk)
                    }
                    Profile::Ball { r2, peak } => {
                        block_single(qs, d, &src, weights, |d2| if d2 <= r2 { peak } else { 0.0 }, tile, chunk)
                    }
                    Profile::Distance => block_single(qs, d, &src, weights, f64::sqrt, tile, chunk),
                }
                return;
            }
            let mut lanes = vec![[0.0f64; LANES]; np];
            let mut start = 0;
            while start < src.len {
                let end = (start + tile).min(src.len);
                for (o, q) in chunk.chunks_exact_mut(np).zip(qs.chunks_exact(d)) {
                    tile_multi(q, &src, weights, profiles, start, end, &mut lanes, o);
                }
                start = end;
            }
        });
    });
    out
}

/// `a_i = sum_j K(q_i - s_j) b_j` with the default plan.
pub fn kernel_sum(
    queries: &Points,
    sources: &Points,
    kernel: &InteractionKernel,
    weights: &[f64],
) -> Vec<f64> {
    kernel_sum_with(queries, sources, kernel, weights, &KernelSumPlan::default())
}

pub fn kernel_sum_with(
    queries: &Points,
    sources: &Points,
    kernel: &InteractionKernel,
    weights: &[f64],
    plan: &KernelSumPlan,
) -> Vec<f64> {
    engine(queries, sources, &[kernel.profile(queries.dim())], weights, plan)
}

/// Several kernels against the same pair of clouds, sharing the distance
/// computation. Returns one length-`M` vector per kernel.
pub fn kernel_sums_many(
    queries: &Points,
    sources: &Points,
    kernels: &[InteractionKernel],
    weights: &[f64],
    plan: &KernelSumPlan,
) -> Vec<Vec<f64>> {
    let d = queries.dim();
    let profiles: Vec<Profile> = kernels.iter().map(|k| k.profile(d)).collect();
    let flat = engine(queries, sources, &profiles, weights, plan);
    let np = kernels.len();
    (0..np)
        .map(|p| flat.iter().skip(p).step_by(np).copied().collect())
        .collect()
}

/// `sum_{i,j} |a_i - b_j|`, reduced per query row then in row order.
pub fn pairwise_distance_sum(a: &Points, b: &Points, plan: &KernelSumPlan) -> f64 {
    let ones = vec![1.0; b.len()];
    engine(a, b, &[Profile::Distance], &ones, plan).iter().sum()
}

/// `ln sum_j w_j K(q_i - s_j)` for every query, with `w` nonnegative.
///
/// Gaussian kernels are reduced by a streaming log-sum-exp (tile maximum,
/// then rescaled partial sums), so far-away queries do not underflow. Ball
/// kernels are summed directly; an empty ball gives `-inf`.
pub fn log_kernel_sum(
    queries: &Points,
    sources: &Points,
    kernel: &InteractionKernel,
    weights: &[f64],
    plan: &KernelSumPlan,
) -> Vec<f64> {
    match *kernel {
        InteractionKernel::UniformBall { .. } => kernel_sum_with(queries, sources, kernel, weights, plan)
            .into_iter()
            .map(f64::ln)
            .collect(),
        InteractionKernel::Gaussian { sigma } => {
            log_gauss_sum(queries, sources, sigma, kernel.log_peak(queries.dim()), weights, plan)
        }
    }
}

fn log_gauss_sum(
    queries: &Points,
    sources: &Points,
    sigma: f64,
    log_peak: f64,
    weights: &[f64],
    plan: &KernelSumPlan,
) -> Vec<f64> {
    assert_eq!(queries.dim(), sources.dim(), "query/source dimension mismatch");
    assert_eq!(weights.len(), sources.len(), "one weight per source");
    let src = Columns::new(sources);
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let scale = -1.0 / (2.0 * sigma * sigma);
    let tile = plan.tile.max(1);
    let d = queries.dim();
    let m = queries.len();
    let mut out = vec![f64::NEG_INFINITY; m];
    plan.install(|| {
        out.par_chunks_mut(tile).enumerate().for_each(|(block, chunk)| {
            let mut buf = vec![0.0f64; tile];
            for (k, o) in chunk.iter_mut().enumerate() {
                let i = block * tile + k;
                let q = &queries.as_slice()[i * d..(i + 1) * d];
                let mut run_max = f64::NEG_INFINITY;
                let mut run_sum = 0.0;
                let mut start = 0;
                while start < src.len {
                    let end = (start + tile).min(src.len);
                    let t = &mut buf[..end - start];
                    for (off, slot) in t.iter_mut().enumerate() {
                        let j = start + off;
                        let mut d2 = 0.0;
                        for a in 0..d {
                            let z = q[a] - src.cols[a][j];
                            d2 += z * z;
                        }
                        *slot = scale * d2 + log_w[j];
                    }
                    let tmax = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    if tmax > f64::NEG_INFINITY {
                        let s: f64 = t.iter().map(|x| (x - tmax).exp()).sum();
                        if tmax > run_max {
                            run_sum = run_sum * (run_max - tmax).exp() + s;
                            run_max = tmax;
                        } else {
                            run_sum += s * (tmax - run_max).exp();
                        }
                    }
                    start = end;
                }
                *o = if run_max == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    log_peak + run_max + run_sum.ln()
                };
            }
        });
    });
    out
}

/// `ln sum_i w_i K(y - X_i)`; uniform weights `1/N` when `weights` is `None`.
pub fn log_kernel_density(
    y: &[f64],
    swarm: &Points,
    kernel: &InteractionKernel,
    weights: Option<&[f64]>,
) -> f64 {
    let uniform;
    let w = match weights {
        Some(w) => w,
        None => {
            uniform = vec![1.0 / swarm.len() as f64; swarm.len()];
            &uniform
        }
    };
    let q = Points::new(swarm.dim(), y.to_vec());
    log_kernel_sum(&q, swarm, kernel, w, &KernelSumPlan::default())[0]
}

/// Numerically stable `ln sum exp(x_i)`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `ln(a_w e^a + b_w e^b)` for nonnegative mixing weights.
#[inline]
pub fn log_add_weighted(wa: f64, la: f64, wb: f64, lb: f64) -> f64 {
    let ta = if wa > 0.0 { wa.ln() + la } else { f64::NEG_INFINITY };
    let tb = if wb > 0.0 { wb.ln() + lb } else { f64::NEG_INFINITY };
    let m = ta.max(tb);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((ta - m).exp() + (tb - m).exp()).ln()
}

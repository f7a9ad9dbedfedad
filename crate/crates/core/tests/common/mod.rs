//! Straight-line oracles shared by the integration tests. Nothing here calls
//! into the library's numerics: densities, sums and distances are written
//! out as plain loops.
#![allow(dead_code)]

use std::f64::consts::PI;

use swarm_mc::kernels::InteractionKernel;
use swarm_mc::points::Points;

/// `Gamma(d/2 + 1)` for integer `d`, by the half-integer recursion.
pub fn gamma_half_plus_one(d: usize) -> f64 {
    let mut g = if d % 2 == 0 { 1.0 } else { PI.sqrt() / 2.0 };
    let mut k = if d % 2 == 0 { 1.0 } else { 1.5 };
    while k <= d as f64 / 2.0 + 1e-9 {
        g *= k;
        k += 1.0;
    }
    g
}

pub fn ball_volume(d: usize, r: f64) -> f64 {
    PI.powf(d as f64 / 2.0) / gamma_half_plus_one(d) * r.powi(d as i32)
}

pub fn kernel_density(k: &InteractionKernel, z: &[f64]) -> f64 {
    let d = z.len();
    let r2: f64 = z.iter().map(|v| v * v).sum();
    match *k {
        InteractionKernel::Gaussian { sigma } => {
            (2.0 * PI * sigma * sigma).powf(-(d as f64) / 2.0) * (-r2 / (2.0 * sigma * sigma)).exp()
        }
        InteractionKernel::UniformBall { r } => {
            if r2 <= r * r {
                1.0 / ball_volume(d, r)
            } else {
                0.0
            }
        }
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `a_i = sum_j K(q_i - s_j) w_j`.
pub fn naive_kernel_sum(q: &Points, s: &Points, k: &InteractionKernel, w: &[f64]) -> Vec<f64> {
    q.rows()
        .map(|qi| s.rows().zip(w).map(|(sj, wj)| kernel_density(k, &diff(qi, sj)) * wj).sum())
        .collect()
}

/// `sum_p alpha_p sum_j w_j K_p(y - s_j)`.
pub fn mixture_density(y: &[f64], s: &Points, kernels: &[InteractionKernel], alphas: &[f64], w: Option<&[f64]>) -> f64 {
    let n = s.len();
    let mut acc = 0.0;
    for (k, a) in kernels.iter().zip(alphas) {
        for (j, sj) in s.rows().enumerate() {
            let wj = w.map_or(1.0 / n as f64, |w| w[j]);
            acc += a * wj * kernel_density(k, &diff(y, sj));
        }
    }
    acc
}

pub fn gaussian_iso(y: &[f64], x: &[f64], std: f64) -> f64 {
    kernel_density(&InteractionKernel::Gaussian { sigma: std }, &diff(y, x))
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `2 E|X - Y| - E|X - X'| - E|Y - Y'|` as a V-statistic, by triple loops.
pub fn naive_energy(x: &Points, y: &Points) -> f64 {
    let mean_pair = |a: &Points, b: &Points| {
        let mut s = 0.0;
        for ai in a.rows() {
            for bj in b.rows() {
                s += euclid(ai, bj);
            }
        }
        s / (a.len() * b.len()) as f64
    };
    2.0 * mean_pair(x, y) - mean_pair(x, x) - mean_pair(y, y)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }
}

pub fn random_points(n: usize, d: usize, seed: u64) -> Points {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Points::new(d, (0..n * d).map(|_| rng.random::<f64>()).collect())
}

mod common;

use swarm_mc::diagnostics::stats::{ks_pvalue, ks_statistic, normal_cdf};
use swarm_mc::kernels::{InteractionKernel, KernelSumPlan};
use swarm_mc::prelude::*;
use swarm_mc::proposals::{bgk_moments, kids_surrogate, kids_weights, markov_objective, moka_weights_markov};
use swarm_mc::rng::particle_rng;
use swarm_mc::targets::Component;

use common::{kernel_density, naive_kernel_sum, random_points};

fn plan() -> KernelSumPlan {
    KernelSumPlan::default()
}

fn one_d_target() -> TargetDensity {
    TargetDensity::mixture(
        "two bells",
        BoxSupport::unit(1),
        &[0.6, 0.4],
        vec![
            Component::Gaussian {
                mean: vec![0.3],
                std: 0.07,
            },
            Component::Gaussian {
                mean: vec![0.75],
                std: 0.1,
            },
        ],
    )
    .unwrap()
}

#[test]
fn pmh_density_is_symmetric_and_ratio_is_target_ratio() {
    let t = TargetSpec::from_id("banana3").unwrap().build().unwrap();
    let q = FrozenProposal::pmh(2, InteractionKernel::gaussian(0.2));
    let xs = random_points(50, 2, 1);
    let ys = random_points(50, 2, 2);
    for (x, y) in xs.rows().zip(ys.rows()) {
        assert_eq!(q.log_density(y, x), q.log_density(x, y));
        let la = log_acceptance_ratio(x, y, &q, &t).unwrap();
        let want = t.log_density(y) - t.log_density(x);
        assert!((la - want).abs() < 1e-12);
    }
}

#[test]
fn pmh_gaussian_sample_mean_within_clt_bound() {
    let sigma = 0.05;
    let q = FrozenProposal::pmh(2, InteractionKernel::gaussian(sigma));
    let x = [0.3, 0.7];
    let n = 100_000;
    let mut rng = particle_rng(3, 0, 0);
    let mut y = [0.0; 2];
    let mut sum = [0.0; 2];
    for _ in 0..n {
        q.sample(&x, &mut rng, &mut y);
        sum[0] += y[0];
        sum[1] += y[1];
    }
    for a in 0..2 {
        assert!((sum[a] / n as f64 - x[a]).abs() <= 3.0 * sigma / (n as f64).sqrt());
    }
}

#[test]
fn single_particle_vanilla_is_pmh_from_that_particle() {
    let x = [0.25, 0.5];
    for k in [InteractionKernel::gaussian(0.1), InteractionKernel::uniform_ball(0.2)] {
        let v = FrozenProposal::vanilla(Points::from_rows(&[x]), k);
        let p = FrozenProposal::pmh(2, k);
        for y in random_points(30, 2, 5).rows() {
            assert!((v.log_density(y, &[0.9, 0.9]) - p.log_density(y, &x)).abs() <= 1e-12 || p.log_density(y, &x) == f64::NEG_INFINITY);
        }
    }
}

#[test]
fn two_particle_vanilla_ks() {
    let sigma = 0.1;
    let q = FrozenProposal::vanilla(Points::from_rows(&[[0.3], [0.6]]), InteractionKernel::gaussian(sigma));
    let mut rng = particle_rng(11, 0, 0);
    let mut y = [0.0];
    let draws: Vec<f64> = (0..100_000)
        .map(|_| {
            q.sample(&[0.0], &mut rng, &mut y);
            y[0]
        })
        .collect();
    let cdf = |v: f64| 0.5 * normal_cdf((v - 0.3) / sigma) + 0.5 * normal_cdf((v - 0.6) / sigma);
    let d = ks_statistic(&draws, cdf);
    let p = ks_pvalue(d, draws.len());
    assert!(p > 0.01, "KS p = {p}");
}

#[test]
fn moka_single_kernel_weight_is_one_and_matches_vanilla() {
    let s = random_points(40, 2, 3);
    let k = InteractionKernel::gaussian(0.1);
    let lp = vec![0.0; 40];
    assert_eq!(moka_weights_markov(&s, &[k], &lp, &plan()), vec![1.0]);
    let m = FrozenProposal::mixture(s.clone(), vec![k], vec![1.0], None).unwrap();
    let v = FrozenProposal::vanilla(s, k);
    for y in random_points(10, 2, 4).rows() {
        assert_eq!(m.log_density(y, y), v.log_density(y, y));
    }
}

#[test]
fn moka_identical_kernels_tie_to_uniform() {
    let s = random_points(30, 1, 8);
    let t = one_d_target();
    let lp: Vec<f64> = s.rows().map(|x| t.log_density(x)).collect();
    let k = InteractionKernel::gaussian(0.05);
    assert_eq!(moka_weights_markov(&s, &[k, k], &lp, &plan()), vec![0.5, 0.5]);
}

/// `(1/N) sum_i |a D_1(X_i) + (1-a) D_2(X_i) - pi~(X_i)|` with plain loops.
fn l1_objective(cols: &[Vec<f64>; 2], pi: &[f64], a: f64) -> f64 {
    let n = pi.len();
    (0..n).map(|i| (a * cols[0][i] + (1.0 - a) * cols[1][i] - pi[i]).abs()).sum::<f64>() / n as f64
}

#[test]
fn moka_two_kernels_match_grid_search() {
    let t = one_d_target();
    let n = 50;
    let s = random_points(n, 1, 21);
    let kernels = [InteractionKernel::gaussian(0.02), InteractionKernel::gaussian(0.3)];
    let lp: Vec<f64> = s.rows().map(|x| t.log_density(x)).collect();
    let w = vec![1.0 / n as f64; n];
    let cols: [Vec<f64>; 2] = [0, 1].map(|p| {
        let c = naive_kernel_sum(&s, &s, &kernels[p], &w);
        let z: f64 = c.iter().sum();
        c.iter().map(|v| v / z).collect()
    });
    let pz: f64 = lp.iter().map(|l| l.exp()).sum();
    let pi: Vec<f64> = lp.iter().map(|l| l.exp() / pz).collect();
    let (best_a, best_obj) = (0..=1000)
        .map(|k| k as f64 / 1000.0)
        .map(|a| (a, l1_objective(&cols, &pi, a)))
        .fold((0.0, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
    let got = moka_weights_markov(&s, &kernels, &lp, &plan());
    let obj = l1_objective(&cols, &pi, got[0]);
    assert!((got[0] + got[1] - 1.0).abs() < 1e-12);
    assert!(obj <= best_obj + 1e-6, "objective {obj} vs grid {best_obj}");
    assert!((got[0] - best_a).abs() <= 0.01, "weight {} vs grid {best_a}", got[0]);
    assert!((markov_objective(&cols, &pi, &got) - obj).abs() < 1e-12);
}

#[test]
fn kids_trivial_cases() {
    let k = InteractionKernel::gaussian(0.1);
    let one = Points::from_rows(&[[0.5, 0.5]]);
    assert_eq!(kids_weights(&one, &k, &[-3.0], 17, &plan()).weights, vec![1.0]);
    let s = random_points(10, 2, 1);
    let lp: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
    assert_eq!(kids_weights(&s, &k, &lp, 0, &plan()).weights, vec![0.1; 10]);
}

#[test]
fn kids_uniform_weights_is_vanilla() {
    let s = random_points(25, 2, 6);
    let k = InteractionKernel::gaussian(0.08);
    let kids = FrozenProposal::mixture(s.clone(), vec![k], vec![1.0], Some(vec![0.04; 25])).unwrap();
    let v = FrozenProposal::vanilla(s, k);
    for y in random_points(10, 2, 7).rows() {
        assert!(common::rel_err(kids.log_density(y, y), v.log_density(y, y)) < 1e-13);
    }
}

/// `-sum_j pi~_j ln sum_k w_k K(X_j - X_k)` with plain loops.
fn surrogate(s: &Points, k: &InteractionKernel, pi: &[f64], w: &[f64]) -> f64 {
    let kw = naive_kernel_sum(s, s, k, w);
    pi.iter().zip(&kw).map(|(p, d)| -p * d.ln()).sum()
}

#[test]
fn kids_three_particles_match_simplex_grid_search() {
    let s = Points::from_rows(&[[0.2], [0.45], [0.8]]);
    let k = InteractionKernel::gaussian(0.15);
    let pi = [0.2, 0.5, 0.3];
    let lp: Vec<f64> = pi.iter().map(|p: &f64| p.ln()).collect();
    let step = 0.002;
    let m = (1.0 / step) as usize;
    let mut best = (f64::INFINITY, [0.0; 3]);
    for a in 0..=m {
        for b in 0..=(m - a) {
            let w = [a as f64 * step, b as f64 * step, (m - a - b) as f64 * step];
            let v = surrogate(&s, &k, &pi, &w);
            if v < best.0 {
                best = (v, w);
            }
        }
    }
    let mut prev = f64::INFINITY;
    for iters in 0..=50 {
        let w = kids_weights(&s, &k, &lp, iters, &plan()).weights;
        let v = surrogate(&s, &k, &pi, &w);
        assert!(v <= prev + 1e-12, "surrogate rose at {iters}: {prev} -> {v}");
        assert!((v - kids_surrogate(&s, &k, &lp, &w, &plan())).abs() < 1e-12);
        prev = v;
    }
    let w = kids_weights(&s, &k, &lp, 50, &plan()).weights;
    for (a, b) in w.iter().zip(&best.1) {
        assert!((a - b).abs() <= 0.02, "rl {w:?} grid {:?}", best.1);
    }
}

#[test]
fn bgk_translation_shifts_means_only() {
    let s = random_points(40, 2, 13);
    let shift = [0.37, -1.25];
    let a = bgk_moments(&s, 0.3, 1e-8, &plan()).unwrap();
    let b = bgk_moments(&s.translated(&shift), 0.3, 1e-8, &plan()).unwrap();
    for j in 0..40 {
        for c in 0..2 {
            assert!((b.means.row(j)[c] - a.means.row(j)[c] - shift[c]).abs() < 1e-12);
        }
        for (u, v) in a.covariances[j].iter().zip(&b.covariances[j]) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn bgk_density_integrates_to_one() {
    let s = random_points(12, 1, 2);
    let m = bgk_moments(&s, 0.25, 1e-4, &plan()).unwrap();
    let (lo, hi, cells) = (-3.0, 4.0, 400_000);
    let h = (hi - lo) / cells as f64;
    let mut acc = 0.0;
    for i in 0..=cells {
        let x = lo + i as f64 * h;
        let w = if i == 0 || i == cells { 0.5 } else { 1.0 };
        acc += w * m.log_density(&[x]).exp();
    }
    assert!((acc * h - 1.0).abs() < 1e-3, "{}", acc * h);
}

#[test]
fn bgk_density_matches_explicit_gaussians() {
    let s = random_points(6, 2, 3);
    let m = bgk_moments(&s, f64::INFINITY, 1e-3, &plan()).unwrap();
    for y in random_points(5, 2, 4).rows() {
        let mut acc = 0.0;
        for j in 0..6 {
            let c = &m.covariances[j];
            let det = c[0] * c[3] - c[1] * c[2];
            let dx = [y[0] - m.means.row(j)[0], y[1] - m.means.row(j)[1]];
            let q = (c[3] * dx[0] * dx[0] - 2.0 * c[1] * dx[0] * dx[1] + c[0] * dx[1] * dx[1]) / det;
            acc += (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt());
        }
        assert!(common::rel_err(m.log_density(y).exp(), acc / 6.0) < 1e-10);
    }
}

#[test]
fn full_exploration_is_a_gaussian_random_walk() {
    let t = TargetSpec::from_id("banana3").unwrap().build().unwrap();
    let s = random_points(20, 2, 9);
    let q = FrozenProposal::vanilla(s.clone(), InteractionKernel::uniform_ball(0.05))
        .with_exploration(Some(Exploration { prob: 1.0, std: 0.3 }));
    let zero = FrozenProposal::vanilla(s.clone(), InteractionKernel::uniform_ball(0.05))
        .with_exploration(Some(Exploration { prob: 0.0, std: 0.3 }));
    let base = FrozenProposal::vanilla(s, InteractionKernel::uniform_ball(0.05));
    let xs = random_points(30, 2, 10);
    let ys = random_points(30, 2, 11);
    for (x, y) in xs.rows().zip(ys.rows()) {
        let g = kernel_density(&InteractionKernel::gaussian(0.3), &[y[0] - x[0], y[1] - x[1]]);
        assert!(common::rel_err(q.log_density(y, x).exp(), g) < 1e-12);
        let la = log_acceptance_ratio(x, y, &q, &t).unwrap();
        assert!((la - (t.log_density(y) - t.log_density(x))).abs() < 1e-12);
        assert_eq!(zero.log_density(y, x), base.log_density(y, x));
    }
    let mut r1 = particle_rng(1, 2, 3);
    let mut r2 = particle_rng(1, 2, 3);
    let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
    for _ in 0..100 {
        zero.sample(&[0.5, 0.5], &mut r1, &mut a);
        base.sample(&[0.5, 0.5], &mut r2, &mut b);
        assert_eq!(a, b);
    }
}

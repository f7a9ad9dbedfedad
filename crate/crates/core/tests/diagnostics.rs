mod common;

use swarm_mc::diagnostics::{fraction_near, is_estimates, log_z_and_ess, mse_logz, pooled_log_z};
use swarm_mc::kernels::{InteractionKernel, KernelSumPlan};
use swarm_mc::prelude::*;

use common::{naive_energy, random_points};

fn plan() -> KernelSumPlan {
    KernelSumPlan::default()
}

#[test]
fn energy_distance_trivial_cases() {
    let x = random_points(50, 3, 1);
    assert!(energy_distance(&x, &x, &plan()).abs() < 1e-12);
    let a = Points::from_rows(&[[0.0]]);
    let b = Points::from_rows(&[[1.0]]);
    assert_eq!(energy_distance(&a, &b, &plan()), 2.0);
}

#[test]
fn energy_distance_matches_triple_loop() {
    let x = random_points(64, 2, 2);
    let y = random_points(64, 2, 3);
    let e = energy_distance(&x, &y, &plan());
    assert!(common::rel_err(e, naive_energy(&x, &y)) < 1e-12);
    let z = random_points(37, 2, 4);
    assert!(common::rel_err(energy_distance(&x, &z, &plan()), naive_energy(&x, &z)) < 1e-12);
}

#[test]
fn energy_distance_is_exactly_symmetric() {
    for s in 0..20 {
        let x = random_points(30 + s, 2, s as u64);
        let y = random_points(30 + (s * 7) % 11, 2, 100 + s as u64);
        assert_eq!(energy_distance(&x, &y, &plan()).to_bits(), energy_distance(&y, &x, &plan()).to_bits());
    }
}

#[test]
fn reference_distance_agrees_with_direct_formula() {
    let r = random_points(80, 2, 5);
    let x = random_points(60, 2, 6);
    let reference = EnergyReference::new(r.clone(), plan());
    assert!((reference.distance(&x) - energy_distance(&x, &r, &plan())).abs() < 1e-13);
}

#[test]
fn energy_distance_is_nonnegative_on_average() {
    let t = TargetSpec::from_id("banana3").unwrap().build().unwrap();
    let b = iid_baseline(&t, 100, 50, 9).unwrap();
    assert!(b.mean >= -1e-3);
    assert!(b.mean > 0.0);
}

#[test]
fn baseline_single_rep_and_shrinkage() {
    let t = TargetSpec::from_id("banana3").unwrap().build().unwrap();
    let one = iid_baseline(&t, 200, 1, 3).unwrap();
    assert_eq!(one.q05, one.values[0]);
    assert_eq!(one.q95, one.values[0]);
    assert_eq!(one.mean, one.values[0]);
    let small = iid_baseline(&t, 1000, 5, 4).unwrap();
    let large = iid_baseline(&t, 4000, 5, 4).unwrap();
    assert!(large.mean < small.mean, "{} vs {}", large.mean, small.mean);
    assert!(small.q05 <= small.mean && small.mean <= small.q95);
}

#[test]
fn weights_summaries() {
    let (lz, ess) = log_z_and_ess(&[0.0; 10]).unwrap();
    assert!(lz.abs() < 1e-15 && (ess - 10.0).abs() < 1e-12);
    let mut single = vec![f64::NEG_INFINITY; 10];
    single[3] = 1.5;
    let (lz, ess) = log_z_and_ess(&single).unwrap();
    assert_eq!(ess, 1.0);
    assert!((lz - (1.5 - 10f64.ln())).abs() < 1e-15);
    assert!(matches!(log_z_and_ess(&[f64::NEG_INFINITY; 4]), Err(Error::DegenerateWeights)));
}

#[test]
fn ess_bounds_and_permutation_invariance() {
    let lw: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 / 13.0 - 3.0).collect();
    let (lz, ess) = log_z_and_ess(&lw).unwrap();
    assert!((1.0..=200.0).contains(&ess) && ess < 200.0);
    let mut rev = lw.clone();
    rev.reverse();
    let (lz2, _) = log_z_and_ess(&rev).unwrap();
    assert!((lz - lz2).abs() < 1e-14);
    // Direct arithmetic.
    let w: Vec<f64> = lw.iter().map(|l| l.exp()).collect();
    let s: f64 = w.iter().sum();
    assert!(((s / 200.0).ln() - lz).abs() < 1e-13);
    let want_ess = 1.0 / w.iter().map(|x| (x / s).powi(2)).sum::<f64>();
    assert!((ess - want_ess).abs() < 1e-9);
}

#[test]
fn self_normalized_expectation() {
    let ys = Points::from_rows(&[[0.0], [1.0], [2.0]]);
    let lw = [0.0, 2f64.ln(), f64::NEG_INFINITY];
    let phi = |y: &[f64]| y[0] * 10.0;
    let est = is_estimates(&ys, &lw, Some(&phi)).unwrap();
    assert!((est.expectation.unwrap() - 20.0 / 3.0).abs() < 1e-12);
    assert!((est.log_z - 1f64.ln()).abs() < 1e-15);
}

#[test]
fn target_proposal_gives_unit_weights() {
    // Independent proposal Theta = pi / Z for a normalized target: Z^ = 1.
    let t = TargetSpec::from_id("banana3").unwrap().build().unwrap();
    let z = t.known_log_normalizer().unwrap();
    let normalized = t.clone().with_log_normalizer(z);
    let ys = rejection_sample(&normalized, 500, 2).unwrap();
    let lw: Vec<f64> = ys.rows().map(|y| (t.log_density(y) - z) - (t.log_density(y) - z)).collect();
    let (lz, ess) = log_z_and_ess(&lw).unwrap();
    assert!(lz.abs() < 1e-12 && (ess - 500.0).abs() < 1e-9);
}

#[test]
fn scaled_uniform_normalizer() {
    let c: f64 = 3.7;
    let t = TargetDensity::flat(BoxSupport::unit(2), c.ln());
    let spec = ProposalSpec::new(ProposalFamily::Vanilla {
        kernel: InteractionKernel::uniform_ball(0.1),
    });
    let state = ProposalState::new(spec, t.support().diameter()).unwrap();
    let mut s = initialize_swarm(10_000, t.support(), 12, InitScheme::Uniform);
    let mut last = None;
    for _ in 0..5 {
        let q = state.freeze(&s, &t).unwrap();
        let (next, trace) = cmc_step(&s, &q, &t, &AcceptanceFunction::Metropolis).unwrap();
        last = Some(trace);
        s = next;
    }
    let (lz, _) = log_z_and_ess(&last.unwrap().log_weights).unwrap();
    assert!((3.5..=3.9).contains(&lz.exp()), "{}", lz.exp());
}

#[test]
fn mse_by_hand() {
    assert_eq!(mse_logz(&[0.3, 0.3], 0.3), 0.0);
    assert!((mse_logz(&[0.5], 0.2) - 0.09).abs() < 1e-15);
    let est = [0.1, -0.2, 0.05, 0.3, 0.0, -0.1, 0.25, 0.15, -0.05, 0.2];
    // Squared errors against 0.1: 0, .09, .0025, .04, .01, .04, .0225, .0025, .0225, .01.
    assert!((mse_logz(&est, 0.1) - 0.24 / 10.0).abs() < 1e-15);
}

#[test]
fn pooled_average_and_fraction_near() {
    let p = pooled_log_z(&[0.0, 2f64.ln()]);
    assert!((p - 1.5f64.ln()).abs() < 1e-15);
    let pts = Points::from_rows(&[[0.0, 0.0], [0.1, 0.0], [1.0, 1.0], [0.0, 0.3]]);
    assert_eq!(fraction_near(&pts, &[0.0, 0.0], 0.3), 0.75);
}

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swarm_mc::meanfield::*;
use swarm_mc::sampler::AcceptanceFunction;

const KINDS: [GridProposal; 3] = [
    GridProposal::Convolution { sigma: 0.1 },
    GridProposal::Degenerate,
    GridProposal::Linear { sigma: 0.1 },
];

fn setup(cells: usize) -> (Grid, GridDensity) {
    let grid = Grid::unit(1, cells).unwrap();
    let pi = default_grid_target(&grid).unwrap();
    (grid, pi)
}

fn random_density(grid: &Grid, seed: u64) -> GridDensity {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..grid.len()).map(|_| rng.random_range(0.2..2.0)).collect();
    GridDensity::new(grid.clone(), v).unwrap()
}

#[test]
fn target_is_a_fixed_point() {
    let (_, pi) = setup(256);
    for h in [AcceptanceFunction::Metropolis, AcceptanceFunction::Barker] {
        for p in KINDS {
            let t = transition_operator(&pi, p, &pi, &h).unwrap();
            let err = t.values().iter().zip(pi.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-10, "{p:?}: {err}");
        }
    }
}

#[test]
fn mass_is_conserved() {
    let (grid, pi) = setup(128);
    let f = random_density(&grid, 1);
    for p in KINDS {
        let t = transition_operator(&f, p, &pi, &AcceptanceFunction::Metropolis).unwrap();
        assert!((t.mass() - 1.0).abs() < 1e-12);
        // Before renormalization the drift sums to zero too.
        let raw: f64 = t.values().iter().sum::<f64>() * grid.cell_volume();
        assert!((raw - 1.0).abs() < 1e-12);
    }
}

#[test]
fn unit_step_equals_repeated_operator() {
    let (grid, pi) = setup(64);
    let f0 = random_density(&grid, 2);
    let p = GridProposal::Convolution { sigma: 0.1 };
    let h = AcceptanceFunction::Metropolis;
    let traj = Evolution::new(p, 1.0, 5).run(&f0, &pi).unwrap();
    let mut f = f0;
    for _ in 0..5 {
        f = transition_operator(&f, p, &pi, &h).unwrap();
    }
    assert_eq!(f.values(), traj.last.values());
}

#[test]
fn target_start_stays_put() {
    let (_, pi) = setup(64);
    let traj = Evolution::new(GridProposal::Degenerate, 0.5, 10).run(&pi, &pi).unwrap();
    for r in &traj.records {
        assert!(r.chi2 < 1e-20);
        assert!((r.min_ratio - 1.0).abs() < 1e-12 && (r.max_ratio - 1.0).abs() < 1e-12);
    }
}

#[test]
fn entropies_and_dissipation_signs() {
    let (grid, pi) = setup(64);
    let h = AcceptanceFunction::Metropolis;
    for phi in [Phi::Chi2, Phi::Kl] {
        assert!(entropy(&pi, &pi, phi).abs() < 1e-15);
        for p in KINDS {
            assert!(dissipation(&pi, &pi, p, &h, phi).abs() < 1e-15);
        }
    }
    for seed in 0..10 {
        let f = random_density(&grid, 10 + seed);
        assert!(entropy(&f, &pi, Phi::Kl) >= 0.0);
        assert!(entropy(&f, &pi, Phi::Chi2) > 0.0);
        for p in KINDS {
            assert!(dissipation(&f, &pi, p, &h, Phi::Chi2) >= 0.0);
            assert!(dissipation(&f, &pi, p, &h, Phi::Kl) >= 0.0);
        }
    }
}

#[test]
fn dissipation_is_the_entropy_slope() {
    let (grid, pi) = setup(64);
    let f0 = random_density(&grid, 3);
    let p = GridProposal::Convolution { sigma: 0.1 };
    let h = AcceptanceFunction::Metropolis;
    let d0 = dissipation(&f0, &pi, p, &h, Phi::Chi2);
    let err = |dt: f64| {
        let tr = Evolution::new(p, dt, 1).run(&f0, &pi).unwrap();
        ((tr.records[0].chi2 - tr.records[1].chi2) / dt - d0).abs()
    };
    let (e1, e2) = (err(0.02), err(0.01));
    assert!(e1 < 0.05 * d0, "{e1} vs {d0}");
    let ratio = e2 / e1;
    assert!((0.4..0.6).contains(&ratio), "{ratio}");
}

#[test]
fn ratio_extremes() {
    let (grid, pi) = setup(64);
    assert_eq!(min_max_ratio(&pi, &pi), (1.0, 1.0));
    let n = grid.len();
    let half: Vec<f64> = pi.values().iter().enumerate().map(|(k, v)| if k < n / 2 { 2.0 * v } else { 0.0 }).collect();
    let f = GridDensity::new(grid, half).unwrap();
    let (lo, hi) = min_max_ratio(&f, &pi);
    assert_eq!(lo, 0.0);
    let half_mass: f64 = pi.values()[..n / 2].iter().sum::<f64>() * f.grid().cell_volume();
    assert!((hi - 1.0 / half_mass).abs() < 1e-12);
}

#[test]
fn ratio_zero_two_on_uniform_target() {
    // Uniform target: doubling half the cells keeps unit mass.
    let grid = Grid::unit(1, 64).unwrap();
    let pi = GridDensity::uniform(grid.clone());
    let f = GridDensity::new(grid, (0..64).map(|k| if k < 32 { 2.0 } else { 0.0 }).collect()).unwrap();
    assert_eq!(min_max_ratio(&f, &pi), (0.0, 2.0));
}

#[test]
fn chi2_and_ratio_bounds_are_monotone() {
    let (grid, pi) = setup(128);
    let f0 = random_density(&grid, 4);
    for p in KINDS {
        let traj = Evolution::new(p, 1.0, 100).run(&f0, &pi).unwrap();
        for w in traj.records.windows(2) {
            assert!(w[1].chi2 <= w[0].chi2 + 1e-12, "{p:?}");
            assert!(w[1].min_ratio >= w[0].min_ratio - 1e-9, "{p:?}");
            assert!(w[1].max_ratio <= w[0].max_ratio + 1e-9, "{p:?}");
            assert!(w[1].kl <= w[0].kl + 1e-12, "{p:?}");
        }
    }
}

#[test]
fn grid_micro_reversibility() {
    let (grid, pi) = setup(64);
    let f = random_density(&grid, 5);
    for h in [AcceptanceFunction::Metropolis, AcceptanceFunction::Barker] {
        for p in KINDS {
            assert!(check_micro_reversibility_grid(&f, p, &pi, &h) <= 1e-12);
        }
    }
    // h(u) = u^2 breaks u h(1/u) = h(u).
    let bad = AcceptanceFunction::Custom(Arc::new(|l| 2.0 * l));
    assert!(check_micro_reversibility_grid(&f, GridProposal::Degenerate, &pi, &bad) > 1e-3);
}

#[test]
fn decay_rate_fit_recovers_exponent() {
    let t: Vec<f64> = (0..50).map(|k| k as f64 * 0.1).collect();
    let h: Vec<f64> = t.iter().map(|t| 3.0 * (-1.7 * t).exp()).collect();
    assert!((fit_decay_rate(&t, &h).unwrap() - 1.7).abs() < 1e-12);
    assert_eq!(fit_decay_rate(&[0.0, 1.0], &[1.0, 0.9]), None);
}

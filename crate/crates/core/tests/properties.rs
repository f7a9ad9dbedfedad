mod common;

use proptest::prelude::*;
use swarm_mc::kernels::{kernel_sum_with, log_kernel_sum, InteractionKernel, KernelSumPlan};
use swarm_mc::prelude::*;
use swarm_mc::sampler::log_flux;

use common::{naive_kernel_sum, rel_err};

fn points(n: usize, d: usize) -> impl Strategy<Value = Points> {
    prop::collection::vec(0.0f64..1.0, n * d).prop_map(move |v| Points::new(d, v))
}

fn families() -> Vec<(ProposalFamily, Option<Exploration>)> {
    let explore = Some(Exploration { prob: 0.05, std: 0.3 });
    let fams = vec![
        ProposalFamily::Pmh {
            kernel: InteractionKernel::gaussian(0.1),
        },
        ProposalFamily::Vanilla {
            kernel: InteractionKernel::uniform_ball(0.3),
        },
        ProposalFamily::Vanilla {
            kernel: InteractionKernel::gaussian(0.1),
        },
        ProposalFamily::Moka {
            kernels: vec![InteractionKernel::uniform_ball(0.1), InteractionKernel::gaussian(0.2)],
            weight_mode: WeightMode::Markov,
        },
        ProposalFamily::Moka {
            kernels: vec![InteractionKernel::gaussian(0.05), InteractionKernel::gaussian(0.2)],
            weight_mode: WeightMode::Adaptive,
        },
        ProposalFamily::Kids {
            kernel: InteractionKernel::gaussian(0.1),
            rl_iters: 10,
        },
        ProposalFamily::Bgk { threshold: 0.3 },
    ];
    fams.into_iter().flat_map(|f| [(f.clone(), None), (f, explore)]).collect()
}

fn log_flux_agrees(a: f64, b: f64) -> bool {
    (a == f64::NEG_INFINITY && b == f64::NEG_INFINITY) || (a - b).abs() <= 1e-12 * a.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn micro_reversibility_every_family(swarm in points(16, 2), x in points(1, 2), y in points(1, 2), barker in any::<bool>()) {
        let t = TargetSpec::from_id("banana3").unwrap().build().unwrap();
        let s = ParticleSwarm::new(swarm, 1);
        let h = if barker { AcceptanceFunction::Barker } else { AcceptanceFunction::Metropolis };
        for (family, exploration) in families() {
            let spec = ProposalSpec { family, exploration };
            let q = ProposalState::new(spec, 2f64.sqrt()).unwrap().freeze(&s, &t).unwrap();
            let (x, y) = (x.row(0), y.row(0));
            let a = log_flux(x, y, &q, &t, &h);
            let b = log_flux(y, x, &q, &t, &h);
            prop_assert!(log_flux_agrees(a, b), "{:?}: {} vs {}", q.mixture_weights(), a, b);
        }
    }

    #[test]
    fn acceptance_functions_satisfy_the_balance_identity(l in -50.0f64..50.0) {
        for h in [AcceptanceFunction::Metropolis, AcceptanceFunction::Barker] {
            let lhs = l + h.log_h(-l);
            prop_assert!((lhs - h.log_h(l)).abs() <= 1e-12 * l.abs().max(1.0));
            prop_assert!(h.log_h(l) <= 0.0);
        }
    }

    #[test]
    fn freezing_ignores_swarm_order(swarm in points(12, 2), perm in Just((0..12).collect::<Vec<usize>>()).prop_shuffle()) {
        let t = TargetSpec::from_id("banana3").unwrap().build().unwrap();
        let s = ParticleSwarm::new(swarm, 5);
        let p = s.permuted(&perm);
        let ys = common::random_points(6, 2, 1);
        for (family, exploration) in families() {
            let state = ProposalState::new(ProposalSpec { family, exploration }, 2f64.sqrt()).unwrap();
            let qa = state.freeze(&s, &t).unwrap();
            let qb = state.freeze(&p, &t).unwrap();
            for y in ys.rows() {
                let (da, db) = (qa.log_density(y, &[0.5, 0.5]), qb.log_density(y, &[0.5, 0.5]));
                prop_assert!(da.to_bits() == db.to_bits());
            }
            let (na, _) = cmc_step(&s, &qa, &t, &AcceptanceFunction::Metropolis).unwrap();
            let (nb, _) = cmc_step(&p, &qb, &t, &AcceptanceFunction::Metropolis).unwrap();
            prop_assert_eq!(na.canonical_positions(), nb.canonical_positions());
        }
    }

    #[test]
    fn proposal_densities_are_translation_invariant(swarm in points(10, 2), x in points(1, 2), y in points(1, 2), c in prop::array::uniform2(-2.0f64..2.0)) {
        let shifted = swarm.translated(&c);
        let sh = |p: &[f64]| [p[0] + c[0], p[1] + c[1]];
        let (x, y) = (x.row(0), y.row(0));
        let explore = Some(Exploration { prob: 0.1, std: 0.2 });
        let pairs = [
            (FrozenProposal::pmh(2, InteractionKernel::gaussian(0.1)), FrozenProposal::pmh(2, InteractionKernel::gaussian(0.1))),
            (FrozenProposal::vanilla(swarm.clone(), InteractionKernel::gaussian(0.1)), FrozenProposal::vanilla(shifted.clone(), InteractionKernel::gaussian(0.1))),
            (
                FrozenProposal::bgk(swarm_mc::proposals::bgk_moments(&swarm, 0.4, 1e-6, &KernelSumPlan::default()).unwrap()),
                FrozenProposal::bgk(swarm_mc::proposals::bgk_moments(&shifted, 0.4, 1e-6, &KernelSumPlan::default()).unwrap()),
            ),
        ];
        for (a, b) in pairs {
            let (a, b) = (a.with_exploration(explore), b.with_exploration(explore));
            let la = a.log_density(y, x);
            let lb = b.log_density(&sh(y), &sh(x));
            prop_assert!((la - lb).abs() <= 1e-9 * la.abs().max(1.0), "{} vs {}", la, lb);
        }
    }

    #[test]
    fn engine_matches_naive_at_any_worker_count(
        m in 1usize..90,
        n in 1usize..90,
        d in 1usize..5,
        tile in 1usize..40,
        seed in any::<u64>(),
        scale in 0.05f64..0.6,
    ) {
        let q = common::random_points(m, d, seed);
        let s = common::random_points(n, d, seed ^ 1);
        let w: Vec<f64> = (0..n).map(|j| 0.5 + (j % 7) as f64 / 7.0).collect();
        for k in [InteractionKernel::gaussian(scale), InteractionKernel::uniform_ball(scale)] {
            let want = naive_kernel_sum(&q, &s, &k, &w);
            let mut first: Option<Vec<f64>> = None;
            for workers in [1, 2, 8] {
                let plan = KernelSumPlan { tile, workers: Some(workers) };
                let got = kernel_sum_with(&q, &s, &k, &w, &plan);
                for (g, e) in got.iter().zip(&want) {
                    prop_assert!(rel_err(*g, *e) <= 1e-12 || (e.abs() < 1e-300 && g.abs() < 1e-300));
                }
                match &first {
                    None => first = Some(got),
                    Some(f) => prop_assert!(f.iter().zip(&got).all(|(a, b)| a.to_bits() == b.to_bits())),
                }
                if let InteractionKernel::Gaussian { .. } = k {
                    let lg = log_kernel_sum(&q, &s, &k, &w, &plan);
                    for (l, e) in lg.iter().zip(&want) {
                        if *e > 1e-250 {
                            prop_assert!((l - e.ln()).abs() <= 1e-12 * e.ln().abs().max(1.0));
                        }
                    }
                }
            }
        }
    }
}

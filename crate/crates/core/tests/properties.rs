use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use caladin::aladin::{bfgs_round, reduced_round, ConsensusState, RoundSettings};
use caladin::consensus_admm::admm2_round;
use caladin::diagnostics::{
    affine_distance, aggregate_identity_residual, primal_update_residual, lyapunov, reference_optimum, LyapunovRef,
};
use caladin::fed::{Aggregation, FedAlgorithm, FedRunner, FedSettings, LocalSearch};
use caladin::linalg::Vector;
use caladin::local_solver::InexactSolveSettings;
use caladin::problems::{
    make_least_squares, make_linear_regression, ConsensusProblem, DataShard, LinearRegressionAgent, Objective,
};

/// Regression agents whose features live in the first `rank` coordinates, so
/// the optimal set is `z* + span(e_rank, …, e_{n-1})`.
fn rank_deficient(n: usize, rank: usize, agents: usize, seed: u64) -> ConsensusProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let objectives = (0..agents)
        .map(|_| {
            let features: Vec<Vector> = (0..8)
                .map(|_| Vector::from_fn(n, |j| if j < rank { rng.random_range(-1.0..1.0) } else { 0.0 }))
                .collect();
            let labels = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
            Arc::new(LinearRegressionAgent {
                shard: DataShard { features, labels },
            }) as Arc<dyn Objective>
        })
        .collect();
    ConsensusProblem::new("rank-deficient", n, objectives).unwrap()
}

/// On a convex problem with a non-unique optimum, the Lyapunov function taken
/// at any fixed optimal point is non-increasing and `z` reaches the optimal
/// set. The distance of `z` itself to the set is not monotone.
#[test]
fn converges_to_nonunique_optimal_set() {
    let (n, rank, rho) = (5, 2, 1.0);
    for seed in 0..3 {
        let p = rank_deficient(n, rank, 6, seed);
        let z_min = reference_optimum(&p, None).unwrap().z;
        let basis: Vec<Vector> = (rank..n).map(|j| Vector::unit(n, j)).collect();
        let mut state = ConsensusState::zeros(&p, None);
        state.global.z = Vector::from_fn(n, |j| 3.0 - j as f64);
        // nearest optimal point to the start
        let anchor = Vector::from_fn(n, |j| if j < rank { z_min[j] } else { state.global.z[j] });
        let r = LyapunovRef::new(&p, &anchor, rho).unwrap();
        let l0 = lyapunov(&state, &r);
        let mut prev = l0;
        for _ in 0..300 {
            state = reduced_round(&p, &state, rho, &RoundSettings::default()).unwrap().state;
            let l = lyapunov(&state, &r);
            assert!(l <= prev + 1e-8 * (1.0 + l0), "seed {seed}: Lyapunov rose from {prev:e} to {l:e}");
            prev = l;
        }
        let d = affine_distance(&state.global.z, &z_min, &basis);
        assert!(d < 1e-6, "seed {seed}: final distance {d:e}");
    }
}

#[test]
fn bfgs_contracts_faster_than_reduced() {
    for seed in 0..3 {
        let p = make_least_squares(10, 20, seed).unwrap();
        let z_star = p.optimum_hint.clone().unwrap();
        let r = LyapunovRef::new(&p, &z_star, 100.0).unwrap();
        let settings = RoundSettings::default();
        let mut red = ConsensusState::zeros(&p, None);
        let mut bf = ConsensusState::zeros(&p, Some(100.0));
        let mut red_l = vec![lyapunov(&red, &r)];
        let mut bf_l = vec![lyapunov(&bf, &r)];
        for _ in 0..10 {
            red = reduced_round(&p, &red, 100.0, &settings).unwrap().state;
            bf = bfgs_round(&p, &bf, 100.0, &settings).unwrap().state;
            red_l.push(lyapunov(&red, &r));
            bf_l.push(lyapunov(&bf, &r));
        }
        assert!(bf_l[10] < red_l[10], "seed {seed}: bfgs {:e} vs reduced {:e}", bf_l[10], red_l[10]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reduced_round_identities(seed in 0u64..1000, agents in 1usize..8, n in 1usize..6, rho in 0.5f64..200.0) {
        let p = make_least_squares(n, agents, seed).unwrap();
        let mut state = ConsensusState::zeros(&p, None);
        for _ in 0..5 {
            let next = reduced_round(&p, &state, rho, &RoundSettings::default()).unwrap().state;
            let scale = 1.0 + next.max_dual_inf();
            prop_assert!(next.dual_sum().norm_inf() <= 1e-9 * scale);
            prop_assert!(primal_update_residual(&state, &next, rho) <= 1e-9 * scale);
            prop_assert!(aggregate_identity_residual(&state, &next) <= 1e-9 * scale * agents as f64);
            state = next;
        }
    }

    #[test]
    fn lyapunov_nonincreasing_on_least_squares(seed in 0u64..1000, agents in 2usize..10, rho in 1.0f64..200.0) {
        let p = make_least_squares(4, agents, seed).unwrap();
        let r = LyapunovRef::new(&p, p.optimum_hint.as_ref().unwrap(), rho).unwrap();
        let mut state = ConsensusState::zeros(&p, None);
        let l0 = lyapunov(&state, &r);
        let mut prev = l0;
        for _ in 0..20 {
            state = reduced_round(&p, &state, rho, &RoundSettings::default()).unwrap().state;
            let l = lyapunov(&state, &r);
            prop_assert!(l <= prev + 1e-8 * (1.0 + l0));
            prev = l;
        }
    }

    #[test]
    fn admm2_keeps_dual_sum_zero(seed in 0u64..1000, agents in 2usize..8, rho in 0.5f64..200.0) {
        let p = make_least_squares(3, agents, seed).unwrap();
        let mut state = ConsensusState::zeros(&p, None);
        for _ in 0..10 {
            state = admm2_round(&p, &state, rho, &RoundSettings::default()).unwrap().state;
            prop_assert!(state.dual_sum().norm_inf() <= 1e-9 * (1.0 + state.max_dual_inf()));
        }
    }

    #[test]
    fn federated_uplink_is_one_vector_per_participant(
        seed in 0u64..1000,
        rate in 0.05f64..=1.0,
        fedadmm in any::<bool>(),
    ) {
        let p = make_linear_regression(4, 10, 12, true, seed).unwrap();
        let settings = FedSettings {
            algorithm: if fedadmm { FedAlgorithm::FedAdmm } else { FedAlgorithm::FedAladin },
            rho: 0.5,
            per_client_rho: None,
            search: LocalSearch::Inexact(InexactSolveSettings { epochs: 2, eta: 0.01 }),
            participation: rate,
            rounds: 4,
            aggregation: Aggregation::Sampled,
            seed,
        };
        let mut runner = FedRunner::new(&p, settings).unwrap();
        let expected = (rate * 10.0).ceil() as u64;
        while !runner.finished() {
            let before = runner.state.clients.clone();
            let plan = runner.step().unwrap();
            prop_assert_eq!(plan.participants.len() as u64, expected);
            prop_assert_eq!(runner.state.comm.up_per_round.last().copied(), Some(expected * 4));
            prop_assert_eq!(runner.state.comm.down_per_round.last().copied(), Some(expected * 4));
            for (i, (b, a)) in before.iter().zip(&runner.state.clients).enumerate() {
                if !plan.participants.contains(&i) {
                    prop_assert_eq!(b, a);
                }
            }
        }
    }

    #[test]
    fn generators_are_seed_deterministic(seed in any::<u64>()) {
        let a = make_linear_regression(3, 4, 5, true, seed).unwrap();
        let b = make_linear_regression(3, 4, 5, true, seed).unwrap();
        let x = Vector::from_fn(3, |i| i as f64 - 1.0);
        for (fa, fb) in a.agents.iter().zip(&b.agents) {
            prop_assert_eq!(fa.value(&x).unwrap().to_bits(), fb.value(&x).unwrap().to_bits());
        }
    }
}

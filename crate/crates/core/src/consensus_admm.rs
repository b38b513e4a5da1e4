//! Exact-search consensus ADMM in both orderings.
//!
//! Both variants reuse [`ConsensusState`]: `λ_i` holds the ADMM multiplier and
//! `g_i` the decoded gradient `ρ(z − x_i⁺) − λ_i` of the round's local solve.

use crate::aladin::{decode_gradient, exact_local_solves, ConsensusState, GlobalState, RoundOutput, RoundSettings, RoundStats};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::problems::ConsensusProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmmVariant {
    /// Dual update first, then aggregate `x⁺ + λ⁺/ρ`.
    DualFirst,
    /// Aggregate `x⁺ + λ/ρ` first, then update the dual against `z⁺`.
    AggregateFirst,
}

fn check(problem: &ConsensusProblem, state: &ConsensusState, rho: f64) -> Result<()> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
    }
    if state.agents.len() != problem.num_agents() {
        return Err(Error::DimensionMismatch {
            expected: problem.num_agents(),
            got: state.agents.len(),
        });
    }
    if state.global.z.len() != problem.n {
        return Err(Error::DimensionMismatch {
            expected: problem.n,
            got: state.global.z.len(),
        });
    }
    Ok(())
}

fn admm_round(
    problem: &ConsensusProblem,
    state: &ConsensusState,
    rho: f64,
    settings: &RoundSettings,
    variant: AdmmVariant,
) -> Result<RoundOutput> {
    check(problem, state, rho)?;
    let n = problem.n;
    let z = &state.global.z;
    let x_plus = exact_local_solves(problem, state, rho, &settings.exact)?;
    let (lambda_plus, z_plus): (Vec<Vector>, Vector) = match variant {
        AdmmVariant::DualFirst => {
            let lambda: Vec<Vector> = x_plus
                .iter()
                .zip(&state.agents)
                .map(|(x, a)| &a.lambda + &(x - z).scaled(rho))
                .collect();
            let targets: Vec<Vector> = x_plus
                .iter()
                .zip(&lambda)
                .map(|(x, l)| x + &l.scaled(1.0 / rho))
                .collect();
            (lambda, Vector::mean(n, targets.iter()))
        }
        AdmmVariant::AggregateFirst => {
            let targets: Vec<Vector> = x_plus
                .iter()
                .zip(&state.agents)
                .map(|(x, a)| x + &a.lambda.scaled(1.0 / rho))
                .collect();
            let z_plus = Vector::mean(n, targets.iter());
            let lambda = x_plus
                .iter()
                .zip(&state.agents)
                .map(|(x, a)| &a.lambda + &(x - &z_plus).scaled(rho))
                .collect();
            (lambda, z_plus)
        }
    };
    let agents = state
        .agents
        .iter()
        .zip(x_plus)
        .zip(lambda_plus)
        .map(|((old, x), lambda)| {
            let g = decode_gradient(&x, z, &old.lambda, rho);
            crate::aladin::AgentState {
                x_prev: old.x.clone(),
                g_prev: old.g.clone(),
                x,
                lambda,
                g,
                b: old.b.clone(),
                bfgs_updates: old.bfgs_updates,
            }
        })
        .collect();
    let next = ConsensusState {
        agents,
        global: GlobalState {
            z: z_plus,
            round: state.global.round + 1,
        },
    };
    let stats = RoundStats {
        dual_sum_inf: next.dual_sum().norm_inf(),
        max_dual_inf: next.max_dual_inf(),
        ..RoundStats::default()
    };
    Ok(RoundOutput { state: next, stats })
}

/// `λ⁺ = λ + ρ(x⁺ − z)`, `z⁺ = mean(x⁺ + λ⁺/ρ)`.
///
/// With exact solves `λ⁺ = −∇f_i(x⁺)`; the dual sum vanishes only at the
/// optimum.
pub fn admm1_round(
    problem: &ConsensusProblem,
    state: &ConsensusState,
    rho: f64,
    settings: &RoundSettings,
) -> Result<RoundOutput> {
    admm_round(problem, state, rho, settings, AdmmVariant::DualFirst)
}

/// `z⁺ = mean(x⁺ + λ/ρ)`, `λ⁺ = λ + ρ(x⁺ − z⁺)`. Keeps `Σλ_i` at its
/// initial value.
pub fn admm2_round(
    problem: &ConsensusProblem,
    state: &ConsensusState,
    rho: f64,
    settings: &RoundSettings,
) -> Result<RoundOutput> {
    admm_round(problem, state, rho, settings, AdmmVariant::AggregateFirst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_least_squares, make_logistic_regression};

    fn toy() -> ConsensusProblem {
        ConsensusProblem::least_squares_from(vec![vec![0.0].into(), vec![2.0].into()]).unwrap()
    }

    #[test]
    fn scripted_first_round() {
        let p = toy();
        let s = ConsensusState::zeros(&p, None);
        let set = RoundSettings::default();
        // x⁺ = argmin ½(x − ζ)² + ½x² = ζ/2
        let a1 = admm1_round(&p, &s, 1.0, &set).unwrap().state;
        assert!((a1.agents[0].x[0] - 0.0).abs() < 1e-12);
        assert!((a1.agents[1].x[0] - 1.0).abs() < 1e-12);
        assert!((a1.agents[1].lambda[0] - 1.0).abs() < 1e-12);
        assert!((a1.global.z[0] - 1.0).abs() < 1e-12);
        let a2 = admm2_round(&p, &s, 1.0, &set).unwrap().state;
        assert!((a2.global.z[0] - 0.5).abs() < 1e-12);
        assert!((a2.agents[0].lambda[0] + 0.5).abs() < 1e-12);
        assert!((a2.agents[1].lambda[0] - 0.5).abs() < 1e-12);
        assert_ne!(a1.global.z, a2.global.z);
    }

    fn optimal(p: &ConsensusProblem) -> ConsensusState {
        let z = p.optimum_hint.clone().unwrap();
        let mut s = ConsensusState::zeros(p, None);
        for (a, f) in s.agents.iter_mut().zip(&p.agents) {
            a.x = z.clone();
            a.lambda = -&f.gradient(&z).unwrap();
        }
        s.global.z = z;
        s
    }

    #[test]
    fn optimum_is_a_fixed_point_for_both() {
        let p = make_least_squares(4, 5, 3).unwrap();
        let s = optimal(&p);
        for round in [admm1_round, admm2_round] {
            let out = round(&p, &s, 10.0, &RoundSettings::default()).unwrap().state;
            assert!(out.global.z.max_abs_diff(&s.global.z) < 1e-10);
            for (a, b) in out.agents.iter().zip(&s.agents) {
                assert!(a.lambda.max_abs_diff(&b.lambda) < 1e-10);
            }
        }
    }

    #[test]
    fn dual_first_multiplier_is_negative_gradient() {
        let p = make_logistic_regression(4, 3, 20, 0.01, 1).unwrap();
        let set = RoundSettings::default();
        let mut s = ConsensusState::zeros(&p, None);
        for _ in 0..5 {
            s = admm1_round(&p, &s, 2.0, &set).unwrap().state;
            for (a, f) in s.agents.iter().zip(&p.agents) {
                let g = f.gradient(&a.x).unwrap();
                assert!((&a.lambda + &g).norm_inf() <= 10.0 * set.exact.grad_tol);
            }
        }
    }

    #[test]
    fn aggregate_first_keeps_zero_dual_sum() {
        let p = make_least_squares(6, 8, 2).unwrap();
        let set = RoundSettings::default();
        let mut s = ConsensusState::zeros(&p, None);
        for _ in 0..50 {
            let out = admm2_round(&p, &s, 100.0, &set).unwrap();
            assert!(out.stats.dual_sum_inf <= 1e-9 * (1.0 + out.stats.max_dual_inf));
            s = out.state;
        }
    }

    #[test]
    fn both_converge_on_least_squares() {
        let p = make_least_squares(3, 4, 5).unwrap();
        let z_star = p.optimum_hint.clone().unwrap();
        let set = RoundSettings::default();
        for round in [admm1_round, admm2_round] {
            let mut s = ConsensusState::zeros(&p, None);
            for _ in 0..2000 {
                s = round(&p, &s, 100.0, &set).unwrap().state;
            }
            assert!(s.global.z.max_abs_diff(&z_star) < 1e-6);
            assert!(s.dual_sum().norm_inf() < 1e-6);
        }
    }
}

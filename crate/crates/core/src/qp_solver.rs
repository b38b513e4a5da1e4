//! The consensus coordination QP
//!
//! ```text
//! min Σ ½Δx_iᵀB_iΔx_i + g_iᵀΔx_i   s.t.  x_i⁺ + Δx_i = z   (dual λ_i)
//! ```
//!
//! solved either through the full `(2N+1)n` KKT system or through the
//! `n × n` Schur complement `Σ B_i`. Production code uses [`solve_schur`] and
//! [`reduced_update`]; [`solve_dense_kkt`] is an oracle.

use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, DenseMatrix, SymMat, Vector};

/// One agent's QP data.
#[derive(Debug, Clone, PartialEq)]
pub struct QpAgent {
    pub b: SymMat,
    pub g: Vector,
    pub x_plus: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusQPInput {
    pub n: usize,
    pub agents: Vec<QpAgent>,
}

impl ConsensusQPInput {
    pub fn new(agents: Vec<QpAgent>) -> Result<Self> {
        let n = agents
            .first()
            .map(|a| a.x_plus.len())
            .ok_or_else(|| Error::InvalidArgument("consensus QP needs at least one agent".into()))?;
        for a in &agents {
            for got in [a.b.dim(), a.g.len(), a.x_plus.len()] {
                if got != n {
                    return Err(Error::DimensionMismatch { expected: n, got });
                }
            }
        }
        Ok(ConsensusQPInput { n, agents })
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusQPSolution {
    pub z: Vector,
    pub dx: Vec<Vector>,
    pub lambda: Vec<Vector>,
}

/// Assembles and solves
///
/// ```text
/// [ 𝓑   I   0  ] [Δx]   [−G ]
/// [ I   0  −𝓘  ] [λ ] = [−x⁺]
/// [ 0  −𝓘ᵀ  0  ] [z ]   [ 0 ]
/// ```
///
/// The matrix is symmetric indefinite, so it is factored by LU with
/// partial pivoting.
pub fn solve_dense_kkt(input: &ConsensusQPInput) -> Result<ConsensusQPSolution> {
    let (n, big_n) = (input.n, input.num_agents());
    let dim = (2 * big_n + 1) * n;
    let lam0 = big_n * n;
    let z0 = 2 * big_n * n;
    let mut m = DenseMatrix::zeros(dim);
    let mut rhs = vec![0.0; dim];
    for (i, a) in input.agents.iter().enumerate() {
        let off = i * n;
        for r in 0..n {
            for c in 0..n {
                m.set(off + r, off + c, a.b.get(r, c));
            }
            m.set(off + r, lam0 + off + r, 1.0);
            m.set(lam0 + off + r, off + r, 1.0);
            m.set(lam0 + off + r, z0 + r, -1.0);
            m.set(z0 + r, lam0 + off + r, -1.0);
            rhs[off + r] = -a.g[r];
            rhs[lam0 + off + r] = -a.x_plus[r];
        }
    }
    let sol = m.lu_solve(&rhs)?;
    let block = |start: usize| Vector::from(&sol[start..start + n]);
    Ok(ConsensusQPSolution {
        z: block(z0),
        dx: (0..big_n).map(|i| block(i * n)).collect(),
        lambda: (0..big_n).map(|i| block(lam0 + i * n)).collect(),
    })
}

/// `z⁺ = (Σ B_i)⁻¹(Σ B_i x_i⁺ − Σ g_i)`, then `λ_i = B_i(x_i⁺ − z⁺) − g_i`
/// and `Δx_i = z⁺ − x_i⁺`. Sums run in agent order.
pub fn solve_schur(input: &ConsensusQPInput) -> Result<ConsensusQPSolution> {
    let n = input.n;
    let mut sum_b = SymMat::zeros(n);
    let mut rhs = Vector::zeros(n);
    for a in &input.agents {
        sum_b.add_scaled(1.0, &a.b);
        rhs += &a.b.mul_vec(&a.x_plus);
        rhs -= &a.g;
    }
    let z = cholesky_solve(&sum_b, &rhs)?;
    Ok(recover(input, z))
}

fn recover(input: &ConsensusQPInput, z: Vector) -> ConsensusQPSolution {
    let dx: Vec<Vector> = input.agents.iter().map(|a| &z - &a.x_plus).collect();
    let lambda = input
        .agents
        .iter()
        .zip(&dx)
        .map(|(a, d)| &(-&a.b.mul_vec(d)) - &a.g)
        .collect();
    ConsensusQPSolution { z, dx, lambda }
}

/// `z⁺ = (1/N) Σ (x_i⁺ − g_i/ρ)`, the Schur update with every `B_i = ρI`.
pub fn reduced_update(x_plus: &[Vector], g: &[Vector], rho: f64) -> Result<Vector> {
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
    }
    if x_plus.is_empty() || x_plus.len() != g.len() {
        return Err(Error::DimensionMismatch {
            expected: x_plus.len(),
            got: g.len(),
        });
    }
    let n = x_plus[0].len();
    let mut acc = Vector::zeros(n);
    for (x, gi) in x_plus.iter().zip(g) {
        if x.len() != n || gi.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x.len().max(gi.len()),
            });
        }
        acc += x;
        acc.axpy(-1.0 / rho, gi);
    }
    Ok(acc.scaled(1.0 / x_plus.len() as f64))
}

/// Largest ∞-norm violation over the three KKT row blocks:
/// `B_iΔx_i + g_i + λ_i`, `Δx_i + x_i⁺ − z` and `Σλ_i`.
pub fn kkt_residual(input: &ConsensusQPInput, sol: &ConsensusQPSolution) -> f64 {
    let mut worst: f64 = 0.0;
    let mut dual_sum = Vector::zeros(input.n);
    for ((a, dx), lam) in input.agents.iter().zip(&sol.dx).zip(&sol.lambda) {
        let stat = &(&a.b.mul_vec(dx) + &a.g) + lam;
        let cons = &(dx + &a.x_plus) - &sol.z;
        worst = worst.max(stat.norm_inf()).max(cons.norm_inf());
        dual_sum += lam;
    }
    worst.max(dual_sum.norm_inf())
}

/// Seeded random SPD instance with `N` agents in dimension `n`.
pub fn random_instance(rng: &mut rand_chacha::ChaCha8Rng, big_n: usize, n: usize) -> ConsensusQPInput {
    use rand::Rng;
    let mut agents = Vec::with_capacity(big_n);
    for _ in 0..big_n {
        let l: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shift = rng.random_range(0.1..2.0);
        // B = LLᵀ + shift·I
        let b = SymMat::from_lower(n, |i, j| {
            let dot: f64 = (0..n).map(|k| l[i * n + k] * l[j * n + k]).sum();
            dot + if i == j { shift } else { 0.0 }
        });
        let g = Vector::from_fn(n, |_| rng.random_range(-5.0..5.0));
        let x_plus = Vector::from_fn(n, |_| rng.random_range(-5.0..5.0));
        agents.push(QpAgent { b, g, x_plus });
    }
    ConsensusQPInput { n, agents }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_agent(b: f64, g: f64, x: f64) -> QpAgent {
        QpAgent {
            b: SymMat::scaled_identity(1, b),
            g: vec![g].into(),
            x_plus: vec![x].into(),
        }
    }

    #[test]
    fn single_agent_at_stationarity() {
        let c: Vector = vec![1.5, -2.0, 0.25].into();
        let input = ConsensusQPInput::new(vec![QpAgent {
            b: SymMat::identity(3),
            g: Vector::zeros(3),
            x_plus: c.clone(),
        }])
        .unwrap();
        for sol in [solve_dense_kkt(&input).unwrap(), solve_schur(&input).unwrap()] {
            assert!(sol.z.max_abs_diff(&c) <= 1e-14);
            assert!(sol.dx[0].norm_inf() <= 1e-14);
            assert!(sol.lambda[0].norm_inf() <= 1e-14);
        }
    }

    #[test]
    fn two_scalar_agents_dense() {
        let input = ConsensusQPInput::new(vec![scalar_agent(1.0, 0.0, 1.0), scalar_agent(1.0, 0.0, 3.0)]).unwrap();
        let sol = solve_dense_kkt(&input).unwrap();
        // plug back into the three KKT rows
        assert!(kkt_residual(&input, &sol) <= 1e-12);
        assert!((sol.z[0] - 2.0).abs() <= 1e-12);
        assert!((sol.dx[0][0] - 1.0).abs() <= 1e-12 && (sol.dx[1][0] + 1.0).abs() <= 1e-12);
        assert!((sol.lambda[0][0] + 1.0).abs() <= 1e-12 && (sol.lambda[1][0] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn weighted_scalar_schur() {
        let input = ConsensusQPInput::new(vec![scalar_agent(2.0, 0.0, 1.0), scalar_agent(4.0, 0.0, 3.0)]).unwrap();
        let schur = solve_schur(&input).unwrap();
        let dense = solve_dense_kkt(&input).unwrap();
        // (2·1 + 4·3)/6
        assert!((schur.z[0] - 7.0 / 3.0).abs() <= 1e-14);
        assert!((dense.z[0] - 7.0 / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn rho_identity_reduces_to_mean_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rho = 3.5;
        let mut input = random_instance(&mut rng, 6, 4);
        for a in &mut input.agents {
            a.b = SymMat::scaled_identity(4, rho);
        }
        let xs: Vec<Vector> = input.agents.iter().map(|a| a.x_plus.clone()).collect();
        let gs: Vec<Vector> = input.agents.iter().map(|a| a.g.clone()).collect();
        let reduced = reduced_update(&xs, &gs, rho).unwrap();
        let schur = solve_schur(&input).unwrap();
        assert!(reduced.max_abs_diff(&schur.z) <= 1e-12);
    }

    #[test]
    fn reduced_update_hand_values() {
        let xs: Vec<Vector> = vec![vec![1.0].into(), vec![3.0].into()];
        let zeros = vec![Vector::zeros(1), Vector::zeros(1)];
        assert_eq!(reduced_update(&xs, &zeros, 1.0).unwrap()[0], 2.0);
        // g_i = ρ(x_i⁺ − c) cancels to c
        let rho = 4.0;
        let c = 0.75;
        let gs: Vec<Vector> = xs.iter().map(|x| vec![rho * (x[0] - c)].into()).collect();
        assert!((reduced_update(&xs, &gs, rho).unwrap()[0] - c).abs() <= 1e-15);
        assert!(reduced_update(&xs, &zeros, 0.0).is_err());
    }

    #[test]
    fn common_target_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c: Vector = vec![0.3, -1.2, 2.0].into();
        let mut input = random_instance(&mut rng, 4, 3);
        for a in &mut input.agents {
            a.g = a.b.mul_vec(&(&a.x_plus - &c));
        }
        let sol = solve_schur(&input).unwrap();
        assert!(sol.z.max_abs_diff(&c) <= 1e-10);
    }

    #[test]
    fn non_spd_aggregate_is_reported() {
        let input = ConsensusQPInput::new(vec![QpAgent {
            b: SymMat::scaled_identity(2, -1.0),
            g: Vector::zeros(2),
            x_plus: Vector::zeros(2),
        }])
        .unwrap();
        assert!(matches!(solve_schur(&input), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn random_five_by_four_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random_instance(&mut rng, 5, 4);
        let sol = solve_dense_kkt(&input).unwrap();
        assert!(kkt_residual(&input, &sol) <= 1e-9);
    }

    proptest! {
        #[test]
        fn schur_matches_dense(seed in any::<u64>(), big_n in 1usize..=8, n in 1usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let input = random_instance(&mut rng, big_n, n);
            let dense = solve_dense_kkt(&input).unwrap();
            let schur = solve_schur(&input).unwrap();
            prop_assert!(schur.z.max_abs_diff(&dense.z) <= 1e-9);
            for i in 0..big_n {
                prop_assert!(schur.dx[i].max_abs_diff(&dense.dx[i]) <= 1e-9);
                prop_assert!(schur.lambda[i].max_abs_diff(&dense.lambda[i]) <= 1e-9);
                // Δx_i + x_i⁺ = z⁺ as computed
                prop_assert!((&schur.dx[i] + &input.agents[i].x_plus).max_abs_diff(&schur.z) <= 1e-12);
            }
            prop_assert!(kkt_residual(&input, &schur) <= 1e-9);
            prop_assert!(kkt_residual(&input, &dense) <= 1e-9);
        }
    }
}

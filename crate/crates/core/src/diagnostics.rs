//! Convergence measurements: Lyapunov value, consensus error, residuals and
//! an empirical Q-linear rate.

use crate::aladin::ConsensusState;
use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigenvalues, SymMat, Vector};
use crate::local_solver::{solve_exact, AugmentedSubproblem, ExactSolveSettings};
use crate::problems::{ConsensusProblem, Objective};

/// Target for `‖∇F(z*)‖∞` in [`reference_optimum`].
pub const REFERENCE_TOL: f64 = 1e-12;

/// Lyapunov samples at or below this are treated as converged noise.
pub const RATE_FLOOR: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimumSource {
    /// Closed form supplied by the problem.
    Hint,
    /// Centralized Newton on `F = Σ f_i`.
    CentralizedNewton { iterations: usize },
}

impl OptimumSource {
    pub fn label(&self) -> &'static str {
        match self {
            OptimumSource::Hint => "closed-form",
            OptimumSource::CentralizedNewton { .. } => "centralized-newton",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceOptimum {
    pub z: Vector,
    pub source: OptimumSource,
    /// `‖Σ ∇f_i(z)‖∞`
    pub grad_residual: f64,
}

#[derive(Debug)]
struct TotalObjective<'a>(&'a ConsensusProblem);

impl Objective for TotalObjective<'_> {
    fn dim(&self) -> usize {
        self.0.n
    }
    fn value(&self, x: &Vector) -> Result<f64> {
        self.0.total_value(x)
    }
    fn gradient(&self, x: &Vector) -> Result<Vector> {
        self.0.total_gradient(x)
    }
    fn hessian(&self, x: &Vector) -> Result<Option<SymMat>> {
        self.0.total_hessian(x)
    }
}

/// `z*` from the problem's hint, or from Newton on `F` started at `start`
/// (zero by default) until `‖∇F‖∞ ≤ 1e-12`.
///
/// Newton runs as proximal steps with a tiny penalty so that indefinite
/// Hessians are handled by the local solver's shifting and line search. On a
/// nonconvex `F` the result is the stationary point reached from `start`.
pub fn reference_optimum(problem: &ConsensusProblem, start: Option<&Vector>) -> Result<ReferenceOptimum> {
    if let Some(z) = &problem.optimum_hint {
        return Ok(ReferenceOptimum {
            z: z.clone(),
            source: OptimumSource::Hint,
            grad_residual: problem.total_gradient(z)?.norm_inf(),
        });
    }
    let total = TotalObjective(problem);
    let zero = Vector::zeros(problem.n);
    let mut z = start.cloned().unwrap_or_else(|| zero.clone());
    let settings = ExactSolveSettings {
        grad_tol: 0.1 * REFERENCE_TOL,
        max_iters: 500,
        ..ExactSolveSettings::default()
    };
    let rho = 1e-9 * problem.num_agents() as f64;
    let mut iterations = 0;
    let mut residual = problem.total_gradient(&z)?.norm_inf();
    while residual > REFERENCE_TOL {
        if iterations == 20 {
            return Err(Error::MaxItersExceeded {
                best: z,
                residual,
                iterations,
            });
        }
        let sub = AugmentedSubproblem::new(&total, &zero, &z, rho)?;
        z = match solve_exact(&sub, &z, &settings) {
            Ok(x) => x,
            // rounding can stall the inner solve just short of its target
            Err(Error::MaxItersExceeded { best, .. }) => best,
            Err(e) => return Err(e),
        };
        iterations += 1;
        let next = problem.total_gradient(&z)?.norm_inf();
        if next > REFERENCE_TOL && next >= residual {
            return Err(Error::MaxItersExceeded {
                best: z,
                residual: next,
                iterations,
            });
        }
        residual = next;
    }
    Ok(ReferenceOptimum {
        z,
        source: OptimumSource::CentralizedNewton { iterations },
        grad_residual: residual,
    })
}

/// `(z*, λ_i* = −∇f_i(z*), ρ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovRef {
    pub z_star: Vector,
    pub lambda_star: Vec<Vector>,
    pub rho: f64,
}

impl LyapunovRef {
    /// Fails when `‖Σλ_i*‖∞ > 1e-8`, i.e. `z_star` is not optimal.
    pub fn new(problem: &ConsensusProblem, z_star: &Vector, rho: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
        }
        let lambda_star: Vec<Vector> = problem
            .agents
            .iter()
            .map(|f| f.gradient(z_star).map(|g| -&g))
            .collect::<Result<_>>()?;
        let sum = Vector::sum(problem.n, lambda_star.iter()).norm_inf();
        if sum > 1e-8 {
            return Err(Error::InvalidArgument(format!(
                "reference point is not optimal: |sum lambda*|_inf = {sum:e}"
            )));
        }
        Ok(LyapunovRef {
            z_star: z_star.clone(),
            lambda_star,
            rho,
        })
    }
}

/// `(1/ρ) Σ ‖λ_i − λ_i*‖² + ρN‖z − z*‖²`
pub fn lyapunov(state: &ConsensusState, r: &LyapunovRef) -> f64 {
    let duals: f64 = state
        .agents
        .iter()
        .zip(&r.lambda_star)
        .map(|(a, l)| (&a.lambda - l).norm_sq())
        .sum();
    let n_agents = state.agents.len() as f64;
    duals / r.rho + r.rho * n_agents * (&state.global.z - &r.z_star).norm_sq()
}

/// `max_i ‖x_i − z‖∞`, raised to `‖z − z*‖∞` when a reference is given.
pub fn consensus_error(state: &ConsensusState, z_star: Option<&Vector>) -> f64 {
    let z = &state.global.z;
    let spread = state.agents.iter().map(|a| a.x.max_abs_diff(z)).fold(0.0, f64::max);
    match z_star {
        Some(zs) => spread.max(z.max_abs_diff(zs)),
        None => spread,
    }
}

/// `‖Σ ∇f_i(z)‖∞`
pub fn grad_residual(problem: &ConsensusProblem, z: &Vector) -> Result<f64> {
    Ok(problem.total_gradient(z)?.norm_inf())
}

/// Largest ratio `𝓛(k+1)/𝓛(k)` over the leading samples above [`RATE_FLOOR`].
pub fn estimate_qlinear_rate(values: &[f64]) -> Result<f64> {
    let window: Vec<f64> = values.iter().copied().take_while(|v| *v > RATE_FLOOR).collect();
    if window.len() < 3 {
        return Err(Error::InsufficientData(window.len()));
    }
    Ok(window.windows(2).map(|w| w[1] / w[0]).fold(f64::NEG_INFINITY, f64::max))
}

/// Strong convexity and smoothness of `F`, known only for quadratic agents.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProblemConstants {
    pub m_f: Option<f64>,
    pub omega_f: Option<f64>,
}

/// Extreme eigenvalues of `Σ ∇²f_i` for quadratic problems.
pub fn problem_constants(problem: &ConsensusProblem) -> Result<ProblemConstants> {
    if !problem.is_quadratic() {
        return Ok(ProblemConstants::default());
    }
    let Some(h) = problem.total_hessian(&Vector::zeros(problem.n))? else {
        return Ok(ProblemConstants::default());
    };
    let eig = symmetric_eigenvalues(&h);
    Ok(ProblemConstants {
        m_f: Some(eig[0].max(0.0)),
        omega_f: eig.last().copied(),
    })
}

/// `δ̂ = 4 m_f Σ‖x_i⁺ − z*‖² / 𝓛(z⁺, λ⁺)`; `None` without `m_f` or for
/// `𝓛 = 0`.
pub fn implied_delta(m_f: Option<f64>, state: &ConsensusState, r: &LyapunovRef) -> Option<f64> {
    let m = m_f?;
    let l = lyapunov(state, r);
    if !(l > 0.0) {
        return None;
    }
    let spread: f64 = state.agents.iter().map(|a| (&a.x - &r.z_star).norm_sq()).sum();
    Some(4.0 * m * spread / l)
}

/// `max_i ‖x_i⁺ − (λ_i⁺ − λ_i)/(2ρ) − (z⁺ + z)/2‖∞` for a reduced round
/// `prev → next`.
pub fn primal_update_residual(prev: &ConsensusState, next: &ConsensusState, rho: f64) -> f64 {
    let mid = (&prev.global.z + &next.global.z).scaled(0.5);
    prev.agents
        .iter()
        .zip(&next.agents)
        .map(|(p, q)| {
            let predicted = &(&q.lambda - &p.lambda).scaled(0.5 / rho) + &mid;
            q.x.max_abs_diff(&predicted)
        })
        .fold(0.0, f64::max)
}

/// `‖Σ x_i⁺ − (N/2)(z⁺ + z)‖∞`
pub fn aggregate_identity_residual(prev: &ConsensusState, next: &ConsensusState) -> f64 {
    let n = next.global.z.len();
    let sum = Vector::sum(n, next.agents.iter().map(|a| &a.x));
    let half = 0.5 * next.agents.len() as f64;
    let target = (&prev.global.z + &next.global.z).scaled(half);
    sum.max_abs_diff(&target)
}

/// Euclidean distance from `v` to `{point + span(basis)}`; `basis` must be
/// orthonormal.
pub fn affine_distance(v: &Vector, point: &Vector, basis: &[Vector]) -> f64 {
    let d = v - point;
    let proj: f64 = basis.iter().map(|b| b.dot(&d).powi(2)).sum();
    (d.norm_sq() - proj).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aladin::{reduced_round, RoundSettings};
    use crate::problems::{make_least_squares, make_logistic_regression, make_nonconvex_log};

    fn at_optimum(p: &ConsensusProblem, r: &LyapunovRef) -> ConsensusState {
        let mut s = ConsensusState::zeros(p, None);
        s.global.z = r.z_star.clone();
        for (a, l) in s.agents.iter_mut().zip(&r.lambda_star) {
            a.x = r.z_star.clone();
            a.lambda = l.clone();
        }
        s
    }

    #[test]
    fn lyapunov_hand_values() {
        let p = make_least_squares(2, 3, 1).unwrap();
        let z = p.optimum_hint.clone().unwrap();
        let r = LyapunovRef::new(&p, &z, 1.0).unwrap();
        let mut s = at_optimum(&p, &r);
        assert_eq!(lyapunov(&s, &r), 0.0);
        s.global.z[0] += 1.0;
        // ρN‖e₁‖² with ρ = 1, N = 3
        assert!((lyapunov(&s, &r) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn non_optimal_reference_rejected() {
        let p = make_least_squares(2, 3, 1).unwrap();
        let z = &p.optimum_hint.clone().unwrap() + &Vector::unit(2, 0);
        assert!(LyapunovRef::new(&p, &z, 1.0).is_err());
    }

    #[test]
    fn consensus_error_hand_values() {
        let p = ConsensusProblem::least_squares_from(vec![vec![0.0].into(), vec![2.0].into()]).unwrap();
        let mut s = ConsensusState::zeros(&p, None);
        assert_eq!(consensus_error(&s, None), 0.0);
        s.agents[1].x = vec![2.0].into();
        s.global.z = vec![1.0].into();
        assert_eq!(consensus_error(&s, None), 1.0);
        assert_eq!(consensus_error(&s, Some(&vec![4.0].into())), 3.0);
    }

    #[test]
    fn rate_examples() {
        assert_eq!(estimate_qlinear_rate(&[1.0, 0.25, 0.0625]).unwrap(), 0.25);
        assert_eq!(estimate_qlinear_rate(&[2.0, 2.0, 2.0, 2.0]).unwrap(), 1.0);
        assert!(matches!(
            estimate_qlinear_rate(&[1.0, 0.5, 1e-30, 1e-31]),
            Err(Error::InsufficientData(2))
        ));
        assert!(estimate_qlinear_rate(&[]).is_err());
    }

    #[test]
    fn newton_reference_is_stationary() {
        let p = make_logistic_regression(6, 4, 25, 0.001, 2).unwrap();
        let r = reference_optimum(&p, None).unwrap();
        assert!(r.grad_residual <= REFERENCE_TOL);
        assert!(matches!(r.source, OptimumSource::CentralizedNewton { .. }));
        let q = make_nonconvex_log(6, 5, 1).unwrap();
        let r = reference_optimum(&q, None).unwrap();
        assert!(r.grad_residual <= REFERENCE_TOL);
    }

    #[test]
    fn hint_is_used_when_present() {
        let p = make_least_squares(3, 4, 0).unwrap();
        let r = reference_optimum(&p, None).unwrap();
        assert_eq!(r.source, OptimumSource::Hint);
        assert_eq!(&r.z, p.optimum_hint.as_ref().unwrap());
    }

    #[test]
    fn constants_for_least_squares() {
        // Σ I over N agents
        let p = make_least_squares(3, 4, 0).unwrap();
        let c = problem_constants(&p).unwrap();
        assert!((c.m_f.unwrap() - 4.0).abs() < 1e-12);
        assert!((c.omega_f.unwrap() - 4.0).abs() < 1e-12);
        let q = make_logistic_regression(3, 2, 5, 0.0, 0).unwrap();
        assert_eq!(problem_constants(&q).unwrap(), ProblemConstants::default());
    }

    #[test]
    fn reduced_round_identities_hold() {
        let p = make_least_squares(4, 6, 3).unwrap();
        let rho = 10.0;
        let mut s = ConsensusState::zeros(&p, None);
        for _ in 0..10 {
            let next = reduced_round(&p, &s, rho, &RoundSettings::default()).unwrap().state;
            assert!(primal_update_residual(&s, &next, rho) < 1e-9);
            assert!(aggregate_identity_residual(&s, &next) < 1e-9);
            s = next;
        }
    }

    #[test]
    fn implied_delta_needs_constants() {
        let p = make_least_squares(2, 2, 5).unwrap();
        let z = p.optimum_hint.clone().unwrap();
        let r = LyapunovRef::new(&p, &z, 1.0).unwrap();
        let s = ConsensusState::zeros(&p, None);
        assert!(implied_delta(None, &s, &r).is_none());
        assert!(implied_delta(Some(2.0), &s, &r).unwrap() > 0.0);
        assert!(implied_delta(Some(2.0), &at_optimum(&p, &r), &r).is_none());
    }

    #[test]
    fn affine_distance_hand_values() {
        let basis = [Vector::unit(3, 2)];
        let point: Vector = vec![1.0, 1.0, 0.0].into();
        let v: Vector = vec![4.0, 5.0, 9.0].into();
        assert!((affine_distance(&v, &point, &basis) - 5.0).abs() < 1e-12);
        assert_eq!(affine_distance(&point, &point, &[]), 0.0);
    }
}

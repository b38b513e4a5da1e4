//! Per-agent augmented subproblem `min f(x) + λᵀx + (ρ/2)‖x − z‖²`.
//!
//! [`solve_exact`] drives the stationarity residual below a tolerance with a
//! shifted Newton method (or backtracking gradient descent when no Hessian is
//! available). [`solve_inexact`] runs a fixed number of plain gradient steps.

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, SymMat, Vector};
use crate::problems::Objective;

/// One agent's decoupled subproblem.
#[derive(Debug, Clone, Copy)]
pub struct AugmentedSubproblem<'a> {
    pub objective: &'a dyn Objective,
    pub lambda: &'a Vector,
    pub z: &'a Vector,
    pub rho: f64,
}

impl<'a> AugmentedSubproblem<'a> {
    pub fn new(objective: &'a dyn Objective, lambda: &'a Vector, z: &'a Vector, rho: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
        }
        let n = objective.dim();
        for v in [lambda, z] {
            if v.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: v.len() });
            }
        }
        Ok(AugmentedSubproblem { objective, lambda, z, rho })
    }

    pub fn value(&self, x: &Vector) -> Result<f64> {
        let d = x - self.z;
        Ok(self.objective.value(x)? + self.lambda.dot(x) + 0.5 * self.rho * d.norm_sq())
    }

    /// `∇f(x) + λ + ρ(x − z)`
    pub fn gradient(&self, x: &Vector) -> Result<Vector> {
        let mut g = self.objective.gradient(x)?;
        g += self.lambda;
        g.axpy(self.rho, &(x - self.z));
        Ok(g)
    }

    /// `‖∇f(x) + λ + ρ(x − z)‖∞`
    pub fn residual(&self, x: &Vector) -> Result<f64> {
        Ok(self.gradient(x)?.norm_inf())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactSolveSettings {
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Backtracking shrink factor in (0, 1).
    pub shrink: f64,
    /// Armijo sufficient-decrease constant in (0, 1).
    pub armijo: f64,
    pub max_halvings: usize,
}

impl Default for ExactSolveSettings {
    fn default() -> Self {
        ExactSolveSettings {
            grad_tol: 1e-8,
            max_iters: 200,
            shrink: 0.5,
            armijo: 1e-4,
            max_halvings: 60,
        }
    }
}

impl ExactSolveSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidArgument("grad_tol must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) || !(self.armijo > 0.0 && self.armijo < 1.0) {
            return Err(Error::InvalidArgument("line search constants must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InexactSolveSettings {
    pub epochs: usize,
    pub eta: f64,
}

impl InexactSolveSettings {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

/// Largest shift tried before the Newton model is abandoned for a gradient step.
const MAX_SHIFT: f64 = 1e12;

/// Newton direction on `∇²f + ρI`, shifted by `τI` (τ doubling from 1e-6)
/// until the matrix factors.
fn newton_direction(mut h: SymMat, rho: f64, grad: &Vector) -> Option<Vector> {
    h.add_diag(rho);
    if let Ok(ch) = Cholesky::factor(&h) {
        return Some(-&ch.solve(grad));
    }
    let mut tau = 1e-6;
    while tau <= MAX_SHIFT {
        let mut shifted = h.clone();
        shifted.add_diag(tau);
        if let Ok(ch) = Cholesky::factor(&shifted) {
            return Some(-&ch.solve(grad));
        }
        tau *= 2.0;
    }
    None
}

/// Solves the subproblem to `‖∇f + λ + ρ(x − z)‖∞ ≤ grad_tol`.
///
/// A trial point outside the objective's domain shrinks the step. Once
/// function changes reach rounding level, a step is accepted when it reduces
/// the residual instead; if no trial passes, the trial with the smallest
/// residual is taken provided it improves on the current one. On failure the best iterate is carried in
/// [`Error::MaxItersExceeded`].
pub fn solve_exact(sub: &AugmentedSubproblem<'_>, x_start: &Vector, settings: &ExactSolveSettings) -> Result<Vector> {
    settings.validate()?;
    let mut x = x_start.clone();
    let mut phi = sub.value(&x)?;
    let mut grad = sub.gradient(&x)?;
    let mut res = grad.norm_inf();
    let mut best = (x.clone(), res);

    for iter in 0..settings.max_iters {
        if res <= settings.grad_tol {
            debug_assert!(sub.residual(&x)? <= settings.grad_tol);
            return Ok(x);
        }
        let hess = sub.objective.hessian(&x)?;
        let (dir, t0) = match hess.and_then(|h| newton_direction(h, sub.rho, &grad)) {
            Some(d) => (d, 1.0),
            None => (-&grad, 1.0 / sub.rho),
        };
        let slope = grad.dot(&dir);
        // decreases below this are rounding noise and do not count as progress
        let noise = 64.0 * f64::EPSILON * (1.0 + phi.abs());
        let mut t = t0;
        let mut accepted = None;
        let mut fallback: Option<(Vector, f64, Vector, f64)> = None;
        for _ in 0..=settings.max_halvings {
            let mut trial = x.clone();
            trial.axpy(t, &dir);
            let eval = sub.value(&trial).and_then(|v| Ok((v, sub.gradient(&trial)?)));
            match eval {
                Ok((v, g)) if v.is_finite() && g.is_finite() => {
                    let r = g.norm_inf();
                    let armijo = v <= phi + settings.armijo * t * slope && phi - v > noise;
                    let flat = (phi - v).abs() <= noise && r < res;
                    if armijo || flat {
                        accepted = Some((trial, v, g, r));
                        break;
                    }
                    if r < res && fallback.as_ref().is_none_or(|f| r < f.3) {
                        fallback = Some((trial, v, g, r));
                    }
                }
                Ok(_) | Err(Error::Domain(_)) => {}
                Err(e) => return Err(e),
            }
            t *= settings.shrink;
        }
        let Some((nx, nv, ng, nr)) = accepted.or(fallback) else {
            return Err(Error::MaxItersExceeded {
                best: best.0,
                residual: best.1,
                iterations: iter,
            });
        };
        x = nx;
        phi = nv;
        grad = ng;
        res = nr;
        if res < best.1 {
            best = (x.clone(), res);
        }
    }
    if res <= settings.grad_tol {
        return Ok(x);
    }
    Err(Error::MaxItersExceeded {
        best: best.0,
        residual: best.1,
        iterations: settings.max_iters,
    })
}

/// Exactly `epochs` steps of `x ← x − η(∇f(x) + λ + ρ(x − z))`.
pub fn solve_inexact(sub: &AugmentedSubproblem<'_>, x_start: &Vector, settings: &InexactSolveSettings) -> Result<Vector> {
    settings.validate()?;
    let mut x = x_start.clone();
    for _ in 0..settings.epochs {
        let g = sub.gradient(&x)?;
        x.axpy(-settings.eta, &g);
    }
    Ok(x)
}

/// Runs `f` for every agent index in parallel and returns the results in
/// index order. On failure the lowest failing index is reported, so the
/// outcome does not depend on scheduling.
pub(crate) fn map_agents<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    let results: Vec<Result<T>> = (0..count).into_par_iter().map(&f).collect();
    let mut out = Vec::with_capacity(count);
    for (i, r) in results.into_iter().enumerate() {
        out.push(r.map_err(|e| e.for_agent(i))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_logistic_regression, make_nonconvex_log, LeastSquaresAgent};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn random_vec(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Vector {
        let d = Normal::new(0.0, sd).unwrap();
        Vector::from_fn(n, |_| d.sample(rng))
    }

    #[test]
    fn quadratic_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let settings = ExactSolveSettings::default();
        for rho in [0.05, 1.0, 100.0] {
            let zeta = random_vec(&mut rng, 5, 5.0);
            let lambda = random_vec(&mut rng, 5, 1.0);
            let z = random_vec(&mut rng, 5, 2.0);
            let agent = LeastSquaresAgent::new(zeta.clone());
            let sub = AugmentedSubproblem::new(&agent, &lambda, &z, rho).unwrap();
            let x = solve_exact(&sub, &Vector::zeros(5), &settings).unwrap();
            // (ζ + ρz − λ)/(1 + ρ)
            let closed = (&(&zeta + &z.scaled(rho)) - &lambda).scaled(1.0 / (1.0 + rho));
            assert!(x.max_abs_diff(&closed) <= 10.0 * settings.grad_tol);
        }
    }

    #[test]
    fn huge_penalty_pins_to_z() {
        let p = make_nonconvex_log(4, 1, 5).unwrap();
        let z: Vector = vec![0.3, -0.2, 1.0, 0.5].into();
        let lambda = Vector::zeros(4);
        let sub = AugmentedSubproblem::new(p.agents[0].as_ref(), &lambda, &z, 1e8).unwrap();
        let x = solve_exact(&sub, &z, &ExactSolveSettings::default()).unwrap();
        assert!(x.max_abs_diff(&z) <= 1e-3);
    }

    #[test]
    fn logistic_residual_within_tolerance() {
        let p = make_logistic_regression(16, 3, 40, 0.001, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let settings = ExactSolveSettings::default();
        for a in &p.agents {
            let lambda = random_vec(&mut rng, 16, 0.01);
            let z = random_vec(&mut rng, 16, 1.0);
            let sub = AugmentedSubproblem::new(a.as_ref(), &lambda, &z, 0.05).unwrap();
            let x = solve_exact(&sub, &Vector::zeros(16), &settings).unwrap();
            let r = (&(&a.gradient(&x).unwrap() + &lambda) + &(&x - &z).scaled(0.05)).norm_inf();
            assert!(r <= settings.grad_tol);
        }
    }

    #[test]
    fn nonconvex_subproblems_converge() {
        let p = make_nonconvex_log(10, 20, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let settings = ExactSolveSettings::default();
        for a in &p.agents {
            let lambda = random_vec(&mut rng, 10, 1.0);
            let z = random_vec(&mut rng, 10, 2.0);
            let sub = AugmentedSubproblem::new(a.as_ref(), &lambda, &z, 100.0).unwrap();
            let x = solve_exact(&sub, &z, &settings).unwrap();
            assert!(sub.residual(&x).unwrap() <= settings.grad_tol);
        }
    }

    #[test]
    fn one_epoch_hand_value() {
        let agent = LeastSquaresAgent::new(vec![1.0].into());
        let zero = Vector::zeros(1);
        let sub = AugmentedSubproblem::new(&agent, &zero, &zero, 1.0).unwrap();
        let x = solve_inexact(&sub, &zero, &InexactSolveSettings { epochs: 1, eta: 0.01 }).unwrap();
        // x = 0 − 0.01·(0 − 1 + 0 + 0)
        assert_eq!(x[0], 0.01);
    }

    #[test]
    fn many_epochs_reach_exact_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let zeta = random_vec(&mut rng, 3, 5.0);
        let lambda = random_vec(&mut rng, 3, 1.0);
        let z = random_vec(&mut rng, 3, 1.0);
        let agent = LeastSquaresAgent::new(zeta);
        let rho = 2.0;
        let sub = AugmentedSubproblem::new(&agent, &lambda, &z, rho).unwrap();
        // L + ρ = 3, so η = 0.1 < 2/3
        let inexact = solve_inexact(&sub, &Vector::zeros(3), &InexactSolveSettings { epochs: 10_000, eta: 0.1 }).unwrap();
        let exact = solve_exact(&sub, &Vector::zeros(3), &ExactSolveSettings::default()).unwrap();
        assert!(inexact.max_abs_diff(&exact) <= 1e-6);
    }

    #[test]
    fn zero_learning_rate_rejected() {
        let agent = LeastSquaresAgent::new(vec![1.0].into());
        let zero = Vector::zeros(1);
        let sub = AugmentedSubproblem::new(&agent, &zero, &zero, 1.0).unwrap();
        let bad = InexactSolveSettings { epochs: 3, eta: 0.0 };
        assert!(matches!(solve_inexact(&sub, &zero, &bad), Err(Error::InvalidArgument(_))));
        assert!(AugmentedSubproblem::new(&agent, &zero, &zero, 0.0).is_err());
    }

    #[derive(Debug)]
    struct Counting {
        inner: LeastSquaresAgent,
        calls: AtomicUsize,
    }

    impl Objective for Counting {
        fn dim(&self) -> usize {
            self.inner.dim()
        }
        fn value(&self, x: &Vector) -> Result<f64> {
            self.inner.value(x)
        }
        fn gradient(&self, x: &Vector) -> Result<Vector> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            self.inner.gradient(x)
        }
    }

    #[test]
    fn inexact_uses_exactly_e_gradients_and_is_deterministic() {
        let agent = Counting {
            inner: LeastSquaresAgent::new(vec![1.0, -2.0].into()),
            calls: AtomicUsize::new(0),
        };
        let lambda: Vector = vec![0.1, 0.2].into();
        let z: Vector = vec![0.5, 0.5].into();
        let sub = AugmentedSubproblem::new(&agent, &lambda, &z, 0.5).unwrap();
        let s = InexactSolveSettings { epochs: 7, eta: 0.05 };
        let a = solve_inexact(&sub, &z, &s).unwrap();
        assert_eq!(agent.calls.load(Ordering::Relaxed), 7);
        let b = solve_inexact(&sub, &z, &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradient_descent_fallback_without_hessian() {
        let agent = Counting {
            inner: LeastSquaresAgent::new(vec![3.0, -1.0].into()),
            calls: AtomicUsize::new(0),
        };
        let lambda = Vector::zeros(2);
        let z = Vector::zeros(2);
        let sub = AugmentedSubproblem::new(&agent, &lambda, &z, 1.0).unwrap();
        let x = solve_exact(&sub, &z, &ExactSolveSettings::default()).unwrap();
        assert!(x.max_abs_diff(&vec![1.5, -0.5].into()) <= 1e-7);
    }

    #[test]
    fn exhausted_iterations_report_best_iterate() {
        // no Hessian: one gradient step of length 1/ρ from 0 lands on x = 1
        let agent = Counting {
            inner: LeastSquaresAgent::new(vec![3.0].into()),
            calls: AtomicUsize::new(0),
        };
        let zero = Vector::zeros(1);
        let sub = AugmentedSubproblem::new(&agent, &zero, &zero, 3.0).unwrap();
        let settings = ExactSolveSettings {
            max_iters: 1,
            ..ExactSolveSettings::default()
        };
        match solve_exact(&sub, &zero, &settings) {
            Err(Error::MaxItersExceeded { best, residual, iterations }) => {
                assert_eq!(best[0], 1.0);
                assert_eq!(residual, 1.0);
                assert_eq!(iterations, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::normal_vector;
use super::{check_dim, ConsensusProblem, Objective};
use crate::error::{Error, Result};
use crate::linalg::{SymMat, Vector};

/// `f(x) = ½‖x − ζ‖²`
#[derive(Debug, Clone)]
pub struct LeastSquaresAgent {
    pub zeta: Vector,
}

impl LeastSquaresAgent {
    pub fn new(zeta: Vector) -> Self {
        LeastSquaresAgent { zeta }
    }
}

impl Objective for LeastSquaresAgent {
    fn dim(&self) -> usize {
        self.zeta.len()
    }

    fn value(&self, x: &Vector) -> Result<f64> {
        check_dim(self.dim(), x)?;
        Ok(0.5 * (x - &self.zeta).norm_sq())
    }

    fn gradient(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim(), x)?;
        Ok(x - &self.zeta)
    }

    fn hessian(&self, _x: &Vector) -> Result<Option<SymMat>> {
        Ok(Some(SymMat::identity(self.dim())))
    }

    fn is_quadratic(&self) -> bool {
        true
    }
}

impl ConsensusProblem {
    /// Least-squares problem with the given per-agent targets.
    pub fn least_squares_from(zetas: Vec<Vector>) -> Result<Self> {
        let n = zetas.first().map(|z| z.len()).ok_or_else(|| {
            Error::InvalidArgument("least squares needs at least one agent".into())
        })?;
        let hint = Vector::mean(n, zetas.iter());
        let agents: Vec<Arc<dyn Objective>> = zetas
            .into_iter()
            .map(|z| Arc::new(LeastSquaresAgent::new(z)) as Arc<dyn Objective>)
            .collect();
        let mut p = ConsensusProblem::new("least-squares", n, agents)?;
        p.optimum_hint = Some(hint);
        Ok(p)
    }
}

/// Agents hold `ζ_i ~ N(0, 25)` per coordinate; the optimum is `mean(ζ_i)`.
pub fn make_least_squares(n: usize, agents: usize, seed: u64) -> Result<ConsensusProblem> {
    if n == 0 || agents == 0 {
        return Err(Error::InvalidArgument("least squares needs n >= 1 and N >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zetas = (0..agents).map(|_| normal_vector(&mut rng, n, 5.0)).collect();
    ConsensusProblem::least_squares_from(zetas)
}

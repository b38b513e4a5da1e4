use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::normal_vector;
use super::{check_dim, ConsensusProblem, Objective};
use crate::error::{Error, Result};
use crate::linalg::{SymMat, Vector};

/// Log arguments at or below this value are outside the objective's domain.
pub const LOG_DOMAIN_FLOOR: f64 = 1e-12;

/// `f(x) = ½(‖xᵃ − ζᵃ‖² + ‖xᵇ − ζᵇ‖²) + ln(½‖(xᵃ − xᵇ)∘(xᵃ − xᵇ) − ζᶜ‖²)`
/// with `x = [xᵃ; xᵇ]` split in half.
#[derive(Debug, Clone)]
pub struct NonconvexLogAgent {
    pub zeta_a: Vector,
    pub zeta_b: Vector,
    pub zeta_c: Vector,
    /// When false the log term is dropped and the agent is plain least squares.
    pub log_term: bool,
}

struct LogParts {
    d: Vec<f64>,
    u: Vec<f64>,
    q: f64,
}

impl NonconvexLogAgent {
    fn half(&self) -> usize {
        self.zeta_a.len()
    }

    fn log_parts(&self, x: &Vector) -> Result<LogParts> {
        let m = self.half();
        let d: Vec<f64> = (0..m).map(|j| x[j] - x[m + j]).collect();
        let u: Vec<f64> = (0..m).map(|j| d[j] * d[j] - self.zeta_c[j]).collect();
        let q = 0.5 * u.iter().map(|v| v * v).sum::<f64>();
        if !(q > LOG_DOMAIN_FLOOR) {
            return Err(Error::Domain(format!("log argument {q:e} <= {LOG_DOMAIN_FLOOR:e}")));
        }
        Ok(LogParts { d, u, q })
    }

    fn quadratic_residual(&self, x: &Vector) -> Vector {
        let m = self.half();
        Vector::from_fn(2 * m, |k| {
            if k < m {
                x[k] - self.zeta_a[k]
            } else {
                x[k] - self.zeta_b[k - m]
            }
        })
    }
}

impl Objective for NonconvexLogAgent {
    fn dim(&self) -> usize {
        2 * self.half()
    }

    fn value(&self, x: &Vector) -> Result<f64> {
        check_dim(self.dim(), x)?;
        let quad = 0.5 * self.quadratic_residual(x).norm_sq();
        if !self.log_term {
            return Ok(quad);
        }
        Ok(quad + self.log_parts(x)?.q.ln())
    }

    fn gradient(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim(), x)?;
        let mut g = self.quadratic_residual(x);
        if self.log_term {
            let m = self.half();
            let LogParts { d, u, q } = self.log_parts(x)?;
            for j in 0..m {
                // ∂ ln q / ∂d_j = 2 u_j d_j / q, and d = xᵃ − xᵇ
                let gd = 2.0 * u[j] * d[j] / q;
                g[j] += gd;
                g[m + j] -= gd;
            }
        }
        Ok(g)
    }

    fn hessian(&self, x: &Vector) -> Result<Option<SymMat>> {
        check_dim(self.dim(), x)?;
        let n = self.dim();
        let mut h = SymMat::identity(n);
        if !self.log_term {
            return Ok(Some(h));
        }
        let m = self.half();
        let LogParts { d, u, q } = self.log_parts(x)?;
        let dq: Vec<f64> = (0..m).map(|j| 2.0 * u[j] * d[j]).collect();
        // Hessian of ln q in d-coordinates
        let k = |i: usize, j: usize| {
            let diag = if i == j { (2.0 * u[i] + 4.0 * d[i] * d[i]) / q } else { 0.0 };
            diag - dq[i] * dq[j] / (q * q)
        };
        let mut out = SymMat::zeros(n);
        for r in 0..n {
            for c in 0..=r {
                let (ri, rsign) = if r < m { (r, 1.0) } else { (r - m, -1.0) };
                let (ci, csign) = if c < m { (c, 1.0) } else { (c - m, -1.0) };
                out.set(r, c, h.get(r, c) + rsign * csign * k(ri, ci));
            }
        }
        h = out;
        Ok(Some(h))
    }
}

/// Builds the nonconvex family. `ζᵃ, ζᵇ ~ N(0, 25)` as in least squares;
/// `ζᶜ ~ N(0, 25)` as well. An agent whose `ζᶜ` is entirely positive has
/// points where the log argument vanishes and `f → −∞`; nearby local
/// subproblems may then be unbounded below.
pub fn make_nonconvex_log(n: usize, agents: usize, seed: u64) -> Result<ConsensusProblem> {
    make_nonconvex_log_with(n, agents, seed, true)
}

/// Same as [`make_nonconvex_log`]; `log_term = false` drops the log term
/// and leaves least squares on the stacked halves.
pub fn make_nonconvex_log_with(
    n: usize,
    agents: usize,
    seed: u64,
    log_term: bool,
) -> Result<ConsensusProblem> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "nonconvex-log needs an even dimension, got {n}"
        )));
    }
    if agents == 0 {
        return Err(Error::InvalidArgument("nonconvex-log needs N >= 1".into()));
    }
    let m = n / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stacked = Vec::with_capacity(agents);
    let mut wells = 0;
    let objectives: Vec<Arc<dyn Objective>> = (0..agents)
        .map(|_| {
            let zeta_a = normal_vector(&mut rng, m, 5.0);
            let zeta_b = normal_vector(&mut rng, m, 5.0);
            let zeta_c = normal_vector(&mut rng, m, 5.0);
            if zeta_c.iter().all(|c| *c > 0.0) {
                wells += 1;
            }
            stacked.push(Vector::from_fn(n, |k| if k < m { zeta_a[k] } else { zeta_b[k - m] }));
            Arc::new(NonconvexLogAgent {
                zeta_a,
                zeta_b,
                zeta_c,
                log_term,
            }) as Arc<dyn Objective>
        })
        .collect();
    let mut p = ConsensusProblem::new("nonconvex-log", n, objectives)?;
    if log_term {
        p.notes.push(format!(
            "{wells} of {agents} agents have log singularities (zeta_c > 0 in every coordinate)"
        ));
    } else {
        p.optimum_hint = Some(Vector::mean(n, stacked.iter()));
    }
    Ok(p)
}

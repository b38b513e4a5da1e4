//! Consensus problems: `min Σ f_i(x_i)  s.t.  x_i = z`.
//!
//! Each agent owns an [`Objective`]. The four shipped families are built by
//! the `make_*` factories with seeded, platform-independent data.

mod data;
mod least_squares;
mod nonconvex;
mod regression;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{SymMat, Vector};

pub use data::DataShard;
pub use least_squares::{make_least_squares, LeastSquaresAgent};
pub use nonconvex::{make_nonconvex_log, make_nonconvex_log_with, NonconvexLogAgent, LOG_DOMAIN_FLOOR};
pub use regression::{
    make_linear_regression, make_logistic_regression, LinearRegressionAgent, LogisticAgent,
};

/// Value, gradient and (optionally) Hessian of one agent objective.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub value: f64,
    pub gradient: Vector,
    pub hessian: Option<SymMat>,
}

/// One agent's private loss `f_i`.
pub trait Objective: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn value(&self, x: &Vector) -> Result<f64>;

    fn gradient(&self, x: &Vector) -> Result<Vector>;

    /// `None` when no analytic Hessian is available.
    fn hessian(&self, _x: &Vector) -> Result<Option<SymMat>> {
        Ok(None)
    }

    /// True when the Hessian is constant, which enables exact strong
    /// convexity / smoothness constants.
    fn is_quadratic(&self) -> bool {
        false
    }

    fn evaluate(&self, x: &Vector, with_hessian: bool) -> Result<ObjectiveEval> {
        Ok(ObjectiveEval {
            value: self.value(x)?,
            gradient: self.gradient(x)?,
            hessian: if with_hessian { self.hessian(x)? } else { None },
        })
    }
}

pub(crate) fn check_dim(expected: usize, x: &Vector) -> Result<()> {
    if x.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: x.len(),
        });
    }
    Ok(())
}

/// `N` agent objectives over a shared dimension `n`.
#[derive(Debug, Clone)]
pub struct ConsensusProblem {
    pub name: String,
    pub n: usize,
    pub agents: Vec<Arc<dyn Objective>>,
    /// Positive data-share weights summing to one. The algorithms minimise
    /// the unweighted sum; weights are reported, not applied.
    pub weights: Vec<f64>,
    /// Known global minimiser, when available in closed form.
    pub optimum_hint: Option<Vector>,
    /// Data-generation choices worth surfacing in run metadata.
    pub notes: Vec<String>,
}

impl ConsensusProblem {
    pub fn new(name: impl Into<String>, n: usize, agents: Vec<Arc<dyn Objective>>) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::InvalidArgument("problem needs at least one agent".into()));
        }
        if let Some(bad) = agents.iter().find(|a| a.dim() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: bad.dim(),
            });
        }
        let count = agents.len();
        Ok(ConsensusProblem {
            name: name.into(),
            n,
            agents,
            weights: vec![1.0 / count as f64; count],
            optimum_hint: None,
            notes: Vec::new(),
        })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.agents.len() {
            return Err(Error::DimensionMismatch {
                expected: self.agents.len(),
                got: weights.len(),
            });
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w > 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "weights must be positive and sum to 1 (sum = {total})"
            )));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    /// `F(z) = Σ f_i(z)`
    pub fn total_value(&self, z: &Vector) -> Result<f64> {
        self.agents.iter().map(|a| a.value(z)).sum()
    }

    pub fn total_gradient(&self, z: &Vector) -> Result<Vector> {
        let mut g = Vector::zeros(self.n);
        for a in &self.agents {
            g += &a.gradient(z)?;
        }
        Ok(g)
    }

    /// `Σ ∇²f_i(z)`, or `None` if any agent lacks a Hessian.
    pub fn total_hessian(&self, z: &Vector) -> Result<Option<SymMat>> {
        let mut h = SymMat::zeros(self.n);
        for a in &self.agents {
            match a.hessian(z)? {
                Some(hi) => h.add_scaled(1.0, &hi),
                None => return Ok(None),
            }
        }
        Ok(Some(h))
    }

    pub fn is_quadratic(&self) -> bool {
        self.agents.iter().all(|a| a.is_quadratic())
    }
}

/// Names accepted by [`build_problem`].
pub const PROBLEM_NAMES: [&str; 4] = [
    "least-squares",
    "nonconvex-log",
    "linear-regression",
    "logistic-regression",
];

/// Parameters shared by the problem factories.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub name: String,
    pub n: usize,
    pub agents: usize,
    pub samples_per_client: usize,
    pub noniid: bool,
    pub reg: f64,
    pub seed: u64,
}

pub fn build_problem(spec: &ProblemSpec) -> Result<ConsensusProblem> {
    match spec.name.as_str() {
        "least-squares" => make_least_squares(spec.n, spec.agents, spec.seed),
        "nonconvex-log" => make_nonconvex_log(spec.n, spec.agents, spec.seed),
        "linear-regression" => make_linear_regression(
            spec.n,
            spec.agents,
            spec.samples_per_client,
            spec.noniid,
            spec.seed,
        ),
        "logistic-regression" => make_logistic_regression(
            spec.n,
            spec.agents,
            spec.samples_per_client,
            spec.reg,
            spec.seed,
        ),
        other => Err(Error::config(
            "problem",
            format!("unknown problem `{other}` (expected one of {PROBLEM_NAMES:?})"),
        )),
    }
}

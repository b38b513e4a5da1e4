//! Python bindings: problems, step-wise sessions for the exact-search
//! algorithms, full harness runs and the QP check.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use caladin::aladin::{bfgs_round, damped_bfgs_update, reduced_round, ConsensusState, RoundSettings};
use caladin::consensus_admm::{admm1_round, admm2_round};
use caladin::diagnostics::{consensus_error, lyapunov, reference_optimum, LyapunovRef};
use caladin::error::Error;
use caladin::harness::{self, Algorithm, QpShape, RunConfig};
use caladin::linalg::{SymMat, Vector};
use caladin::problems::{build_problem, ConsensusProblem, ProblemSpec};

fn to_py(e: Error) -> PyErr {
    match e.root() {
        Error::Config { .. } | Error::InvalidArgument(_) | Error::DimensionMismatch { .. } | Error::Unsupported(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn rows(vs: impl IntoIterator<Item = Vector>) -> Vec<Vec<f64>> {
    vs.into_iter().map(Vector::into_inner).collect()
}

/// A generated consensus problem.
#[pyclass(name = "Problem", module = "caladin", frozen)]
struct PyProblem {
    inner: ConsensusProblem,
}

#[pymethods]
impl PyProblem {
    #[new]
    #[pyo3(signature = (name, n=10, agents=20, samples_per_client=50, noniid=true, reg=0.001, seed=0))]
    fn new(
        name: &str,
        n: usize,
        agents: usize,
        samples_per_client: usize,
        noniid: bool,
        reg: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let spec = ProblemSpec {
            name: name.into(),
            n,
            agents,
            samples_per_client,
            noniid,
            reg,
            seed,
        };
        Ok(PyProblem {
            inner: build_problem(&spec).map_err(to_py)?,
        })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn agents(&self) -> usize {
        self.inner.num_agents()
    }

    #[getter]
    fn notes(&self) -> Vec<String> {
        self.inner.notes.clone()
    }

    /// `Σ f_i(z)`
    fn value(&self, z: Vec<f64>) -> PyResult<f64> {
        self.inner.total_value(&z.into()).map_err(to_py)
    }

    /// `Σ ∇f_i(z)`
    fn gradient(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.total_gradient(&z.into()).map_err(to_py)?.into_inner())
    }

    fn agent_gradient(&self, agent: usize, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let f = self
            .inner
            .agents
            .get(agent)
            .ok_or_else(|| PyValueError::new_err(format!("agent {agent} out of range")))?;
        Ok(f.gradient(&x.into()).map_err(to_py)?.into_inner())
    }

    /// `(z*, source, ‖∇F(z*)‖∞)`
    fn reference_optimum(&self) -> PyResult<(Vec<f64>, String, f64)> {
        let r = reference_optimum(&self.inner, None).map_err(to_py)?;
        Ok((r.z.into_inner(), r.source.label().into(), r.grad_residual))
    }

    fn __repr__(&self) -> String {
        format!("Problem({:?}, n={}, agents={})", self.inner.name, self.inner.n, self.inner.num_agents())
    }
}

/// Round-by-round driver for `reduced-aladin`, `bfgs-aladin`, `admm1` and
/// `admm2`.
#[pyclass(name = "Session", module = "caladin")]
struct PySession {
    problem: ConsensusProblem,
    algorithm: Algorithm,
    rho: f64,
    settings: RoundSettings,
    state: ConsensusState,
    reference: LyapunovRef,
}

#[pymethods]
impl PySession {
    #[new]
    #[pyo3(signature = (problem, algorithm="bfgs-aladin", rho=100.0, grad_tol=1e-8))]
    fn new(problem: &PyProblem, algorithm: &str, rho: f64, grad_tol: f64) -> PyResult<Self> {
        let mut cfg = RunConfig::default();
        cfg.set("algorithm", algorithm).map_err(to_py)?;
        if cfg.algorithm.is_federated() {
            return Err(PyValueError::new_err("federated algorithms run through caladin.run"));
        }
        if !(rho > 0.0) {
            return Err(PyValueError::new_err(format!("rho must be positive, got {rho}")));
        }
        let p = problem.inner.clone();
        let z_star = reference_optimum(&p, None).map_err(to_py)?.z;
        let reference = LyapunovRef::new(&p, &z_star, rho).map_err(to_py)?;
        let mut settings = RoundSettings::default();
        settings.exact.grad_tol = grad_tol;
        settings.exact.validate().map_err(to_py)?;
        let bfgs = (cfg.algorithm == Algorithm::BfgsAladin).then_some(rho);
        Ok(PySession {
            state: ConsensusState::zeros(&p, bfgs),
            problem: p,
            algorithm: cfg.algorithm,
            rho,
            settings,
            reference,
        })
    }

    /// Runs one round and returns its metrics.
    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let round = match self.algorithm {
            Algorithm::ReducedAladin => reduced_round,
            Algorithm::BfgsAladin => bfgs_round,
            Algorithm::Admm1 => admm1_round,
            Algorithm::Admm2 => admm2_round,
            Algorithm::Fedaladin | Algorithm::Fedadmm => unreachable!("rejected in the constructor"),
        };
        let out = round(&self.problem, &self.state, self.rho, &self.settings).map_err(to_py)?;
        self.state = out.state;
        let d = PyDict::new(py);
        d.set_item("round", self.state.global.round)?;
        d.set_item("consensus_error", consensus_error(&self.state, Some(&self.reference.z_star)))?;
        d.set_item("lyapunov", lyapunov(&self.state, &self.reference))?;
        d.set_item("dual_sum_inf", out.stats.dual_sum_inf)?;
        d.set_item("bfgs_damped", out.stats.bfgs_damped)?;
        d.set_item("bfgs_skipped", out.stats.bfgs_skipped)?;
        Ok(d)
    }

    #[getter]
    fn round(&self) -> usize {
        self.state.global.round
    }

    #[getter]
    fn z(&self) -> Vec<f64> {
        self.state.global.z.clone().into_inner()
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        rows(self.state.agents.iter().map(|a| a.x.clone()))
    }

    #[getter]
    fn lambdas(&self) -> Vec<Vec<f64>> {
        rows(self.state.agents.iter().map(|a| a.lambda.clone()))
    }

    #[getter]
    fn z_star(&self) -> Vec<f64> {
        self.reference.z_star.clone().into_inner()
    }
}

fn config_from(settings: Option<&Bound<'_, PyDict>>) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(d) = settings {
        for (k, v) in d.iter() {
            let key: String = k.extract()?;
            let value = match v.extract::<bool>() {
                Ok(b) => b.to_string(),
                Err(_) => v.str()?.to_string(),
            };
            cfg.set(&key, &value).map_err(to_py)?;
        }
    }
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// Runs the harness. Keys of `settings` are config keys. Returns a dict with
/// `records` (one dict per trace row), `summary` (JSON text) and `error`.
#[pyfunction]
#[pyo3(signature = (settings=None, out=None))]
fn run<'py>(py: Python<'py>, settings: Option<&Bound<'py, PyDict>>, out: Option<PathBuf>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config_from(settings)?;
    let outcome = harness::run(&cfg, out.as_deref()).map_err(to_py)?;
    let records: Vec<HashMap<&str, f64>> = outcome
        .records
        .iter()
        .map(|r| {
            HashMap::from([
                ("iter", r.iter as f64),
                ("consensus_error", r.consensus_error),
                ("obj_gap", r.obj_gap),
                ("lyapunov", r.lyapunov),
                ("dual_sum_inf", r.dual_sum_inf),
                ("grad_residual", r.grad_residual),
                ("floats_up", r.floats_up as f64),
                ("floats_down", r.floats_down as f64),
                ("wall_ms", r.wall_ms),
            ])
        })
        .collect();
    let d = PyDict::new(py);
    d.set_item("records", records)?;
    d.set_item(
        "summary",
        serde_json::to_string(&outcome.summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))?,
    )?;
    d.set_item("error", outcome.failure.map(|e| e.to_string()))?;
    Ok(d)
}

/// Dense KKT versus Schur solves on random consensus QPs.
#[pyfunction]
#[pyo3(signature = (trials=100, seed=1, agents=None, dim=None))]
fn qp_check<'py>(
    py: Python<'py>,
    trials: usize,
    seed: u64,
    agents: Option<usize>,
    dim: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let r = harness::qp_check(trials, seed, QpShape { agents, dim }, false).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("trials", r.trials)?;
    d.set_item("max_z_diff", r.max_z_diff)?;
    d.set_item("max_kkt_residual", r.max_kkt_residual)?;
    d.set_item("passed", r.passed())?;
    Ok(d)
}

/// Damped BFGS update of a symmetric positive definite `b`.
#[pyfunction]
fn bfgs_update(b: Vec<Vec<f64>>, s: Vec<f64>, y: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let b = SymMat::from_rows(&b).map_err(to_py)?;
    Ok(damped_bfgs_update(&b, &s.into(), &y.into()).map_err(to_py)?.to_rows())
}

#[pyfunction]
fn list_problems() -> Vec<(&'static str, &'static str)> {
    harness::list_problems()
}

#[pymodule(name = "caladin")]
fn caladin_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_class::<PySession>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(qp_check, m)?)?;
    m.add_function(wrap_pyfunction!(bfgs_update, m)?)?;
    m.add_function(wrap_pyfunction!(list_problems, m)?)?;
    m.add("ALGORITHMS", harness::ALGORITHM_NAMES.to_vec())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

//! Flat `key = value` run configuration. `#` starts a comment; unknown keys
//! are rejected and every error names the offending field.

use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;

use crate::aladin::BfgsSeed;
use crate::error::{Error, Result};
use crate::fed::Aggregation;
use crate::problems::{ProblemSpec, PROBLEM_NAMES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    ReducedAladin,
    BfgsAladin,
    Admm1,
    Admm2,
    Fedaladin,
    Fedadmm,
}

pub const ALGORITHM_NAMES: [&str; 6] = ["reduced-aladin", "bfgs-aladin", "admm1", "admm2", "fedaladin", "fedadmm"];

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::ReducedAladin => "reduced-aladin",
            Algorithm::BfgsAladin => "bfgs-aladin",
            Algorithm::Admm1 => "admm1",
            Algorithm::Admm2 => "admm2",
            Algorithm::Fedaladin => "fedaladin",
            Algorithm::Fedadmm => "fedadmm",
        }
    }

    pub fn is_federated(&self) -> bool {
        matches!(self, Algorithm::Fedaladin | Algorithm::Fedadmm)
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "reduced-aladin" => Algorithm::ReducedAladin,
            "bfgs-aladin" => Algorithm::BfgsAladin,
            "admm1" => Algorithm::Admm1,
            "admm2" => Algorithm::Admm2,
            "fedaladin" => Algorithm::Fedaladin,
            "fedadmm" => Algorithm::Fedadmm,
            other => {
                return Err(Error::config(
                    "algorithm",
                    format!("unknown algorithm `{other}` (expected one of {ALGORITHM_NAMES:?})"),
                ))
            }
        })
    }
}

/// Local search used by the federated runners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalSearchKind {
    Inexact,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub problem: String,
    pub n: usize,
    pub agents: usize,
    pub samples_per_client: usize,
    pub noniid: bool,
    pub reg: f64,
    pub algorithm: Algorithm,
    pub rho: f64,
    pub eta: f64,
    pub epochs: usize,
    pub rounds: usize,
    pub participation: f64,
    pub grad_tol: f64,
    pub max_local_iters: usize,
    pub seed: u64,
    /// Stop once the consensus error reaches this value; 0 runs every round.
    pub target: f64,
    pub out: PathBuf,
    #[serde(serialize_with = "serialize_lowercase")]
    pub bfgs_seed: BfgsSeed,
    pub hessian_recovery: bool,
    #[serde(serialize_with = "serialize_lowercase")]
    pub aggregation: Aggregation,
    pub per_client_rho: Option<Vec<f64>>,
    pub local_search: LocalSearchKind,
}

fn serialize_lowercase<T: std::fmt::Debug, S: serde::Serializer>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{v:?}").to_lowercase())
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: "least-squares".into(),
            n: 10,
            agents: 20,
            samples_per_client: 50,
            noniid: true,
            reg: 0.001,
            algorithm: Algorithm::BfgsAladin,
            rho: 100.0,
            eta: 0.01,
            epochs: 5,
            rounds: 100,
            participation: 1.0,
            grad_tol: 1e-8,
            max_local_iters: 200,
            seed: 0,
            target: 0.0,
            out: PathBuf::from("out"),
            bfgs_seed: BfgsSeed::default(),
            hessian_recovery: true,
            aggregation: Aggregation::default(),
            per_client_rho: None,
            local_search: LocalSearchKind::Inexact,
        }
    }
}

fn parse<T: FromStr>(field: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::config(field, format!("cannot parse `{value}`: {e}")))
}

impl RunConfig {
    /// Defaults overridden by the lines of `text`.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}", no + 1), format!("expected `key = value`, got `{line}`"))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// Applies a `KEY=VALUE` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(assignment, "expected KEY=VALUE"))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "problem" => self.problem = value.to_string(),
            "n" => self.n = parse(key, value)?,
            "agents" | "N" => self.agents = parse(key, value)?,
            "samples_per_client" => self.samples_per_client = parse(key, value)?,
            "noniid" => self.noniid = parse(key, value)?,
            "reg" => self.reg = parse(key, value)?,
            "algorithm" => self.algorithm = value.parse()?,
            "rho" => self.rho = parse(key, value)?,
            "eta" => self.eta = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "rounds" | "T" => self.rounds = parse(key, value)?,
            "participation" => self.participation = parse(key, value)?,
            "grad_tol" => self.grad_tol = parse(key, value)?,
            "max_local_iters" => self.max_local_iters = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "target" => self.target = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "bfgs_seed" => self.bfgs_seed = value.parse()?,
            "hessian_recovery" => self.hessian_recovery = parse(key, value)?,
            "aggregation" => self.aggregation = value.parse()?,
            "per_client_rho" => {
                self.per_client_rho = if value.is_empty() || value == "none" {
                    None
                } else {
                    Some(value.split(',').map(|v| parse(key, v.trim())).collect::<Result<_>>()?)
                }
            }
            "local_search" => {
                self.local_search = match value {
                    "inexact" => LocalSearchKind::Inexact,
                    "exact" => LocalSearchKind::Exact,
                    other => {
                        return Err(Error::config(key, format!("expected `inexact` or `exact`, got `{other}`")))
                    }
                }
            }
            "hessian_upload" => {
                if parse::<bool>(key, value)? {
                    return Err(Error::Unsupported(
                        "hessian_upload: agents never transmit Hessians; B_i is recovered on the master".into(),
                    ));
                }
            }
            other => return Err(Error::config(other, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !PROBLEM_NAMES.contains(&self.problem.as_str()) {
            return Err(Error::config(
                "problem",
                format!("unknown problem `{}` (expected one of {PROBLEM_NAMES:?})", self.problem),
            ));
        }
        let positive = [("rho", self.rho), ("eta", self.eta), ("grad_tol", self.grad_tol)];
        for (field, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        let counts = [
            ("n", self.n),
            ("agents", self.agents),
            ("samples_per_client", self.samples_per_client),
            ("epochs", self.epochs),
            ("max_local_iters", self.max_local_iters),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if !(self.reg >= 0.0) || !self.reg.is_finite() {
            return Err(Error::config("reg", format!("must be >= 0, got {}", self.reg)));
        }
        if !(self.target >= 0.0) {
            return Err(Error::config("target", format!("must be >= 0, got {}", self.target)));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::config(
                "participation",
                format!("must lie in (0, 1], got {}", self.participation),
            ));
        }
        if !self.algorithm.is_federated() && self.participation < 1.0 {
            return Err(Error::config(
                "participation",
                format!("{} needs every agent each round", self.algorithm.name()),
            ));
        }
        if let Some(r) = &self.per_client_rho {
            if !self.algorithm.is_federated() {
                return Err(Error::config("per_client_rho", "only the federated runners accept per-client rho"));
            }
            if r.len() != self.agents {
                return Err(Error::config(
                    "per_client_rho",
                    format!("expected {} values, got {}", self.agents, r.len()),
                ));
            }
            if let Some(bad) = r.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
                return Err(Error::config("per_client_rho", format!("values must be positive, got {bad}")));
            }
        }
        if self.problem == "nonconvex-log" && self.n % 2 != 0 {
            return Err(Error::config("n", format!("nonconvex-log needs an even dimension, got {}", self.n)));
        }
        Ok(())
    }

    pub fn problem_spec(&self) -> ProblemSpec {
        ProblemSpec {
            name: self.problem.clone(),
            n: self.n,
            agents: self.agents,
            samples_per_client: self.samples_per_client,
            noniid: self.noniid,
            reg: self.reg,
            seed: self.seed,
        }
    }
}

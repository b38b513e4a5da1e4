//! Federated runners: FedALADIN and FedADMM with local epochs, client
//! sampling and communication accounting.
//!
//! Each round the coordinator samples clients, broadcasts `z`, collects one
//! n-vector `w_i` per participant and aggregates. Nothing else crosses the
//! wire: FedALADIN decodes its dual locally from `(x_i⁻, g_i, z)`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::local_solver::{solve_exact, solve_inexact, AugmentedSubproblem, ExactSolveSettings, InexactSolveSettings};
use crate::problems::{ConsensusProblem, Objective};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedAlgorithm {
    FedAladin,
    FedAdmm,
}

impl std::str::FromStr for FedAlgorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedaladin" => Ok(FedAlgorithm::FedAladin),
            "fedadmm" => Ok(FedAlgorithm::FedAdmm),
            other => Err(Error::config("algorithm", format!("unknown federated algorithm `{other}`"))),
        }
    }
}

/// How the server forms `z` under partial participation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Mean over the clients sampled this round.
    Sampled,
    /// Mean over every client's most recent upload (zero before the first).
    #[default]
    Latest,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(Aggregation::Sampled),
            "latest" => Ok(Aggregation::Latest),
            other => Err(Error::config(
                "aggregation",
                format!("expected `sampled` or `latest`, got `{other}`"),
            )),
        }
    }
}

/// Local search run by each participant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocalSearch {
    Inexact(InexactSolveSettings),
    /// Exact solves; used to compare against the optimisation-mode rounds.
    Exact(ExactSolveSettings),
}

impl LocalSearch {
    fn validate(&self) -> Result<()> {
        match self {
            LocalSearch::Inexact(s) => s.validate(),
            LocalSearch::Exact(s) => s.validate(),
        }
    }

    fn run(&self, sub: &AugmentedSubproblem<'_>, start: &Vector) -> Result<Vector> {
        match self {
            LocalSearch::Inexact(s) => solve_inexact(sub, start, s),
            LocalSearch::Exact(s) => solve_exact(sub, start, s),
        }
    }
}

/// Per-client memory. FedALADIN uses `x`, `g`, `lambda`; FedADMM uses `x`
/// and `lambda_admm`. `w` is the last upload.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub x: Vector,
    pub lambda: Vector,
    pub g: Vector,
    pub lambda_admm: Vector,
    pub w: Vector,
}

impl ClientState {
    pub fn zeros(n: usize) -> Self {
        ClientState {
            x: Vector::zeros(n),
            lambda: Vector::zeros(n),
            g: Vector::zeros(n),
            lambda_admm: Vector::zeros(n),
            w: Vector::zeros(n),
        }
    }
}

/// `λ = ρ(x⁻ − z) − g`, local search from `x⁻`, then `g = ∇f(x)` and
/// `w = x − g/ρ`.
pub fn fedaladin_client_update(
    objective: &dyn Objective,
    client: &mut ClientState,
    z: &Vector,
    rho: f64,
    search: &LocalSearch,
) -> Result<Vector> {
    let lambda = &(&client.x - z).scaled(rho) - &client.g;
    let sub = AugmentedSubproblem::new(objective, &lambda, z, rho)?;
    let x = search.run(&sub, &client.x)?;
    let g = objective.gradient(&x)?;
    let w = &x - &g.scaled(1.0 / rho);
    client.lambda = lambda;
    client.x = x;
    client.g = g;
    client.w = w.clone();
    Ok(w)
}

/// Local search with `λ^ADMM`, then `λ^ADMM += ρ(x − z)` and
/// `w = x + λ^ADMM/ρ`.
pub fn fedadmm_client_update(
    objective: &dyn Objective,
    client: &mut ClientState,
    z: &Vector,
    rho: f64,
    search: &LocalSearch,
) -> Result<Vector> {
    let sub = AugmentedSubproblem::new(objective, &client.lambda_admm, z, rho)?;
    let x = search.run(&sub, &client.x)?;
    let lambda = &client.lambda_admm + &(&x - z).scaled(rho);
    let w = &x + &lambda.scaled(1.0 / rho);
    client.x = x;
    client.lambda_admm = lambda;
    client.w = w.clone();
    Ok(w)
}

/// Arithmetic mean of the uploads.
pub fn server_aggregate(ws: &[&Vector]) -> Result<Vector> {
    let first = ws
        .first()
        .ok_or_else(|| Error::InvalidArgument("aggregation needs at least one upload".into()))?;
    let n = first.len();
    if let Some(bad) = ws.iter().find(|w| w.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: bad.len(),
        });
    }
    Ok(Vector::mean(n, ws.iter().copied()))
}

/// `⌈rate·N⌉` distinct clients, sorted.
pub fn sample_participants(rng: &mut ChaCha8Rng, clients: usize, rate: f64) -> Vec<usize> {
    let k = ((rate * clients as f64).ceil() as usize).clamp(1, clients);
    if k == clients {
        return (0..clients).collect();
    }
    let mut ids = sample(rng, clients, k).into_vec();
    ids.sort_unstable();
    ids
}

/// Cumulative floats exchanged.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommLedger {
    pub up_per_round: Vec<u64>,
    pub down_per_round: Vec<u64>,
    pub total_up: u64,
    pub total_down: u64,
}

impl CommLedger {
    /// `participants` clients each receive `z` and send one `w_i`.
    pub fn record(&mut self, participants: usize, n: usize) {
        let floats = (participants * n) as u64;
        self.up_per_round.push(floats);
        self.down_per_round.push(floats);
        self.total_up += floats;
        self.total_down += floats;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundPlan {
    pub round: usize,
    pub participants: Vec<usize>,
    pub total_rounds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedSettings {
    pub algorithm: FedAlgorithm,
    pub rho: f64,
    /// Overrides `rho` per client when set.
    pub per_client_rho: Option<Vec<f64>>,
    pub search: LocalSearch,
    pub participation: f64,
    pub rounds: usize,
    pub aggregation: Aggregation,
    pub seed: u64,
}

impl FedSettings {
    pub fn validate(&self, clients: usize) -> Result<()> {
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::config("rho", format!("must be positive, got {}", self.rho)));
        }
        if let Some(r) = &self.per_client_rho {
            if r.len() != clients {
                return Err(Error::config(
                    "per_client_rho",
                    format!("expected {clients} values, got {}", r.len()),
                ));
            }
            if let Some(bad) = r.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
                return Err(Error::config("per_client_rho", format!("values must be positive, got {bad}")));
            }
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::config(
                "participation",
                format!("must lie in (0, 1], got {}", self.participation),
            ));
        }
        self.search.validate()
    }

    fn rho_for(&self, client: usize) -> f64 {
        self.per_client_rho.as_ref().map_or(self.rho, |r| r[client])
    }
}

/// Runner state between rounds.
#[derive(Debug, Clone)]
pub struct FedState {
    pub clients: Vec<ClientState>,
    pub z: Vector,
    pub round: usize,
    pub comm: CommLedger,
    rng: ChaCha8Rng,
}

pub struct FedRunner<'a> {
    pub problem: &'a ConsensusProblem,
    pub settings: FedSettings,
    pub state: FedState,
}

impl<'a> FedRunner<'a> {
    /// All-zero start: `z = 0`, `x_i = 0`, duals and gradients zero.
    pub fn new(problem: &'a ConsensusProblem, settings: FedSettings) -> Result<Self> {
        settings.validate(problem.num_agents())?;
        let n = problem.n;
        let state = FedState {
            clients: vec![ClientState::zeros(n); problem.num_agents()],
            z: Vector::zeros(n),
            round: 0,
            comm: CommLedger::default(),
            rng: ChaCha8Rng::seed_from_u64(settings.seed),
        };
        Ok(FedRunner { problem, settings, state })
    }

    pub fn finished(&self) -> bool {
        self.state.round >= self.settings.rounds
    }

    /// One round. Non-participants are left untouched.
    pub fn step(&mut self) -> Result<RoundPlan> {
        let participants = sample_participants(
            &mut self.state.rng,
            self.problem.num_agents(),
            self.settings.participation,
        );
        let z = &self.state.z;
        let settings = &self.settings;
        let problem = self.problem;
        let updated: Vec<Result<ClientState>> = participants
            .par_iter()
            .map(|&i| {
                let mut c = self.state.clients[i].clone();
                let f = problem.agents[i].as_ref();
                let rho = settings.rho_for(i);
                match settings.algorithm {
                    FedAlgorithm::FedAladin => fedaladin_client_update(f, &mut c, z, rho, &settings.search)?,
                    FedAlgorithm::FedAdmm => fedadmm_client_update(f, &mut c, z, rho, &settings.search)?,
                };
                Ok(c)
            })
            .collect();
        let mut fresh = Vec::with_capacity(participants.len());
        for (&i, r) in participants.iter().zip(updated) {
            fresh.push(r.map_err(|e| e.for_agent(i))?);
        }
        for (&i, c) in participants.iter().zip(fresh) {
            self.state.clients[i] = c;
        }
        self.state.z = match settings.aggregation {
            Aggregation::Sampled => {
                let ws: Vec<&Vector> = participants.iter().map(|&i| &self.state.clients[i].w).collect();
                server_aggregate(&ws)?
            }
            Aggregation::Latest => {
                let ws: Vec<&Vector> = self.state.clients.iter().map(|c| &c.w).collect();
                server_aggregate(&ws)?
            }
        };
        self.state.comm.record(participants.len(), problem.n);
        let plan = RoundPlan {
            round: self.state.round,
            participants,
            total_rounds: settings.rounds,
        };
        self.state.round += 1;
        Ok(plan)
    }
}

/// Runs every round and returns `z` after each one.
pub fn run_federated(problem: &ConsensusProblem, settings: FedSettings) -> Result<(Vec<Vector>, FedState)> {
    let mut runner = FedRunner::new(problem, settings)?;
    let mut zs = Vec::with_capacity(runner.settings.rounds);
    while !runner.finished() {
        runner.step()?;
        zs.push(runner.state.z.clone());
    }
    Ok((zs, runner.state))
}

//! Reduced Consensus ALADIN and Consensus BFGS ALADIN.
//!
//! A round maps `(x_i⁻, λ_i, g_i⁻, B_i, z)` to `(x_i⁺, λ_i⁺, g_i⁺, B_i⁺, z⁺)`:
//!
//! 1. every agent solves `min f_i + λ_iᵀx + (ρ/2)‖x − z‖²` exactly,
//! 2. the master decodes `g_i = ρ(z − x_i⁺) − λ_i` and, for the BFGS variant,
//!    updates `B_i` from `s_i = x_i⁺ − x_i⁻`, `y_i = g_i − g_i⁻`,
//! 3. the consensus QP gives `z⁺`, and the duals are refreshed as
//!    `λ_i⁺ = B_i(x_i⁺ − z⁺) − g_i` (`B_i = ρI` for the reduced variant).
//!
//! The refresh closes the round, so the state after a round is the pair
//! `(z⁺, λ⁺)` the next round starts from. The initial `λ` is used as given.

use crate::error::{Error, Result};
use crate::linalg::{is_spd, SymMat, Vector};
use crate::local_solver::{map_agents, solve_exact, AugmentedSubproblem, ExactSolveSettings};
use crate::problems::ConsensusProblem;
use crate::qp_solver::{reduced_update, solve_schur, ConsensusQPInput, QpAgent};

/// Steps with `‖s‖∞` below this skip the BFGS update.
pub const DEGENERATE_STEP: f64 = 1e-14;

/// One agent's iterate and memory.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub x: Vector,
    pub lambda: Vector,
    pub g: Vector,
    pub x_prev: Vector,
    pub g_prev: Vector,
    /// Hessian approximation; `None` for the reduced variant.
    pub b: Option<SymMat>,
    /// Number of BFGS updates applied so far.
    pub bfgs_updates: usize,
}

impl AgentState {
    pub fn zeros(n: usize) -> Self {
        AgentState {
            x: Vector::zeros(n),
            lambda: Vector::zeros(n),
            g: Vector::zeros(n),
            x_prev: Vector::zeros(n),
            g_prev: Vector::zeros(n),
            b: None,
            bfgs_updates: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    pub z: Vector,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusState {
    pub agents: Vec<AgentState>,
    pub global: GlobalState,
}

impl ConsensusState {
    /// All-zero start. With `bfgs_rho = Some(ρ)` every `B_i` starts at `ρI`.
    pub fn zeros(problem: &ConsensusProblem, bfgs_rho: Option<f64>) -> Self {
        let n = problem.n;
        let agents = (0..problem.num_agents())
            .map(|_| AgentState {
                b: bfgs_rho.map(|r| SymMat::scaled_identity(n, r)),
                ..AgentState::zeros(n)
            })
            .collect();
        ConsensusState {
            agents,
            global: GlobalState {
                z: Vector::zeros(n),
                round: 0,
            },
        }
    }

    pub fn dual_sum(&self) -> Vector {
        Vector::sum(self.global.z.len(), self.agents.iter().map(|a| &a.lambda))
    }

    pub fn max_dual_inf(&self) -> f64 {
        self.agents.iter().map(|a| a.lambda.norm_inf()).fold(0.0, f64::max)
    }
}

/// How `B_i` is initialised at its first curvature update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BfgsSeed {
    /// Keep `B_i` as given (normally `ρI`).
    Rho,
    /// Replace `B_i` by `(yᵀy / sᵀy)·I` before the first update when
    /// `sᵀy > 0`.
    #[default]
    Scaled,
}

impl std::str::FromStr for BfgsSeed {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rho" => Ok(BfgsSeed::Rho),
            "scaled" => Ok(BfgsSeed::Scaled),
            other => Err(Error::config("bfgs_seed", format!("expected `rho` or `scaled`, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundSettings {
    pub exact: ExactSolveSettings,
    /// When false, `B_i` is never updated (BFGS variant only).
    pub hessian_recovery: bool,
    pub bfgs_seed: BfgsSeed,
}

impl Default for RoundSettings {
    fn default() -> Self {
        RoundSettings {
            exact: ExactSolveSettings::default(),
            hessian_recovery: true,
            bfgs_seed: BfgsSeed::default(),
        }
    }
}

/// Per-round bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RoundStats {
    /// `‖Σ λ_i⁺‖∞`
    pub dual_sum_inf: f64,
    /// `max_i ‖λ_i⁺‖∞`
    pub max_dual_inf: f64,
    pub bfgs_damped: usize,
    pub bfgs_skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutput {
    pub state: ConsensusState,
    pub stats: RoundStats,
}

/// `ρ(z − x⁺) − λ`
pub fn decode_gradient(x_plus: &Vector, z: &Vector, lambda: &Vector, rho: f64) -> Vector {
    let mut g = (z - x_plus).scaled(rho);
    g -= lambda;
    g
}

/// Result of a damped BFGS step.
#[derive(Debug, Clone, PartialEq)]
pub struct BfgsUpdate {
    pub b: SymMat,
    /// `Some(θ)` when the curvature pair was damped.
    pub theta: Option<f64>,
}

/// Damped BFGS: if `yᵀs ≤ 0.2·sᵀBs`, `y ← y + θ(Bs − y)` with
/// `θ = (0.2·sᵀBs − sᵀy)/(sᵀBs − sᵀy)`; then
/// `B⁺ = B − Bs sᵀB/(sᵀBs) + y yᵀ/(sᵀy)`.
pub fn damped_bfgs_update_detail(b: &SymMat, s: &Vector, y: &Vector) -> Result<BfgsUpdate> {
    let s_inf = s.norm_inf();
    if s_inf < DEGENERATE_STEP {
        return Err(Error::DegenerateStep(s_inf));
    }
    let bs = b.mul_vec(s);
    let sbs = s.dot(&bs);
    if !(sbs > 0.0) {
        return Err(Error::NotPositiveDefinite { pivot: 0, value: sbs });
    }
    let sy = s.dot(y);
    let (y, sy, theta) = if sy <= 0.2 * sbs {
        let theta = (0.2 * sbs - sy) / (sbs - sy);
        let damped = y + &(&bs - y).scaled(theta);
        let sy = s.dot(&damped);
        (damped, sy, Some(theta))
    } else {
        (y.clone(), sy, None)
    };
    Ok(BfgsUpdate {
        b: b.rank_two_update(-1.0 / sbs, &bs, 1.0 / sy, &y),
        theta,
    })
}

/// [`damped_bfgs_update_detail`] returning only the new matrix.
pub fn damped_bfgs_update(b: &SymMat, s: &Vector, y: &Vector) -> Result<SymMat> {
    damped_bfgs_update_detail(b, s, y).map(|u| u.b)
}

fn check_state(problem: &ConsensusProblem, state: &ConsensusState, rho: f64) -> Result<()> {
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

/// Exact local solves `x_i⁺` for every agent, warm-started at `x_i`.
pub(crate) fn exact_local_solves(
    problem: &ConsensusProblem,
    state: &ConsensusState,
    rho: f64,
    settings: &ExactSolveSettings,
) -> Result<Vec<Vector>> {
    let z = &state.global.z;
    map_agents(problem.num_agents(), |i| {
        let a = &state.agents[i];
        let sub = AugmentedSubproblem::new(problem.agents[i].as_ref(), &a.lambda, z, rho)?;
        solve_exact(&sub, &a.x, settings)
    })
}

fn finish_round(
    state: &ConsensusState,
    x_plus: Vec<Vector>,
    g_plus: Vec<Vector>,
    lambda_plus: Vec<Vector>,
    b_plus: Vec<Option<SymMat>>,
    updates: Vec<usize>,
    z_plus: Vector,
    mut stats: RoundStats,
) -> RoundOutput {
    let agents: Vec<AgentState> = state
        .agents
        .iter()
        .zip(x_plus)
        .zip(g_plus)
        .zip(lambda_plus)
        .zip(b_plus)
        .zip(updates)
        .map(|(((((old, x), g), lambda), b), bfgs_updates)| AgentState {
            x_prev: old.x.clone(),
            g_prev: old.g.clone(),
            x,
            g,
            lambda,
            b,
            bfgs_updates,
        })
        .collect();
    let next = ConsensusState {
        agents,
        global: GlobalState {
            z: z_plus,
            round: state.global.round + 1,
        },
    };
    stats.dual_sum_inf = next.dual_sum().norm_inf();
    stats.max_dual_inf = next.max_dual_inf();
    RoundOutput { state: next, stats }
}

/// One round of Reduced Consensus ALADIN.
pub fn reduced_round(
    problem: &ConsensusProblem,
    state: &ConsensusState,
    rho: f64,
    settings: &RoundSettings,
) -> Result<RoundOutput> {
    check_state(problem, state, rho)?;
    let z = &state.global.z;
    let x_plus = exact_local_solves(problem, state, rho, &settings.exact)?;
    let g_plus: Vec<Vector> = x_plus
        .iter()
        .zip(&state.agents)
        .map(|(x, a)| decode_gradient(x, z, &a.lambda, rho))
        .collect();
    let z_plus = reduced_update(&x_plus, &g_plus, rho)?;
    // λ⁺ = ρ(x⁺ − z⁺) − g
    let lambda_plus = x_plus
        .iter()
        .zip(&g_plus)
        .map(|(x, g)| &(x - &z_plus).scaled(rho) - g)
        .collect();
    let b_plus = state.agents.iter().map(|a| a.b.clone()).collect();
    let updates = state.agents.iter().map(|a| a.bfgs_updates).collect();
    Ok(finish_round(
        state,
        x_plus,
        g_plus,
        lambda_plus,
        b_plus,
        updates,
        z_plus,
        RoundStats::default(),
    ))
}

/// One round of Consensus BFGS ALADIN. Every agent must carry a `B_i`.
///
/// Curvature pairs exist only after the first round, so round 0 uses the
/// initial `B_i` unchanged. Pairs with `‖y_i‖∞ ≤ 10·grad_tol` are skipped.
pub fn bfgs_round(
    problem: &ConsensusProblem,
    state: &ConsensusState,
    rho: f64,
    settings: &RoundSettings,
) -> Result<RoundOutput> {
    check_state(problem, state, rho)?;
    if state.agents.iter().any(|a| a.b.is_none()) {
        return Err(Error::InvalidArgument("BFGS round needs a Hessian approximation per agent".into()));
    }
    let z = &state.global.z;
    let x_plus = exact_local_solves(problem, state, rho, &settings.exact)?;
    let g_plus: Vec<Vector> = x_plus
        .iter()
        .zip(&state.agents)
        .map(|(x, a)| decode_gradient(x, z, &a.lambda, rho))
        .collect();

    let mut stats = RoundStats::default();
    let mut b_plus = Vec::with_capacity(state.agents.len());
    let mut updates = Vec::with_capacity(state.agents.len());
    let have_pairs = state.global.round > 0 && settings.hessian_recovery;
    for (i, a) in state.agents.iter().enumerate() {
        let mut b = a.b.clone().expect("checked above");
        let mut count = a.bfgs_updates;
        if have_pairs {
            let s = &x_plus[i] - &a.x;
            let y = &g_plus[i] - &a.g;
            // y below the decoding accuracy of the local solves is noise
            if y.norm_inf() <= 10.0 * settings.exact.grad_tol {
                stats.bfgs_skipped += 1;
                b_plus.push(b);
                updates.push(count);
                continue;
            }
            if count == 0 && settings.bfgs_seed == BfgsSeed::Scaled {
                let sy = s.dot(&y);
                let scale = y.norm_sq() / sy;
                if sy > 0.0 && scale.is_finite() && scale > 0.0 {
                    b = SymMat::scaled_identity(problem.n, scale);
                }
            }
            match damped_bfgs_update_detail(&b, &s, &y) {
                Ok(u) => {
                    if u.theta.is_some() {
                        stats.bfgs_damped += 1;
                    }
                    b = u.b;
                    count += 1;
                }
                Err(Error::DegenerateStep(_)) => stats.bfgs_skipped += 1,
                Err(e) => return Err(e.for_agent(i)),
            }
            debug_assert!(is_spd(&b), "agent {i}: B lost positive definiteness");
        }
        b_plus.push(b);
        updates.push(count);
    }

    let input = ConsensusQPInput {
        n: problem.n,
        agents: b_plus
            .iter()
            .zip(&g_plus)
            .zip(&x_plus)
            .map(|((b, g), x)| QpAgent {
                b: b.clone(),
                g: g.clone(),
                x_plus: x.clone(),
            })
            .collect(),
    };
    let sol = solve_schur(&input)?;
    Ok(finish_round(
        state,
        x_plus,
        g_plus,
        sol.lambda,
        b_plus.into_iter().map(Some).collect(),
        updates,
        sol.z,
        stats,
    ))
}

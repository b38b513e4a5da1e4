//! Experiment orchestration behind the `caladin` CLI.

pub mod config;
pub mod trace;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aladin::{bfgs_round, reduced_round, AgentState, ConsensusState, GlobalState, RoundSettings};
use crate::consensus_admm::{admm1_round, admm2_round};
use crate::diagnostics::{
    consensus_error, estimate_qlinear_rate, grad_residual, implied_delta, lyapunov, problem_constants,
    reference_optimum, LyapunovRef,
};
use crate::error::{Error, Result};
use crate::fed::{FedAlgorithm, FedRunner, FedSettings, LocalSearch};
use crate::linalg::SymMat;
use crate::local_solver::{ExactSolveSettings, InexactSolveSettings};
use crate::problems::{build_problem, ConsensusProblem};
use crate::qp_solver::{kkt_residual, random_instance, solve_dense_kkt, solve_schur};

pub use config::{Algorithm, LocalSearchKind, RunConfig, ALGORITHM_NAMES};
pub use trace::{IterationRecord, Summary, TraceWriter, CSV_COLUMNS};

/// Exit status for configuration problems.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for solver failures during a run.
pub const EXIT_RUNTIME: i32 = 3;

pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Config { .. } | Error::Unsupported(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

const METRIC_NOTE: &str =
    "consensus_error = max(max_i |x_i - z|_inf, |z - z*|_inf); a stand-in for the unlabeled convergence axis";

/// Builds the problem, mapping generator argument errors to config errors.
pub fn build(config: &RunConfig) -> Result<ConsensusProblem> {
    config.validate()?;
    build_problem(&config.problem_spec()).map_err(|e| match e {
        Error::InvalidArgument(m) => Error::config("problem", m),
        other => other,
    })
}

enum Engine<'a> {
    Exact {
        state: ConsensusState,
        settings: RoundSettings,
    },
    Fed(Box<FedRunner<'a>>),
}

fn fed_view(runner: &FedRunner<'_>) -> ConsensusState {
    let z = &runner.state.z;
    let rho = runner.settings.rho;
    let agents = runner
        .state
        .clients
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let r = runner.settings.per_client_rho.as_ref().map_or(rho, |v| v[i]);
            let lambda = match runner.settings.algorithm {
                // the dual the client will decode at its next participation
                FedAlgorithm::FedAladin => &(&c.x - z).scaled(r) - &c.g,
                FedAlgorithm::FedAdmm => c.lambda_admm.clone(),
            };
            AgentState {
                x: c.x.clone(),
                lambda,
                g: c.g.clone(),
                ..AgentState::zeros(z.len())
            }
        })
        .collect();
    ConsensusState {
        agents,
        global: GlobalState {
            z: z.clone(),
            round: runner.state.round,
        },
    }
}

impl Engine<'_> {
    fn view(&self) -> ConsensusState {
        match self {
            Engine::Exact { state, .. } => state.clone(),
            Engine::Fed(r) => fed_view(r),
        }
    }
}

/// In-memory result of a run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<IterationRecord>,
    pub summary: Summary,
    /// Set when the run stopped on a solver error; the records are the prefix
    /// computed before it.
    pub failure: Option<Error>,
}

struct Metrics<'a> {
    problem: &'a ConsensusProblem,
    reference: LyapunovRef,
    f_star: f64,
}

impl Metrics<'_> {
    fn record(&self, state: &ConsensusState, iter: usize, floats: u64, started: &Instant) -> Result<IterationRecord> {
        let z = &state.global.z;
        Ok(IterationRecord {
            iter,
            consensus_error: consensus_error(state, Some(&self.reference.z_star)),
            obj_gap: self.problem.total_value(z)? - self.f_star,
            lyapunov: lyapunov(state, &self.reference),
            dual_sum_inf: state.dual_sum().norm_inf(),
            grad_residual: grad_residual(self.problem, z)?,
            floats_up: floats,
            floats_down: floats,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }
}

/// Runs one configuration. With `out = Some(dir)` the trace is streamed to
/// `dir/trace.csv` and the summary written to `dir/summary.json`.
///
/// Configuration and setup failures return `Err`; a solver failure mid-run
/// returns `Ok` with [`RunOutcome::failure`] set and the partial trace kept.
pub fn run(config: &RunConfig, out: Option<&Path>) -> Result<RunOutcome> {
    let problem = build(config)?;
    let started = Instant::now();
    let reference_point = reference_optimum(&problem, None)?;
    let reference = LyapunovRef::new(&problem, &reference_point.z, config.rho)?;
    let f_star = problem.total_value(&reference_point.z)?;
    let constants = problem_constants(&problem)?;
    let metrics = Metrics {
        problem: &problem,
        reference,
        f_star,
    };

    let exact = ExactSolveSettings {
        grad_tol: config.grad_tol,
        max_iters: config.max_local_iters,
        ..ExactSolveSettings::default()
    };
    let mut engine = if config.algorithm.is_federated() {
        let search = match config.local_search {
            LocalSearchKind::Inexact => LocalSearch::Inexact(InexactSolveSettings {
                epochs: config.epochs,
                eta: config.eta,
            }),
            LocalSearchKind::Exact => LocalSearch::Exact(exact),
        };
        let settings = FedSettings {
            algorithm: if config.algorithm == Algorithm::Fedaladin {
                FedAlgorithm::FedAladin
            } else {
                FedAlgorithm::FedAdmm
            },
            rho: config.rho,
            per_client_rho: config.per_client_rho.clone(),
            search,
            participation: config.participation,
            rounds: config.rounds,
            aggregation: config.aggregation,
            seed: config.seed,
        };
        Engine::Fed(Box::new(FedRunner::new(&problem, settings)?))
    } else {
        let bfgs = (config.algorithm == Algorithm::BfgsAladin).then_some(config.rho);
        Engine::Exact {
            state: ConsensusState::zeros(&problem, bfgs),
            settings: RoundSettings {
                exact,
                hessian_recovery: config.hessian_recovery,
                bfgs_seed: config.bfgs_seed,
            },
        }
    };

    let mut writer = match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Some(TraceWriter::new(BufWriter::new(File::create(dir.join("trace.csv"))?))?)
        }
        None => None,
    };
    let per_round = (problem.num_agents() * problem.n) as u64;
    let mut floats = 0u64;
    let mut records = Vec::with_capacity(config.rounds + 1);
    let mut failure = None;
    let (mut damped, mut skipped) = (0, 0);

    let first = metrics.record(&engine.view(), 0, 0, &started)?;
    if let Some(w) = writer.as_mut() {
        w.push(&first)?;
    }
    let mut reached = (config.target > 0.0 && first.consensus_error <= config.target).then_some(0);
    records.push(first);

    for k in 1..=config.rounds {
        if reached.is_some() {
            break;
        }
        let step = match &mut engine {
            Engine::Exact { state, settings } => {
                let out = match config.algorithm {
                    Algorithm::ReducedAladin => reduced_round(&problem, state, config.rho, settings),
                    Algorithm::BfgsAladin => bfgs_round(&problem, state, config.rho, settings),
                    Algorithm::Admm1 => admm1_round(&problem, state, config.rho, settings),
                    Algorithm::Admm2 => admm2_round(&problem, state, config.rho, settings),
                    Algorithm::Fedaladin | Algorithm::Fedadmm => unreachable!("federated runs use the fed engine"),
                };
                out.map(|o| {
                    damped += o.stats.bfgs_damped;
                    skipped += o.stats.bfgs_skipped;
                    *state = o.state;
                    floats += per_round;
                })
            }
            Engine::Fed(runner) => runner.step().map(|plan| {
                floats += (plan.participants.len() * problem.n) as u64;
            }),
        };
        let record = step.and_then(|()| metrics.record(&engine.view(), k, floats, &started));
        match record {
            Ok(r) => {
                if let Some(w) = writer.as_mut() {
                    w.push(&r)?;
                }
                if config.target > 0.0 && r.consensus_error <= config.target {
                    reached = Some(k);
                }
                records.push(r);
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }

    let final_state = engine.view();
    let lyap: Vec<f64> = records.iter().map(|r| r.lyapunov).collect();
    let summary = Summary {
        version: env!("CARGO_PKG_VERSION").to_string(),
        status: match (&failure, reached) {
            (Some(_), _) => "error".into(),
            (None, Some(_)) => "target-reached".into(),
            (None, None) => "max-rounds".into(),
        },
        error: failure.as_ref().map(|e| e.to_string()),
        rounds: records.len() - 1,
        rounds_to_target: reached,
        target: config.target,
        final_record: records.last().cloned(),
        final_objective: problem.total_value(&final_state.global.z).ok(),
        optimum: trace::OptimumInfo {
            source: reference_point.source.label().into(),
            grad_residual: reference_point.grad_residual,
            objective: f_star,
        },
        m_f: constants.m_f,
        omega_f: constants.omega_f,
        implied_delta: implied_delta(constants.m_f, &final_state, &metrics.reference),
        qlinear_rate: estimate_qlinear_rate(&lyap).ok(),
        bfgs_damped: damped,
        bfgs_skipped: skipped,
        metric_note: METRIC_NOTE.into(),
        problem_notes: problem.notes.clone(),
        config: config.clone(),
    };
    if let Some(dir) = out {
        let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(dir.join("summary.json"), json + "\n")?;
    }
    Ok(RunOutcome {
        records,
        summary,
        failure,
    })
}

/// First `iter` whose consensus error is at or below `tol`.
pub fn rounds_to_tolerance(records: &[IterationRecord], tol: f64) -> Option<usize> {
    records.iter().find(|r| r.consensus_error <= tol).map(|r| r.iter)
}

#[derive(Debug, Clone)]
pub struct ComparisonEntry {
    pub label: String,
    pub outcome: RunOutcome,
    pub rounds_to_tolerance: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub entries: Vec<ComparisonEntry>,
    pub tolerance: f64,
}

impl Comparison {
    /// Fastest first; runs that never reached the tolerance last, by final
    /// objective.
    pub fn ranking(&self) -> Vec<&ComparisonEntry> {
        let mut order: Vec<&ComparisonEntry> = self.entries.iter().collect();
        order.sort_by(|a, b| {
            let key = |e: &ComparisonEntry| (e.rounds_to_tolerance.unwrap_or(usize::MAX), e.outcome.summary.final_objective.unwrap_or(f64::INFINITY));
            let (ra, fa) = key(a);
            let (rb, fb) = key(b);
            ra.cmp(&rb).then(fa.total_cmp(&fb))
        });
        order
    }

    pub fn ranking_text(&self) -> String {
        let mut s = format!("ranking by rounds to consensus error <= {}\n", self.tolerance);
        for (pos, e) in self.ranking().into_iter().enumerate() {
            let rounds = e.rounds_to_tolerance.map_or("not reached".to_string(), |r| r.to_string());
            let obj = e.outcome.summary.final_objective.map_or("n/a".to_string(), |f| f.to_string());
            s += &format!("{}. {}: {} (final objective {})\n", pos + 1, e.label, rounds, obj);
        }
        s
    }
}

/// Runs every configuration on the shared problem and seed. Each run's own
/// trace goes to `out/<label>/`, the merged table to `out/compare.csv`.
pub fn compare(configs: &[RunConfig], tolerance: f64, out: Option<&Path>) -> Result<Comparison> {
    let first = configs.first().ok_or_else(|| Error::config("config", "compare needs at least one config"))?;
    for c in &configs[1..] {
        if c.problem_spec() != first.problem_spec() {
            return Err(Error::config("problem", "compared configs must share problem parameters and seed"));
        }
    }
    let mut labels: Vec<String> = Vec::new();
    for c in configs {
        let base = c.algorithm.name().to_string();
        let mut label = base.clone();
        let mut k = 2;
        while labels.contains(&label) {
            label = format!("{base}-{k}");
            k += 1;
        }
        labels.push(label);
    }
    let mut entries = Vec::with_capacity(configs.len());
    for (c, label) in configs.iter().zip(labels) {
        let dir = out.map(|o| o.join(&label));
        let outcome = run(c, dir.as_deref())?;
        let rounds_to_tolerance = rounds_to_tolerance(&outcome.records, tolerance);
        entries.push(ComparisonEntry {
            label,
            outcome,
            rounds_to_tolerance,
        });
    }
    let comparison = Comparison { entries, tolerance };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("compare.csv"), comparison_csv(&comparison))?;
        fs::write(dir.join("ranking.txt"), comparison.ranking_text())?;
    }
    Ok(comparison)
}

/// One row per iteration and one column group per run. A single run gives
/// exactly its own trace.
pub fn comparison_csv(c: &Comparison) -> String {
    let single = c.entries.len() == 1;
    let metric_cols = &CSV_COLUMNS[1..];
    let mut header = vec!["iter".to_string()];
    for e in &c.entries {
        for col in metric_cols {
            header.push(if single { col.to_string() } else { format!("{}:{col}", e.label) });
        }
    }
    let mut s = header.join(",") + "\n";
    let rows = c.entries.iter().map(|e| e.outcome.records.len()).max().unwrap_or(0);
    for k in 0..rows {
        let mut line = vec![k.to_string()];
        for e in &c.entries {
            match e.outcome.records.get(k) {
                Some(r) => line.extend(r.fields()[1..].iter().cloned()),
                None => line.extend(std::iter::repeat_n(String::new(), metric_cols.len())),
            }
        }
        s += &(line.join(",") + "\n");
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpCheckReport {
    pub trials: usize,
    pub max_z_diff: f64,
    pub max_kkt_residual: f64,
}

impl QpCheckReport {
    pub const TOLERANCE: f64 = 1e-9;

    pub fn passed(&self) -> bool {
        self.max_z_diff <= Self::TOLERANCE && self.max_kkt_residual <= Self::TOLERANCE
    }
}

/// Dimensions of a qp-check instance; `None` draws `N ∈ [1, 8]`, `n ∈ [1, 6]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QpShape {
    pub agents: Option<usize>,
    pub dim: Option<usize>,
}

/// Dense KKT versus Schur solves on random instances. `corrupt` replaces the
/// first agent's `B` with `−I`.
pub fn qp_check(trials: usize, seed: u64, shape: QpShape, corrupt: bool) -> Result<QpCheckReport> {
    if trials == 0 {
        return Err(Error::config("trials", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = QpCheckReport {
        trials,
        max_z_diff: 0.0,
        max_kkt_residual: 0.0,
    };
    for _ in 0..trials {
        let big_n = shape.agents.unwrap_or_else(|| rng.random_range(1..=8));
        let n = shape.dim.unwrap_or_else(|| rng.random_range(1..=6));
        let mut input = random_instance(&mut rng, big_n, n);
        if corrupt {
            input.agents[0].b = SymMat::scaled_identity(n, -1.0);
        }
        let schur = solve_schur(&input)?;
        let dense = solve_dense_kkt(&input)?;
        report.max_z_diff = report.max_z_diff.max(schur.z.max_abs_diff(&dense.z));
        report.max_kkt_residual = report
            .max_kkt_residual
            .max(kkt_residual(&input, &schur))
            .max(kkt_residual(&input, &dense));
    }
    Ok(report)
}

/// Name, parameters and description of every problem family.
pub fn list_problems() -> Vec<(&'static str, &'static str)> {
    vec![
        ("least-squares", "f_i = 1/2 |x - zeta_i|^2, zeta ~ N(0, 25); uses n, agents, seed"),
        (
            "nonconvex-log",
            "least squares on x = [x_a; x_b] plus ln(1/2 |(x_a - x_b)^2 - zeta_c|^2); n even; uses n, agents, seed",
        ),
        (
            "linear-regression",
            "mean squared error on synthetic shards; uses n, agents, samples_per_client, noniid, seed",
        ),
        (
            "logistic-regression",
            "L2-regularised logistic loss on non-iid shards; uses n, agents, samples_per_client, reg, seed",
        ),
    ]
}

/// Runs `f` on a rayon pool sized by `CALADIN_THREADS` when it is set.
pub fn with_thread_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    match std::env::var("CALADIN_THREADS") {
        Ok(v) => {
            let threads: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|t| *t > 0)
                .ok_or_else(|| Error::config("CALADIN_THREADS", format!("expected a positive integer, got `{v}`")))?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::config("CALADIN_THREADS", e.to_string()))?;
            Ok(pool.install(f))
        }
        Err(_) => Ok(f()),
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use caladin::error::{Error, Result};
use caladin::harness::{self, exit_code, QpShape, RunConfig};

#[derive(Parser)]
#[command(name = "caladin", version, about = "Consensus ALADIN, federated variants and ADMM baselines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// `KEY=VALUE` override, applied after the config file.
    #[arg(long = "set", value_name = "K=V")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one algorithm and write trace.csv and summary.json.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run several configurations on one problem and rank them.
    Compare {
        /// Repeat for each configuration.
        #[arg(long)]
        config: Vec<PathBuf>,
        /// Comma-separated algorithms, each run on the first (or default) config.
        #[arg(long, value_delimiter = ',')]
        algorithms: Vec<String>,
        /// Consensus error used for the ranking.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Check the Schur-complement QP solve against the dense KKT solve.
    QpCheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Fix the number of agents instead of drawing 1..=8.
        #[arg(long)]
        agents: Option<usize>,
        /// Fix the dimension instead of drawing 1..=6.
        #[arg(long)]
        dim: Option<usize>,
        /// Replace the first agent's B by -I.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// List the problem families.
    ListProblems,
}

fn load(path: Option<&PathBuf>, common: &Common) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run { config, common } => {
            let cfg = load(config.as_ref(), &common)?;
            let outcome = harness::run(&cfg, Some(&cfg.out))?;
            let last = outcome.records.last().expect("initial row is always recorded");
            println!(
                "{} {}: {} after {} rounds, consensus error {:e}, trace in {}",
                cfg.algorithm.name(),
                cfg.problem,
                outcome.summary.status,
                outcome.summary.rounds,
                last.consensus_error,
                cfg.out.display()
            );
            if let Some(e) = outcome.failure {
                eprintln!("error: {e}");
                return Ok(ExitCode::from(exit_code(&e) as u8));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare {
            config,
            algorithms,
            tolerance,
            common,
        } => {
            let mut configs = Vec::new();
            if config.is_empty() || !algorithms.is_empty() {
                let base = load(config.first(), &common)?;
                if algorithms.is_empty() {
                    configs.push(base);
                } else {
                    for a in &algorithms {
                        let mut c = base.clone();
                        c.set("algorithm", a.trim())?;
                        c.validate()?;
                        configs.push(c);
                    }
                }
            } else {
                for p in &config {
                    configs.push(load(Some(p), &common)?);
                }
            }
            let out = configs[0].out.clone();
            let cmp = harness::compare(&configs, tolerance, Some(&out))?;
            print!("{}", cmp.ranking_text());
            if let Some(e) = cmp.entries.iter().find_map(|e| e.outcome.failure.as_ref()) {
                eprintln!("error: {e}");
                return Ok(ExitCode::from(exit_code(e) as u8));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::QpCheck {
            trials,
            seed,
            agents,
            dim,
            corrupt,
        } => {
            let shape = QpShape { agents, dim };
            if agents == Some(0) || dim == Some(0) {
                return Err(Error::config("agents/dim", "must be at least 1"));
            }
            let report = harness::qp_check(trials, seed, shape, corrupt)?;
            println!("trials: {}", report.trials);
            println!("max |z_dense - z_schur|_inf: {:e}", report.max_z_diff);
            println!("max KKT residual: {:e}", report.max_kkt_residual);
            if report.passed() {
                Ok(ExitCode::SUCCESS)
            } else {
                println!("FAILED: tolerance {:e}", harness::QpCheckReport::TOLERANCE);
                Ok(ExitCode::from(1))
            }
        }
        Command::ListProblems => {
            for (name, description) in harness::list_problems() {
                println!("{name:<20} {description}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match harness::with_thread_pool(|| execute(cli.command)).and_then(|r| r) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

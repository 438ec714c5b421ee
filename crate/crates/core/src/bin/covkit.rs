use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use covkit::bench::{run_experiment, summarize, EnvSpec, ExperimentConfig, TargetSpec};
use covkit::covgame::{run_covgame, CovGameConfig, DEFAULT_MAX_ROUNDS};
use covkit::flow::{coverage_bounds, phi_star, TargetFunction};
use covkit::mdp::{policy_gap, MdpFile, TabularMdp};
use covkit::pce::{run_pce, PceConfig};
use covkit::principle::{run_principle, PrincipleConfig};
use covkit::reachability::ReachConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[derive(Parser)]
#[command(name = "covkit", version, about = "Active coverage tools for episodic tabular MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimal expected episodes to cover a target, with the cheap bounds around it.
    PhiStar {
        #[arg(long)]
        mdp: PathBuf,
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Collect episodes until the visit counts dominate a target.
    Covgame {
        #[arg(long)]
        mdp: PathBuf,
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        beta_scale: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_ROUNDS)]
        max_rounds: u64,
        /// JSONL: one line per adversary restart, then a final summary line.
        #[arg(long)]
        out: PathBuf,
    },
    /// Reward-free exploration; writes the learned model and the phase log.
    Pce {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        beta_scale: f64,
        /// Defaults to the beta scale.
        #[arg(long)]
        regret_scale: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_MAX_ROUNDS)]
        max_rounds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Best-policy identification for the rewards of the MDP file.
    Principle {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        beta_scale: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_ROUNDS)]
        max_rounds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reachability intervals for every (stage, state), printed as JSON.
    Reach {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        eps0: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        beta_scale: f64,
        /// Defaults to the beta scale.
        #[arg(long)]
        regret_scale: Option<f64>,
    },
    /// Run a replication sweep described by a JSON config.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Write a generated instance as an MDP file.
    Gen {
        #[command(subcommand)]
        family: Family,
        #[arg(long, global = true)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct TargetArgs {
    /// Target file `{"c": [[[...]]]}`.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Constant target on every reachable triplet.
    #[arg(long)]
    target_const: Option<f64>,
    /// Target equal to the maximal reachability of each triplet.
    #[arg(long)]
    target_reach: bool,
}

impl TargetArgs {
    fn spec(&self) -> TargetSpec {
        match (&self.target, self.target_const) {
            (Some(path), _) => TargetSpec::File { path: path.clone() },
            (None, Some(value)) => TargetSpec::Constant { value },
            (None, None) => TargetSpec::MaxReach { scale: 1.0 },
        }
    }
}

#[derive(Subcommand)]
enum Family {
    Random {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
    },
    ContextualBandit {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        horizon: usize,
    },
    Ergodic {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        horizon: usize,
        #[arg(long)]
        alpha_exp: f64,
        #[arg(long)]
        beta_exp: f64,
    },
    Tree {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        branching: usize,
        #[arg(long)]
        horizon: usize,
    },
    TwoBlock {
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        horizon: usize,
    },
    Chain {
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        horizon: usize,
    },
    Bandit {
        #[arg(long, value_delimiter = ',', required = true)]
        means: Vec<f64>,
    },
}

impl Family {
    fn spec(self) -> EnvSpec {
        match self {
            Family::Random { seed, states, actions, horizon, alpha } => {
                EnvSpec::Random { seed, states, actions, horizon, alpha }
            }
            Family::ContextualBandit { seed, states, actions, horizon } => {
                EnvSpec::ContextualBandit { seed, states, actions, horizon }
            }
            Family::Ergodic { seed, states, actions, horizon, alpha_exp, beta_exp } => {
                EnvSpec::Ergodic { seed, states, actions, horizon, alpha_exp, beta_exp }
            }
            Family::Tree { seed, branching, horizon } => EnvSpec::Tree { seed, branching, horizon },
            Family::TwoBlock { delta, states, actions, horizon } => {
                EnvSpec::TwoBlock { delta, states, actions, horizon }
            }
            Family::Chain { states, actions, horizon } => EnvSpec::Chain { states, actions, horizon },
            Family::Bandit { means } => EnvSpec::Bandit { means },
        }
    }
}

/// A failure and whether it came from bad input (exit 2) or from the run itself (exit 1).
struct Failure {
    config: bool,
    message: String,
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure {
        config: true,
        message: e.to_string(),
    }
}

fn run_err(e: impl std::fmt::Display) -> Failure {
    Failure {
        config: false,
        message: e.to_string(),
    }
}

fn load_mdp(path: &Path) -> Result<TabularMdp, Failure> {
    MdpFile::load(path).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn load_target(mdp: &TabularMdp, args: &TargetArgs) -> Result<TargetFunction, Failure> {
    args.spec().build(mdp).map_err(config_err)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(run_err)?;
    std::fs::write(path, text + "\n").map_err(run_err)
}

/// Prints to stdout; a closed pipe (`covkit ... | head`) is not an error.
fn emit(text: &str) -> Result<(), Failure> {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(run_err(e)),
        _ => Ok(()),
    }
}

fn check_delta(delta: f64) -> Result<(), Failure> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(config_err(format!("delta must lie in (0, 1), got {delta}")))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::PhiStar { mdp, target, out } => {
            let mdp = load_mdp(&mdp)?;
            let c = load_target(&mdp, &target)?;
            let sol = phi_star(&mdp, &c).map_err(run_err)?;
            let bounds = coverage_bounds(&mdp, &c).map_err(run_err)?;
            let value = json!({
                "phi_star": sol.value,
                "bounds": { "b1": bounds.b1, "b2": bounds.b2, "b3": bounds.b3 },
                "flow": sol.flow.rho.to_nested(),
                "distribution": sol.rho().map(|r| r.rho.to_nested()),
            });
            match out {
                Some(path) => write_json(&path, &value)?,
                None => emit(&serde_json::to_string_pretty(&value).map_err(run_err)?)?,
            }
        }
        Command::Covgame { mdp, target, delta, seed, beta_scale, max_rounds, out } => {
            check_delta(delta)?;
            let mdp = load_mdp(&mdp)?;
            let c = load_target(&mdp, &target)?;
            let cfg = CovGameConfig::new(delta)
                .with_beta_scale(beta_scale)
                .with_max_rounds(max_rounds);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let run = run_covgame(&mdp, &c, &cfg, &mut rng).map_err(run_err)?;
            let mut w = BufWriter::new(File::create(&out).map_err(run_err)?);
            for ev in &run.phase_trace {
                let line = json!({ "event": "restart", "round": ev.round, "level": ev.level });
                writeln!(w, "{line}").map_err(run_err)?;
            }
            let last = json!({
                "event": "stop",
                "tau": run.stop_round,
                "covered": run.covered(&c),
                "counts": run.counts.counts.to_nested(),
            });
            writeln!(w, "{last}").map_err(run_err)?;
            w.flush().map_err(run_err)?;
            emit(&format!("tau {} covered {}", run.stop_round, run.covered(&c)))?;
        }
        Command::Pce { mdp, eps, delta, seed, beta_scale, regret_scale, max_rounds, out } => {
            let mdp = load_mdp(&mdp)?;
            let cfg = PceConfig::new(eps, delta)
                .with_beta_scale(beta_scale)
                .with_regret_scale(regret_scale.unwrap_or(beta_scale))
                .with_max_rounds(max_rounds);
            if !(eps > 0.0 && eps <= 1.0) {
                return Err(config_err(format!("eps must lie in (0, 1], got {eps}")));
            }
            check_delta(delta)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let res = run_pce(&mdp, &cfg, &mut rng).map_err(run_err)?;
            let value = json!({
                "config": cfg,
                "tau": res.total_episodes,
                "kappa": res.phases,
                "reach_episodes": res.reach_episodes,
                "empty_x_hat": res.empty_x_hat,
                "x_hat": res.x_hat,
                "intervals": res.intervals,
                "phase_log": res.phase_log,
                "p_hat": MdpFile::from_mdp(&res.p_hat),
            });
            write_json(&out, &value)?;
            emit(&format!("tau {} phases {}", res.total_episodes, res.phases))?;
        }
        Command::Principle { mdp, eps, delta, seed, beta_scale, max_rounds, out } => {
            let mdp = load_mdp(&mdp)?;
            if !(eps > 0.0) {
                return Err(config_err(format!("eps must be positive, got {eps}")));
            }
            check_delta(delta)?;
            let cfg = PrincipleConfig::new(eps, delta)
                .with_beta_scale(beta_scale)
                .with_max_rounds(max_rounds);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let res = run_principle(&mdp, &cfg, &mut rng).map_err(run_err)?;
            let gap = policy_gap(&mdp, &res.policy, mdp.reward_means()).map_err(run_err)?;
            let value = json!({
                "policy": res.policy.probs().to_nested(),
                "phases": res.phases,
                "effective_episodes": res.effective_episodes,
                "raw_episodes": res.raw_episodes,
                "burn_in_episodes": res.burn_in_episodes,
                "gap": gap,
                "phase_log": res.phase_log,
            });
            write_json(&out, &value)?;
            emit(&format!("phases {} episodes {} gap {gap}", res.phases, res.effective_episodes))?;
        }
        Command::Reach { mdp, eps0, delta, seed, beta_scale, regret_scale } => {
            let mdp = load_mdp(&mdp)?;
            if !(eps0 > 0.0 && eps0 <= 1.0) {
                return Err(config_err(format!("eps0 must lie in (0, 1], got {eps0}")));
            }
            check_delta(delta)?;
            let cfg = ReachConfig::new(beta_scale).with_regret_scale(regret_scale.unwrap_or(beta_scale));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let intervals = covkit::pce::reachability_intervals(&mdp, eps0, delta, &cfg, &mut rng)
                .map_err(run_err)?;
            let s = mdp.num_states();
            let map: serde_json::Map<String, serde_json::Value> = intervals
                .iter()
                .enumerate()
                .map(|(i, iv)| (format!("{},{}", i / s, i % s), json!(iv)))
                .collect();
            emit(&serde_json::to_string_pretty(&map).map_err(run_err)?)?;
        }
        Command::Bench { config, threads } => {
            let cfg = ExperimentConfig::load(&config).map_err(config_err)?;
            let records = run_experiment(&cfg, threads).map_err(run_err)?;
            let s = summarize(&records);
            emit(&format!(
                "{} runs, {} errors, success rate {}, median tau {}",
                s.runs, s.errors, s.success_rate, s.tau_median
            ))?;
        }
        Command::Gen { family, out } => {
            let mdp = family.spec().build().map_err(config_err)?;
            match out {
                Some(path) => MdpFile::save(&mdp, &path).map_err(run_err)?,
                None => emit(&serde_json::to_string(&MdpFile::from_mdp(&mdp)).map_err(run_err)?)?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(if f.config { 2 } else { 1 })
        }
    }
}

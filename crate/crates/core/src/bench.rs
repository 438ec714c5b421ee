//! Experiment harness: seeded replications of one algorithm on one instance, with
//! JSONL run records and a CSV summary.
//!
//! Replication `i` of a sweep with master seed `m` draws from
//! `ChaCha8Rng::seed_from_u64(split_seed(m, i))`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::covgame::{run_covgame, CovGameConfig, DEFAULT_MAX_ROUNDS};
use crate::envs::{self, EnvError};
use crate::flow::{coverage_bounds, phi_star, FlowError, TargetFunction};
use crate::mdp::{max_reach_table, policy_gap, MdpFile, MdpFileError, StageTable, TabularMdp};
use crate::pce::{rfe_plan, run_pce, PceConfig};
use crate::principle::{run_principle, PrincipleConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Columns of the summary CSV, in order.
pub const SUMMARY_COLUMNS: [&str; 10] = [
    "schema_version",
    "algorithm",
    "runs",
    "errors",
    "success_rate",
    "tau_median",
    "tau_q10",
    "tau_q90",
    "tau_mean",
    "gap_max",
];

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    MdpFile(#[from] MdpFileError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// `splitmix64` output number `index + 1` from state `master`: the child seed of
/// replication `index`.
pub fn split_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Covgame,
    Pce,
    Principle,
    PhiStar,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Covgame => "covgame",
            Algorithm::Pce => "pce",
            Algorithm::Principle => "principle",
            Algorithm::PhiStar => "phi-star",
        }
    }
}

/// An instance: a generator with its parameters, or an MDP file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum EnvSpec {
    File {
        path: PathBuf,
    },
    Random {
        seed: u64,
        states: usize,
        actions: usize,
        horizon: usize,
        #[serde(default = "one")]
        alpha: f64,
    },
    ContextualBandit {
        seed: u64,
        states: usize,
        actions: usize,
        horizon: usize,
    },
    Ergodic {
        seed: u64,
        states: usize,
        actions: usize,
        horizon: usize,
        alpha_exp: f64,
        beta_exp: f64,
    },
    Tree {
        seed: u64,
        branching: usize,
        horizon: usize,
    },
    TwoBlock {
        delta: f64,
        states: usize,
        actions: usize,
        horizon: usize,
    },
    Chain {
        states: usize,
        actions: usize,
        horizon: usize,
    },
    Bandit {
        means: Vec<f64>,
    },
}

fn one() -> f64 {
    1.0
}

impl EnvSpec {
    pub fn build(&self) -> Result<TabularMdp, BenchError> {
        Ok(match self {
            EnvSpec::File { path } => MdpFile::load(path)?,
            &EnvSpec::Random {
                seed,
                states,
                actions,
                horizon,
                alpha,
            } => envs::gen_random_mdp(seed, states, actions, horizon, alpha)?,
            &EnvSpec::ContextualBandit {
                seed,
                states,
                actions,
                horizon,
            } => envs::gen_contextual_bandit(seed, states, actions, horizon)?,
            &EnvSpec::Ergodic {
                seed,
                states,
                actions,
                horizon,
                alpha_exp,
                beta_exp,
            } => envs::gen_ergodic(seed, states, actions, horizon, alpha_exp, beta_exp)?,
            &EnvSpec::Tree {
                seed,
                branching,
                horizon,
            } => envs::gen_tree_mdp(seed, branching, horizon)?,
            &EnvSpec::TwoBlock {
                delta,
                states,
                actions,
                horizon,
            } => envs::gen_two_block(delta, states, actions, horizon)?,
            &EnvSpec::Chain {
                states,
                actions,
                horizon,
            } => envs::gen_deterministic_chain(states, actions, horizon)?,
            EnvSpec::Bandit { means } => envs::gen_bandit(means)?,
        })
    }
}

/// Coverage target for `covgame` and `phi-star` runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    /// `value` on every reachable triplet.
    Constant { value: f64 },
    /// `scale * max_reach`.
    MaxReach {
        #[serde(default = "one")]
        scale: f64,
    },
    File { path: PathBuf },
}

impl TargetSpec {
    pub fn build(&self, mdp: &TabularMdp) -> Result<TargetFunction, BenchError> {
        Ok(match self {
            TargetSpec::Constant { value } => TargetFunction::constant_on_reachable(mdp, *value)?,
            TargetSpec::MaxReach { scale } => {
                TargetFunction::new(max_reach_table(mdp).scaled(*scale))?
            }
            TargetSpec::File { path } => TargetFunction::load(mdp.dims(), path)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub env: EnvSpec,
    #[serde(default)]
    pub target: Option<TargetSpec>,
    #[serde(default)]
    pub eps: Option<f64>,
    pub delta: f64,
    #[serde(default = "one")]
    pub beta_scale: f64,
    /// PCE only; defaults to `beta_scale`.
    #[serde(default)]
    pub regret_scale: Option<f64>,
    #[serde(default)]
    pub master_seed: u64,
    /// Replication indices; must be distinct.
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub max_rounds: Option<u64>,
    /// Random rewards drawn to evaluate each PCE model.
    #[serde(default = "default_eval_rewards")]
    pub eval_rewards: usize,
    pub jsonl: PathBuf,
    pub csv: PathBuf,
}

fn default_eval_rewards() -> usize {
    100
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        let cfg: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.beta_scale > 0.0 && self.beta_scale.is_finite()) {
            return bad(format!("beta_scale must be positive, got {}", self.beta_scale));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(s) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return bad(format!("seed {s} listed twice"));
        }
        match self.algorithm {
            Algorithm::Covgame | Algorithm::PhiStar if self.target.is_none() => {
                bad(format!("{} needs a target", self.algorithm.name()))
            }
            Algorithm::Pce | Algorithm::Principle if self.eps.is_none() => {
                bad(format!("{} needs eps", self.algorithm.name()))
            }
            _ => Ok(()),
        }
    }
}

/// One replication. `episodes` and `wall_time_ms` are absent for failed runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub child_seed: u64,
    pub episodes: Option<u64>,
    pub success: bool,
    pub gap: Option<f64>,
    pub wall_time_ms: f64,
    pub error: Option<String>,
    pub payload: serde_json::Value,
}

impl RunRecord {
    /// The record with timing zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> RunRecord {
        RunRecord {
            wall_time_ms: 0.0,
            ..self.clone()
        }
    }
}

struct Outcome {
    episodes: Option<u64>,
    success: bool,
    gap: Option<f64>,
    payload: serde_json::Value,
}

fn run_one(
    cfg: &ExperimentConfig,
    env: &TabularMdp,
    target: Option<&TargetFunction>,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome, String> {
    let max_rounds = cfg.max_rounds.unwrap_or(DEFAULT_MAX_ROUNDS);
    match cfg.algorithm {
        Algorithm::Covgame => {
            let c = target.expect("validated");
            let cg = CovGameConfig::new(cfg.delta)
                .with_beta_scale(cfg.beta_scale)
                .with_max_rounds(max_rounds);
            let run = run_covgame(env, c, &cg, rng).map_err(|e| e.to_string())?;
            Ok(Outcome {
                episodes: Some(run.stop_round),
                success: run.covered(c),
                gap: None,
                payload: json!({ "restarts": run.phase_trace }),
            })
        }
        Algorithm::PhiStar => {
            let c = target.expect("validated");
            let sol = phi_star(env, c).map_err(|e| e.to_string())?;
            let bounds = coverage_bounds(env, c).map_err(|e| e.to_string())?;
            Ok(Outcome {
                episodes: None,
                success: sol.value.is_finite(),
                gap: None,
                payload: json!({ "phi_star": sol.value, "b1": bounds.b1, "b2": bounds.b2, "b3": bounds.b3 }),
            })
        }
        Algorithm::Pce => {
            let eps = cfg.eps.expect("validated");
            let pc = PceConfig::new(eps, cfg.delta)
                .with_beta_scale(cfg.beta_scale)
                .with_regret_scale(cfg.regret_scale.unwrap_or(cfg.beta_scale))
                .with_max_rounds(max_rounds);
            let res = run_pce(env, &pc, rng).map_err(|e| e.to_string())?;
            let h = env.horizon() as f64;
            let mut worst: f64 = 0.0;
            for _ in 0..cfg.eval_rewards {
                let r = StageTable::from_fn(env.dims(), |_| rng.random::<f64>() / h);
                let pi = rfe_plan(&res.p_hat, &r).map_err(|e| e.to_string())?;
                worst = worst.max(policy_gap(env, &pi, &r).map_err(|e| e.to_string())?);
            }
            Ok(Outcome {
                episodes: Some(res.total_episodes),
                success: worst <= eps,
                gap: Some(worst),
                payload: json!({
                    "phases": res.phases,
                    "reach_episodes": res.reach_episodes,
                    "x_hat": res.x_hat.len(),
                    "empty_x_hat": res.empty_x_hat,
                }),
            })
        }
        Algorithm::Principle => {
            let eps = cfg.eps.expect("validated");
            let pc = PrincipleConfig::new(eps, cfg.delta)
                .with_beta_scale(cfg.beta_scale)
                .with_max_rounds(max_rounds);
            let res = run_principle(env, &pc, rng).map_err(|e| e.to_string())?;
            let gap = policy_gap(env, &res.policy, env.reward_means()).map_err(|e| e.to_string())?;
            let lowers: Vec<f64> = res.phase_log.iter().map(|p| p.v_lower).collect();
            let pigeonhole = res
                .phase_log
                .iter()
                .all(|p| p.effective_episodes <= (env.dims().len() as u64) << p.phase);
            Ok(Outcome {
                episodes: Some(res.effective_episodes),
                success: gap <= eps,
                gap: Some(gap),
                payload: json!({
                    "phases": res.phases,
                    "raw_episodes": res.raw_episodes,
                    "v_lower": lowers,
                    "pigeonhole_ok": pigeonhole,
                }),
            })
        }
    }
}

/// Runs every replication on `threads` workers, writing JSONL rows in seed order as
/// they become available, then the CSV summary. Failed runs become records with an
/// `error` and never stop the sweep.
pub fn run_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<RunRecord>, BenchError> {
    cfg.validate()?;
    let env = cfg.env.build()?;
    let target = match &cfg.target {
        Some(t) => Some(t.build(&env)?),
        None => None,
    };
    let mut jsonl = BufWriter::new(File::create(&cfg.jsonl)?);
    let n = cfg.seeds.len();
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, RunRecord)>();
    let mut records: Vec<Option<RunRecord>> = vec![None; n];

    std::thread::scope(|scope| -> Result<(), BenchError> {
        for _ in 0..threads.max(1).min(n.max(1)) {
            let tx = tx.clone();
            let (next, env, target) = (&next, &env, target.as_ref());
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let seed = cfg.seeds[i];
                let child_seed = split_seed(cfg.master_seed, seed);
                let mut rng = ChaCha8Rng::seed_from_u64(child_seed);
                let start = Instant::now();
                let outcome = run_one(cfg, env, target, &mut rng);
                let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
                let record = match outcome {
                    Ok(o) => RunRecord {
                        schema_version: SCHEMA_VERSION,
                        algorithm: cfg.algorithm,
                        seed,
                        child_seed,
                        episodes: o.episodes,
                        success: o.success,
                        gap: o.gap,
                        wall_time_ms,
                        error: None,
                        payload: o.payload,
                    },
                    Err(e) => RunRecord {
                        schema_version: SCHEMA_VERSION,
                        algorithm: cfg.algorithm,
                        seed,
                        child_seed,
                        episodes: None,
                        success: false,
                        gap: None,
                        wall_time_ms,
                        error: Some(e),
                        payload: serde_json::Value::Null,
                    },
                };
                if tx.send((i, record)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut written = 0;
        for (i, record) in rx {
            records[i] = Some(record);
            while written < n {
                match &records[written] {
                    Some(r) => {
                        serde_json::to_writer(&mut jsonl, r)?;
                        jsonl.write_all(b"\n")?;
                        jsonl.flush()?;
                        written += 1;
                    }
                    None => break,
                }
            }
        }
        Ok(())
    })?;

    let records: Vec<RunRecord> = records.into_iter().map(|r| r.expect("every run reports")).collect();
    write_summary(&cfg.csv, cfg.algorithm, &records)?;
    Ok(records)
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub runs: usize,
    pub errors: usize,
    pub success_rate: f64,
    pub tau_median: f64,
    pub tau_q10: f64,
    pub tau_q90: f64,
    pub tau_mean: f64,
    pub gap_max: f64,
}

pub fn summarize(records: &[RunRecord]) -> Summary {
    let mut taus: Vec<f64> = records
        .iter()
        .filter_map(|r| r.episodes.map(|e| e as f64))
        .collect();
    taus.sort_by(f64::total_cmp);
    let successes = records.iter().filter(|r| r.success).count();
    Summary {
        runs: records.len(),
        errors: records.iter().filter(|r| r.error.is_some()).count(),
        success_rate: if records.is_empty() {
            f64::NAN
        } else {
            successes as f64 / records.len() as f64
        },
        tau_median: quantile(&taus, 0.5),
        tau_q10: quantile(&taus, 0.1),
        tau_q90: quantile(&taus, 0.9),
        tau_mean: if taus.is_empty() {
            f64::NAN
        } else {
            taus.iter().sum::<f64>() / taus.len() as f64
        },
        gap_max: records
            .iter()
            .filter_map(|r| r.gap)
            .fold(f64::NAN, f64::max),
    }
}

pub fn write_summary(path: &Path, algorithm: Algorithm, records: &[RunRecord]) -> Result<(), BenchError> {
    let s = summarize(records);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_COLUMNS)?;
    w.write_record([
        SCHEMA_VERSION.to_string(),
        algorithm.name().to_string(),
        s.runs.to_string(),
        s.errors.to_string(),
        s.success_rate.to_string(),
        s.tau_median.to_string(),
        s.tau_q10.to_string(),
        s.tau_q90.to_string(),
        s.tau_mean.to_string(),
        s.gap_max.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

/// Reads a JSONL file of run records.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RunRecord>, BenchError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Summary CSV as column -> value.
pub fn read_summary(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>, BenchError> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let row = r
        .records()
        .next()
        .ok_or_else(|| BenchError::Config("empty summary".into()))??;
    Ok(headers.iter().map(String::from).zip(row.iter().map(String::from)).collect())
}

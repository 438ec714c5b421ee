//! Proportional Coverage Exploration: reward-free exploration that returns an
//! empirical model from which a near-optimal policy can be planned for any reward.
//!
//! Reachability intervals select the relevant triplets `X_hat`; phase `k` then asks
//! CovGame for `2^k W_bar_h(s)` visits of every triplet in `X_hat`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::covgame::{run_covgame, CovGameConfig, CovGameError, DEFAULT_MAX_ROUNDS};
use crate::flow::TargetFunction;
use crate::learners::UcbviStats;
use crate::mdp::{optimal_q_values, Dims, MdpError, Policy, StageTable, TabularMdp, Triplet, VisitCounts};
use crate::reachability::{build_x_hat, estimate_reachability, ReachConfig, ReachError, ReachInterval};

pub const DEFAULT_MAX_PHASES: u32 = 60;

#[derive(Debug, thiserror::Error)]
pub enum PceError {
    #[error("eps must lie in (0, 1], got {0}")]
    Eps(f64),
    #[error("delta must lie in (0, 1), got {0}")]
    Delta(f64),
    #[error("stopping rule not met after {0} phases")]
    PhaseCap(u32),
    #[error(transparent)]
    Reach(#[from] ReachError),
    #[error(transparent)]
    CovGame(#[from] CovGameError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// `beta_scale (4 H^2 log(1/delta) + 24 S H^3 log(A (1 + t)))`.
pub fn beta_rf(t: u64, delta: f64, dims: Dims, beta_scale: f64) -> f64 {
    let (s, a, h) = (dims.states as f64, dims.actions as f64, dims.horizon as f64);
    beta_scale * (4.0 * h * h * (1.0 / delta).ln() + 24.0 * s * h.powi(3) * (a * (1.0 + t as f64)).ln())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PceConfig {
    pub eps: f64,
    pub delta: f64,
    pub beta_scale: f64,
    /// Scale of the regret function that sizes the reachability runs.
    pub regret_scale: f64,
    /// Round cap of each CovGame call.
    pub max_rounds: u64,
    pub max_phases: u32,
}

impl PceConfig {
    pub fn new(eps: f64, delta: f64) -> Self {
        PceConfig {
            eps,
            delta,
            beta_scale: 1.0,
            regret_scale: 1.0,
            max_rounds: DEFAULT_MAX_ROUNDS,
            max_phases: DEFAULT_MAX_PHASES,
        }
    }

    /// Sets `beta_scale` and `regret_scale` together.
    pub fn with_beta_scale(mut self, beta_scale: f64) -> Self {
        self.beta_scale = beta_scale;
        self.regret_scale = beta_scale;
        self
    }

    pub fn with_regret_scale(mut self, regret_scale: f64) -> Self {
        self.regret_scale = regret_scale;
        self
    }

    pub fn with_max_rounds(mut self, max_rounds: u64) -> Self {
        self.max_rounds = max_rounds;
        self
    }

    pub fn with_max_phases(mut self, max_phases: u32) -> Self {
        self.max_phases = max_phases;
        self
    }

    /// `(eps0, delta)` of each reachability run.
    pub fn reach_params(&self, dims: Dims) -> (f64, f64) {
        let (s, h) = (dims.states as f64, dims.horizon as f64);
        (self.eps / (4.0 * s * h * h), self.delta / (3.0 * s * h))
    }

    /// Threshold on `W_lower` for membership in `X_hat`.
    pub fn x_hat_threshold(&self, dims: Dims) -> f64 {
        let (s, h) = (dims.states as f64, dims.horizon as f64);
        self.eps / (32.0 * s * h * h)
    }

    /// Confidence of the CovGame call of phase `k` (0 is the burn-in).
    pub fn covgame_delta(&self, k: u32) -> f64 {
        self.delta / (6.0 * ((k + 1) as f64).powi(2))
    }

    /// Total confidence spent when the run stops after `phases` phases.
    pub fn delta_budget(&self, dims: Dims, phases: u32) -> f64 {
        let targets = (dims.states * dims.horizon) as f64;
        let reach = targets * self.reach_params(dims).1;
        let covgame: f64 = (0..=phases).map(|k| self.covgame_delta(k)).sum();
        reach + covgame + self.delta / 3.0
    }

    fn validate(&self) -> Result<(), PceError> {
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(PceError::Eps(self.eps));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(PceError::Delta(self.delta));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcePhase {
    /// 0 is the burn-in.
    pub phase: u32,
    /// Target `c^k`, nested `[h][s][a]`.
    pub target: Vec<Vec<Vec<f64>>>,
    pub episodes: u64,
    /// Episodes collected up to and including this phase.
    pub cumulative_episodes: u64,
    /// Adversary restarts inside the CovGame call.
    pub restarts: usize,
}

#[derive(Clone, Debug)]
pub struct PceResult {
    /// Empirical transitions (unvisited rows uniform) with empirical mean rewards.
    pub p_hat: TabularMdp,
    pub stats: UcbviStats,
    /// Burn-in plus phase episodes.
    pub total_episodes: u64,
    /// Episodes spent on reachability estimation; not used for `p_hat`.
    pub reach_episodes: u64,
    /// Index of the last completed phase.
    pub phases: u32,
    pub x_hat: Vec<Triplet>,
    /// Laid out `[h * S + s]`.
    pub intervals: Vec<ReachInterval>,
    pub phase_log: Vec<PcePhase>,
    /// Set when `X_hat` came out empty and no exploration was done.
    pub empty_x_hat: bool,
}

/// State after a completed phase, handed to observers.
pub struct PceSnapshot<'a> {
    pub phase: u32,
    pub counts: &'a VisitCounts,
    pub target: &'a TargetFunction,
    pub x_hat: &'a [Triplet],
}

/// Reachability intervals for every `(h, s)`; each target gets its own RNG stream
/// seeded from `rng`.
pub fn reachability_intervals<R: Rng + ?Sized>(
    env: &TabularMdp,
    eps0: f64,
    delta: f64,
    config: &ReachConfig,
    rng: &mut R,
) -> Result<Vec<ReachInterval>, ReachError> {
    let d = env.dims();
    let seeds: Vec<u64> = (0..d.horizon * d.states).map(|_| rng.next_u64()).collect();
    seeds
        .iter()
        .enumerate()
        .map(|(i, &seed)| {
            let mut child = ChaCha8Rng::seed_from_u64(seed);
            estimate_reachability(env, i / d.states, i % d.states, eps0, delta, config, &mut child)
        })
        .collect()
}

pub fn run_pce<R: Rng + ?Sized>(
    env: &TabularMdp,
    config: &PceConfig,
    rng: &mut R,
) -> Result<PceResult, PceError> {
    run_pce_observed(env, config, rng, |_| {})
}

/// [`run_pce`] that calls `observe` after the burn-in and after every phase.
pub fn run_pce_observed<R: Rng + ?Sized>(
    env: &TabularMdp,
    config: &PceConfig,
    rng: &mut R,
    mut observe: impl FnMut(&PceSnapshot<'_>),
) -> Result<PceResult, PceError> {
    config.validate()?;
    let d = env.dims();
    let (eps0, reach_delta) = config.reach_params(d);
    let reach_config = ReachConfig::new(config.beta_scale).with_regret_scale(config.regret_scale);
    let intervals = reachability_intervals(env, eps0, reach_delta, &reach_config, rng)?;
    let reach_episodes = intervals.iter().map(|i| i.episodes).sum();
    let x_hat = build_x_hat(d, &intervals, config.x_hat_threshold(d));

    let mut stats = UcbviStats::new(d);
    if x_hat.is_empty() {
        return Ok(PceResult {
            p_hat: stats.empirical_mdp(env.initial_state()),
            stats,
            total_episodes: 0,
            reach_episodes,
            phases: 0,
            x_hat,
            intervals,
            phase_log: Vec::new(),
            empty_x_hat: true,
        });
    }

    let mut counts = VisitCounts::new(d);
    let mut phase_log = Vec::new();
    let mut total: u64 = 0;
    let upper = StageTable::from_fn(d, |t| intervals[t.stage * d.states + t.state].upper);
    let mut in_x_hat = StageTable::filled(d, false);
    for &t in &x_hat {
        in_x_hat[t] = true;
    }

    let mut k: u32 = 0;
    loop {
        let target = if k == 0 {
            TargetFunction::indicator(d, &x_hat)
        } else {
            let scale = 2f64.powi(k as i32);
            let table = StageTable::from_fn(d, |t| if in_x_hat[t] { scale * upper[t] } else { 0.0 });
            TargetFunction::new(table).expect("finite nonnegative")
        };
        let cg = CovGameConfig::new(config.covgame_delta(k))
            .with_beta_scale(config.beta_scale)
            .with_max_rounds(config.max_rounds);
        let run = run_covgame(env, &target, &cg, rng)?;
        for ep in run.dataset.iter() {
            stats.update_ref(ep);
        }
        counts.merge(&run.counts);
        total += run.stop_round;
        phase_log.push(PcePhase {
            phase: k,
            target: target.table().to_nested(),
            episodes: run.stop_round,
            cumulative_episodes: total,
            restarts: run.phase_trace.len(),
        });
        observe(&PceSnapshot {
            phase: k,
            counts: &counts,
            target: &target,
            x_hat: &x_hat,
        });
        if k >= 1 && stop_width(d, total, k, config) <= config.eps {
            break;
        }
        if k >= config.max_phases {
            return Err(PceError::PhaseCap(config.max_phases));
        }
        k += 1;
    }

    Ok(PceResult {
        p_hat: stats.empirical_mdp(env.initial_state()),
        stats,
        total_episodes: total,
        reach_episodes,
        phases: k,
        x_hat,
        intervals,
        phase_log,
        empty_x_hat: false,
    })
}

/// `sqrt(H beta_rf(t, delta/3) 2^(4-k))`.
pub fn stop_width(dims: Dims, t: u64, k: u32, config: &PceConfig) -> f64 {
    let b = beta_rf(t, config.delta / 3.0, dims, config.beta_scale);
    (dims.horizon as f64 * b * 2f64.powi(4 - k as i32)).sqrt()
}

/// Optimal policy of `(p_hat, reward)`; ties go to the lowest action index.
pub fn rfe_plan(p_hat: &TabularMdp, reward: &StageTable<f64>) -> Result<Policy, MdpError> {
    Ok(optimal_q_values(p_hat, reward)?.greedy)
}

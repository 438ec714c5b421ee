//! CovGame: collect episodes until the visit counts dominate a target `c`.
//!
//! Each round the adversary (exponential weights over the still-relevant
//! requirement set `X_k`) proposes a distribution `lambda`, the policy player
//! (UCBVI) plans optimistically for the reward `lambda`, and one episode is
//! collected. `X_k = {x : c_x > c_min 2^k}` shrinks as the low requirements get
//! covered; every time the level `k` changes the adversary restarts. The UCBVI
//! statistics persist across restarts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::flow::TargetFunction;
use crate::learners::{LearnerError, Ucbvi, WmfState};
use crate::mdp::{
    max_reach_table, Dataset, Dims, EpisodeRef, MdpError, StageTable, Step, TabularMdp, Triplet,
    VisitCounts,
};

pub const DEFAULT_MAX_ROUNDS: u64 = 10_000_000;

#[derive(Debug, thiserror::Error)]
pub enum CovGameError {
    #[error("coverage not reached after {0} rounds")]
    RoundCap(u64),
    #[error("target requires samples at unreachable triplet {0:?}")]
    UnreachableSupport(Triplet),
    #[error("delta must lie in (0, 1), got {0}")]
    Delta(f64),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CovGameConfig {
    pub delta: f64,
    /// Multiplies the UCBVI confidence threshold.
    pub beta_scale: f64,
    pub max_rounds: u64,
}

impl CovGameConfig {
    pub fn new(delta: f64) -> Self {
        CovGameConfig {
            delta,
            beta_scale: 1.0,
            max_rounds: DEFAULT_MAX_ROUNDS,
        }
    }

    pub fn with_beta_scale(mut self, beta_scale: f64) -> Self {
        self.beta_scale = beta_scale;
        self
    }

    pub fn with_max_rounds(mut self, max_rounds: u64) -> Self {
        self.max_rounds = max_rounds;
        self
    }
}

/// A restart of the adversary: after `round` episodes the level became `level`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseEvent {
    pub round: u64,
    pub level: u32,
}

#[derive(Clone, Debug)]
pub struct CovGameRun {
    pub dataset: Dataset,
    /// Number of episodes collected.
    pub stop_round: u64,
    pub phase_trace: Vec<PhaseEvent>,
    pub counts: VisitCounts,
    /// Largest per-round adversary loss `<lambda^t, loss^t>` that was fed.
    pub max_round_loss: f64,
}

impl CovGameRun {
    pub fn covered(&self, c: &TargetFunction) -> bool {
        self.counts.dominates(c.table())
    }
}

/// Level of a support element: the largest `j` with `x in X_j`.
fn level_of(value: f64, c_min: f64) -> u32 {
    let mut j = 0;
    while value > c_min * 2f64.powi(j as i32 + 1) {
        j += 1;
    }
    j
}

/// `X_0` is the support of `c`; for `k >= 1`, `X_k = {x : c_x > c_min 2^k}`.
pub fn active_set(c: &TargetFunction, k: u32) -> Vec<Triplet> {
    let support = c.support();
    if k == 0 {
        return support;
    }
    let threshold = c.c_min() * 2f64.powi(k as i32);
    support.into_iter().filter(|&t| c.get(t) > threshold).collect()
}

/// Chooses the policy played in each round.
pub(crate) trait Planner {
    fn plan(&mut self, reward: &StageTable<f64>) -> Result<&[usize], CovGameError>;
    fn observe(&mut self, steps: &[Step]);
}

impl Planner for Ucbvi {
    fn plan(&mut self, reward: &StageTable<f64>) -> Result<&[usize], CovGameError> {
        Ok(Ucbvi::plan(self, reward)?)
    }

    fn observe(&mut self, steps: &[Step]) {
        self.update_ref(EpisodeRef::new(steps));
    }
}

/// Plays one episode of the deterministic policy `actions` into `out`.
#[inline]
pub(crate) fn rollout<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    actions: &[usize],
    rng: &mut R,
    out: &mut Vec<Step>,
) {
    out.clear();
    let ns = mdp.num_states();
    let mut s = mdp.initial_state();
    for h in 0..mdp.horizon() {
        let a = actions[h * ns + s];
        let (r, next) = mdp.step(h, s, a, rng);
        out.push(Step {
            state: s as u32,
            action: a as u16,
            reward: r,
        });
        if let Some(n) = next {
            s = n;
        }
    }
}

/// Runs CovGame on `env` for target `c`.
pub fn run_covgame<R: Rng + ?Sized>(
    env: &TabularMdp,
    c: &TargetFunction,
    config: &CovGameConfig,
    rng: &mut R,
) -> Result<CovGameRun, CovGameError> {
    if !(config.delta > 0.0 && config.delta < 1.0) {
        return Err(CovGameError::Delta(config.delta));
    }
    // the adversary's weights form a distribution, so every trajectory collects at most 1
    let mut planner = Ucbvi::new(env.dims(), config.delta / 2.0, config.beta_scale).trusted_rewards();
    run_with_planner(env, c, config.max_rounds, &mut planner, rng)
}

pub(crate) fn run_with_planner<R: Rng + ?Sized, P: Planner>(
    env: &TabularMdp,
    c: &TargetFunction,
    max_rounds: u64,
    planner: &mut P,
    rng: &mut R,
) -> Result<CovGameRun, CovGameError> {
    let d = env.dims();
    if c.dims() != d {
        return Err(MdpError::DimensionMismatch {
            expected: d,
            got: c.dims(),
        }
        .into());
    }
    let reach = max_reach_table(env);
    let support = c.support();
    if let Some(&t) = support.iter().find(|&&t| reach[t] <= 0.0) {
        return Err(CovGameError::UnreachableSupport(t));
    }
    let c_min = c.c_min();
    let target = c.table().as_slice();

    // per-triplet level, or None off the support
    let mut level: Vec<Option<u32>> = vec![None; d.len()];
    let mut uncovered_at: Vec<u64> = Vec::new();
    for &t in &support {
        let j = level_of(c.get(t), c_min);
        level[d.index(t.stage, t.state, t.action)] = Some(j);
        if uncovered_at.len() <= j as usize {
            uncovered_at.resize(j as usize + 1, 0);
        }
        uncovered_at[j as usize] += 1;
    }
    let mut uncovered_total: u64 = uncovered_at.iter().sum();

    let mut counts = VisitCounts::new(d);
    let mut dataset = Dataset::new(d.horizon);
    let mut trace = Vec::new();
    let mut max_round_loss: f64 = 0.0;
    if uncovered_total == 0 {
        return Ok(CovGameRun {
            dataset,
            stop_round: 0,
            phase_trace: trace,
            counts,
            max_round_loss,
        });
    }

    let mut k: u32 = 0;
    let mut slot: Vec<Option<usize>> = vec![None; d.len()];
    let mut wmf = reset_adversary(&support, &level, k, d, &mut slot)?;
    let mut reward = StageTable::zeros(d);
    let mut steps = Vec::with_capacity(d.horizon);
    let mut loss: Vec<(usize, f64)> = Vec::with_capacity(d.horizon);
    let mut round: u64 = 0;

    loop {
        if round >= max_rounds {
            return Err(CovGameError::RoundCap(max_rounds));
        }
        round += 1;
        wmf.write_weights(&mut reward);
        let actions = planner.plan(&reward)?;
        rollout(env, actions, rng, &mut steps);
        planner.observe(&steps);
        dataset.push_steps(&steps);
        counts.add_steps(&steps);

        for (h, st) in steps.iter().enumerate() {
            let i = d.index(h, st.state as usize, st.action as usize);
            if let Some(j) = level[i] {
                let n = counts.counts.as_slice()[i];
                // crossed the requirement on this visit
                if (n as f64) >= target[i] && ((n - 1) as f64) < target[i] {
                    uncovered_at[j as usize] -= 1;
                    uncovered_total -= 1;
                }
            }
        }
        if uncovered_total == 0 {
            break;
        }
        let next_k = uncovered_at
            .iter()
            .position(|&u| u > 0)
            .expect("something is uncovered") as u32;
        if next_k != k {
            k = next_k;
            wmf = reset_adversary(&support, &level, k, d, &mut slot)?;
            trace.push(PhaseEvent { round, level: k });
        } else {
            loss.clear();
            for (h, st) in steps.iter().enumerate() {
                let i = d.index(h, st.state as usize, st.action as usize);
                if let Some(pos) = slot[i] {
                    loss.push((pos, 1.0));
                }
            }
            let fed = wmf.update_sparse(&loss)?;
            debug_assert!((0.0..=1.0 + 1e-12).contains(&fed));
            max_round_loss = max_round_loss.max(fed);
        }
    }

    Ok(CovGameRun {
        dataset,
        stop_round: round,
        phase_trace: trace,
        counts,
        max_round_loss,
    })
}

fn reset_adversary(
    support: &[Triplet],
    level: &[Option<u32>],
    k: u32,
    d: Dims,
    slot: &mut [Option<usize>],
) -> Result<WmfState, CovGameError> {
    slot.iter_mut().for_each(|s| *s = None);
    let mut active = Vec::new();
    for &t in support {
        let i = d.index(t.stage, t.state, t.action);
        if level[i].is_some_and(|j| j >= k) {
            slot[i] = Some(active.len());
            active.push(t);
        }
    }
    Ok(WmfState::new(active)?)
}

//! Confidence intervals on maximal state reachability `W_h(s) = max_pi p_h^pi(s)`.
//!
//! For each target `(h, s)`, UCBVI is run for a fixed number of episodes on the
//! indicator reward of the target; the visit count then brackets `W_h(s)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covgame::rollout;
use crate::learners::{LearnerError, Ucbvi};
use crate::mdp::{Dims, EpisodeRef, MdpError, StageTable, TabularMdp, Triplet};

/// Episode counts above this are treated as an overflow.
pub const HORIZON_CAP: u64 = 1_000_000_000_000;

#[derive(Debug, thiserror::Error)]
pub enum ReachError {
    #[error("episode budget exceeds {HORIZON_CAP}")]
    HorizonOverflow,
    #[error("eps0 must lie in (0, 1], got {0}")]
    Eps(f64),
    #[error("delta must lie in (0, 1), got {0}")]
    Delta(f64),
    #[error("target (h={stage}, s={state}) out of range")]
    Target { stage: usize, state: usize },
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// First-order regret scale of UCBVI with changing rewards:
/// `65536 S A H^2 (log(2SAH/delta) + 6S) log(T+1)^2`.
pub fn ucbvi_regret_bound(dims: Dims, delta: f64, episodes: u64) -> f64 {
    let (s, a, h) = (dims.states as f64, dims.actions as f64, dims.horizon as f64);
    let log_t = (episodes as f64 + 1.0).ln();
    65536.0 * s * a * h * h * ((2.0 * s * a * h / delta).ln() + 6.0 * s) * log_t * log_t
}

/// Smallest `T` with `4 R(T) + 6 log(4/delta) <= eps0 T / 4`, for a nondecreasing
/// regret function `R` (the caller evaluates it at confidence `delta/2`).
pub fn horizon_t(eps0: f64, delta: f64, regret: impl Fn(u64) -> f64) -> Result<u64, ReachError> {
    if !(eps0 > 0.0 && eps0 <= 1.0) {
        return Err(ReachError::Eps(eps0));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(ReachError::Delta(delta));
    }
    let log_term = 6.0 * (4.0 / delta).ln();
    let holds = |t: u64| 4.0 * regret(t) + log_term <= eps0 * t as f64 / 4.0;
    if holds(1) {
        return Ok(1);
    }
    let mut hi: u64 = 2;
    while !holds(hi) {
        if hi > HORIZON_CAP {
            return Err(ReachError::HorizonOverflow);
        }
        hi *= 2;
    }
    // holds(hi) and !holds(lo)
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if holds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if hi > HORIZON_CAP {
        return Err(ReachError::HorizonOverflow);
    }
    Ok(hi)
}

/// Interval `[lower, upper]` on `W_h(s)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachInterval {
    pub lower: f64,
    pub upper: f64,
    /// Episodes spent.
    pub episodes: u64,
    /// Visits to the target among them.
    pub visits: u64,
}

impl ReachInterval {
    /// `lower = (n/(2T) - eps0/16) v 0`, `upper = (2n/T + eps0/4) ^ 1`.
    pub fn from_visits(visits: u64, episodes: u64, eps0: f64) -> Self {
        let freq = visits as f64 / episodes as f64;
        ReachInterval {
            lower: (freq / 2.0 - eps0 / 16.0).max(0.0),
            upper: (2.0 * freq + eps0 / 4.0).min(1.0),
            episodes,
            visits,
        }
    }

    pub fn contains(&self, w: f64) -> bool {
        self.lower <= w && w <= self.upper
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachConfig {
    /// Multiplies the UCBVI confidence threshold.
    pub beta_scale: f64,
    /// Multiplies the regret function used to size the episode budget. 0 sizes the
    /// budget as if the planner had no regret (the known-model regime).
    pub regret_scale: f64,
}

impl ReachConfig {
    /// Both knobs at `beta_scale`.
    pub fn new(beta_scale: f64) -> Self {
        ReachConfig {
            beta_scale,
            regret_scale: beta_scale,
        }
    }

    pub fn with_regret_scale(mut self, regret_scale: f64) -> Self {
        self.regret_scale = regret_scale;
        self
    }

    /// Episode budget per target for `(eps0, delta)`.
    pub fn episodes(&self, dims: Dims, eps0: f64, delta: f64) -> Result<u64, ReachError> {
        let scale = self.regret_scale;
        horizon_t(eps0, delta, |t| {
            if scale == 0.0 {
                0.0
            } else {
                scale * ucbvi_regret_bound(dims, delta / 2.0, t)
            }
        })
    }
}

/// Estimates `W_stage(state)` with `T = horizon_t(eps0, delta)` UCBVI episodes.
pub fn estimate_reachability<R: Rng + ?Sized>(
    env: &TabularMdp,
    stage: usize,
    state: usize,
    eps0: f64,
    delta: f64,
    config: &ReachConfig,
    rng: &mut R,
) -> Result<ReachInterval, ReachError> {
    let d = env.dims();
    if stage >= d.horizon || state >= d.states {
        return Err(ReachError::Target { stage, state });
    }
    let episodes = config.episodes(d, eps0, delta)?;
    let mut reward = StageTable::zeros(d);
    reward.row_mut(stage, state).fill(1.0);
    let mut ucbvi = Ucbvi::new(d, delta / 2.0, config.beta_scale);
    let mut steps = Vec::with_capacity(d.horizon);
    let mut visits = 0;
    for _ in 0..episodes {
        let actions = ucbvi.plan(&reward)?;
        rollout(env, actions, rng, &mut steps);
        if steps[stage].state as usize == state {
            visits += 1;
        }
        ucbvi.update_ref(EpisodeRef::new(&steps));
    }
    Ok(ReachInterval::from_visits(visits, episodes, eps0))
}

/// All `(h, s, a)` whose state has `lower >= threshold`; `intervals` is laid out `[h * S + s]`.
pub fn build_x_hat(dims: Dims, intervals: &[ReachInterval], threshold: f64) -> Vec<Triplet> {
    assert_eq!(intervals.len(), dims.horizon * dims.states);
    dims.triplets()
        .filter(|t| intervals[t.stage * dims.states + t.state].lower >= threshold)
        .collect()
}

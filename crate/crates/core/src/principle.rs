//! PRINCIPLE: best-policy identification by proportional coverage with implicit
//! policy elimination.
//!
//! Instead of enumerating policies, each phase keeps the constraints of the set of
//! empirical occupancies that are well covered by the data and whose estimated
//! value beats a lower confidence bound on the optimum. The next coverage target
//! is proportional to the largest occupancy any member of that set assigns to
//! each triplet.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covgame::{run_covgame, CovGameConfig, CovGameError, DEFAULT_MAX_ROUNDS};
use crate::flow::{FlowError, OccupancyPolytope, TargetFunction};
use crate::learners::UcbviStats;
use crate::lp::LpStatus;
use crate::mdp::{
    extract_policy, max_reach_table, Dataset, Dims, MdpError, Occupancy, Policy, StageTable,
    TabularMdp, Triplet, VisitCounts,
};

pub const DEFAULT_MAX_PHASES: u32 = 60;

#[derive(Debug, thiserror::Error)]
pub enum PrincipleError {
    #[error("eps must be positive, got {0}")]
    Eps(f64),
    #[error("delta must lie in (0, 1), got {0}")]
    Delta(f64),
    #[error("stopping rule not met after {0} phases")]
    PhaseCap(u32),
    #[error("phase {phase}: {what} LP returned {status:?}")]
    LpAbort {
        phase: u32,
        what: &'static str,
        status: LpStatus,
    },
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    CovGame(#[from] CovGameError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PruneError {
    #[error("dataset does not cover the target at {0:?}")]
    NotCovered(Triplet),
}

/// `beta_scale (16 H^2 log(2/delta) + 96 S A H^3 log(1 + t))`.
pub fn beta_bpi(t: u64, delta: f64, dims: Dims, beta_scale: f64) -> f64 {
    let h = dims.horizon as f64;
    let sah = dims.len() as f64;
    beta_scale * (16.0 * h * h * (2.0 / delta).ln() + 96.0 * sah * h * h * (1.0 + t as f64).ln())
}

/// Greedy single pass: keeps an episode iff it visits a triplet still short of `c`,
/// and stops as soon as `c` is covered.
pub fn prune_dataset(dataset: &Dataset, c: &TargetFunction) -> Result<Dataset, PruneError> {
    let d = c.dims();
    let full = dataset.counts(d);
    if let Some((t, _)) = c.table().iter().find(|(t, &v)| (full.get(*t) as f64) < v) {
        return Err(PruneError::NotCovered(t));
    }
    let target = c.table();
    let mut short = target.as_slice().iter().filter(|&&v| v > 0.0).count();
    let mut counts = VisitCounts::new(d);
    let mut out = Dataset::new(dataset.horizon());
    for ep in dataset.iter() {
        if short == 0 {
            break;
        }
        let useful = ep
            .triplets()
            .any(|t| (counts.get(t) as f64) < target[t]);
        if !useful {
            continue;
        }
        for t in ep.triplets() {
            let before = counts.get(t) as f64;
            counts.counts[t] += 1;
            if before < target[t] && before + 1.0 >= target[t] {
                short -= 1;
            }
        }
        counts.episodes += 1;
        out.push_steps(ep.steps());
    }
    Ok(out)
}

/// Constraints of `Omega^k`: occupancies of `p_hat` capped by `2^-k n` and, past the
/// burn-in, with estimated value at least `v_lower`.
#[derive(Clone, Debug)]
pub struct ActiveSet {
    pub phase: u32,
    pub p_hat: TabularMdp,
    pub r_hat: StageTable<f64>,
    pub counts: VisitCounts,
    pub v_lower: Option<f64>,
}

impl ActiveSet {
    pub fn polytope(&self) -> Result<OccupancyPolytope<'_>, FlowError> {
        OccupancyPolytope::new(
            &self.p_hat,
            &self.counts,
            self.phase,
            self.v_lower.map(|v| (&self.r_hat, v)),
        )
    }

    /// Whether `rho` (an occupancy of `p_hat`) satisfies the cap and value constraints.
    pub fn admits(&self, rho: &Occupancy, tol: f64) -> bool {
        let scale = 0.5f64.powi(self.phase as i32);
        let capped = rho
            .rho
            .iter()
            .all(|(t, &v)| v <= scale * self.counts.get(t) as f64 + tol);
        let valued = self
            .v_lower
            .is_none_or(|v| rho.rho.dot(&self.r_hat) >= v - tol);
        capped && valued
    }
}

/// `c^k_x = 2^k min(max_{rho in Omega^{k-1}} rho_x + 2 sqrt(H beta_bpi(t_prev + SAH 2^k, delta/2) 2^(1-k)), 1)`
/// on `support`, 0 elsewhere. Also returns the status of every occupancy LP.
pub fn principle_targets(
    prev: &ActiveSet,
    support: &[Triplet],
    k: u32,
    t_prev: u64,
    delta: f64,
    beta_scale: f64,
) -> Result<(TargetFunction, Vec<LpStatus>), PrincipleError> {
    let d = prev.p_hat.dims();
    let scale = 2f64.powi(k as i32);
    let lookahead = t_prev + (d.len() as f64 * scale) as u64;
    let bonus = 2.0
        * (d.horizon as f64 * beta_bpi(lookahead, delta / 2.0, d, beta_scale) * 2f64.powi(1 - k as i32))
            .sqrt();
    let polytope = prev.polytope()?;
    let mut table = StageTable::zeros(d);
    let mut objective = StageTable::zeros(d);
    let mut statuses = Vec::with_capacity(support.len());
    for &x in support {
        objective[x] = 1.0;
        let sol = polytope.maximize(&objective)?;
        objective[x] = 0.0;
        statuses.push(sol.status);
        if !sol.is_optimal() {
            return Err(PrincipleError::LpAbort {
                phase: k,
                what: "target",
                status: sol.status,
            });
        }
        table[x] = scale * (sol.value + bonus).min(1.0);
    }
    Ok((TargetFunction::new(table)?, statuses))
}

/// `sqrt(2^(2-k) H beta_bpi(t_k, delta/2))`.
pub fn value_deduction(dims: Dims, k: u32, t: u64, delta: f64, beta_scale: f64) -> f64 {
    (2f64.powi(2 - k as i32) * dims.horizon as f64 * beta_bpi(t, delta / 2.0, dims, beta_scale))
        .sqrt()
}

/// Constrained best empirical value minus [`value_deduction`].
pub fn lower_bound_value(
    p_hat: &TabularMdp,
    r_hat: &StageTable<f64>,
    counts: &VisitCounts,
    k: u32,
    t: u64,
    delta: f64,
    beta_scale: f64,
) -> Result<f64, PrincipleError> {
    let sol = crate::flow::constrained_best_value(p_hat, r_hat, counts, k)?;
    if !sol.is_optimal() {
        return Err(PrincipleError::LpAbort {
            phase: k,
            what: "value",
            status: sol.status,
        });
    }
    Ok(sol.value - value_deduction(p_hat.dims(), k, t, delta, beta_scale))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrincipleConfig {
    pub eps: f64,
    pub delta: f64,
    pub beta_scale: f64,
    /// Round cap of each CovGame call.
    pub max_rounds: u64,
    pub max_phases: u32,
    /// Triplets to explore; `None` means every triplet reachable in the environment.
    pub support: Option<Vec<Triplet>>,
}

impl PrincipleConfig {
    pub fn new(eps: f64, delta: f64) -> Self {
        PrincipleConfig {
            eps,
            delta,
            beta_scale: 1.0,
            max_rounds: DEFAULT_MAX_ROUNDS,
            max_phases: DEFAULT_MAX_PHASES,
            support: None,
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

    pub fn with_max_phases(mut self, max_phases: u32) -> Self {
        self.max_phases = max_phases;
        self
    }

    pub fn with_support(mut self, support: Vec<Triplet>) -> Self {
        self.support = Some(support);
        self
    }

    /// Confidence of the CovGame call of phase `k` (0 is the burn-in).
    pub fn covgame_delta(&self, k: u32) -> f64 {
        self.delta / (4.0 * ((k + 1) as f64).powi(2))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrinciplePhase {
    pub phase: u32,
    /// Target `c^k`, nested `[h][s][a]`.
    pub target: Vec<Vec<Vec<f64>>>,
    pub target_total: f64,
    /// Episodes CovGame played.
    pub covgame_episodes: u64,
    /// Episodes kept after pruning.
    pub effective_episodes: u64,
    pub pruned: bool,
    pub best_value: f64,
    pub v_lower: f64,
    pub deduction: f64,
    pub target_lp_statuses: Vec<LpStatus>,
}

#[derive(Clone, Debug)]
pub struct PrincipleResult {
    pub policy: Policy,
    /// Burn-in plus effective phase episodes.
    pub effective_episodes: u64,
    /// Every episode played, including pruned ones.
    pub raw_episodes: u64,
    pub burn_in_episodes: u64,
    /// Index of the stopping phase.
    pub phases: u32,
    pub phase_log: Vec<PrinciplePhase>,
}

/// State after phase `k` handed to observers.
pub struct PrincipleSnapshot<'a> {
    pub active: &'a ActiveSet,
    pub effective_episodes: u64,
}

pub fn run_principle<R: Rng + ?Sized>(
    env: &TabularMdp,
    config: &PrincipleConfig,
    rng: &mut R,
) -> Result<PrincipleResult, PrincipleError> {
    run_principle_observed(env, config, rng, |_| {})
}

/// [`run_principle`] that calls `observe` with `Omega^k` after every phase `k >= 1`.
pub fn run_principle_observed<R: Rng + ?Sized>(
    env: &TabularMdp,
    config: &PrincipleConfig,
    rng: &mut R,
    mut observe: impl FnMut(&PrincipleSnapshot<'_>),
) -> Result<PrincipleResult, PrincipleError> {
    if !(config.eps > 0.0) {
        return Err(PrincipleError::Eps(config.eps));
    }
    if !(config.delta > 0.0 && config.delta < 1.0) {
        return Err(PrincipleError::Delta(config.delta));
    }
    let d = env.dims();
    let support = match &config.support {
        Some(s) => s.clone(),
        None => {
            let reach = max_reach_table(env);
            d.triplets().filter(|&t| reach[t] > 0.0).collect()
        }
    };
    let s1 = env.initial_state();
    let covgame = |k: u32| {
        CovGameConfig::new(config.covgame_delta(k))
            .with_beta_scale(config.beta_scale)
            .with_max_rounds(config.max_rounds)
    };

    let burn_in = run_covgame(env, &TargetFunction::indicator(d, &support), &covgame(0), rng)?;
    let mut stats = UcbviStats::new(d);
    for ep in burn_in.dataset.iter() {
        stats.update_ref(ep);
    }
    let mut counts = burn_in.counts.clone();
    let mut t = burn_in.stop_round;
    let mut raw = burn_in.stop_round;
    let mut active = ActiveSet {
        phase: 0,
        p_hat: stats.empirical_mdp(s1),
        r_hat: stats.r_hat(),
        counts: counts.clone(),
        v_lower: None,
    };
    let mut phase_log = Vec::new();

    for k in 1..=config.max_phases {
        let (target, statuses) =
            principle_targets(&active, &support, k, t, config.delta, config.beta_scale)?;
        let run = run_covgame(env, &target, &covgame(k), rng)?;
        raw += run.stop_round;
        let budget = d.len() as u64 * (1u64 << k);
        let pruned = run.stop_round > budget;
        let (effective, phase_counts) = if pruned {
            let kept = prune_dataset(&run.dataset, &target)?;
            let c = kept.counts(d);
            (kept, c)
        } else {
            (run.dataset, run.counts)
        };
        for ep in effective.iter() {
            stats.update_ref(ep);
        }
        counts.merge(&phase_counts);
        t += phase_counts.episodes;

        let p_hat = stats.empirical_mdp(s1);
        let r_hat = stats.r_hat();
        let best = crate::flow::constrained_best_value(&p_hat, &r_hat, &counts, k)?;
        if !best.is_optimal() {
            return Err(PrincipleError::LpAbort {
                phase: k,
                what: "value",
                status: best.status,
            });
        }
        let deduction = value_deduction(d, k, t, config.delta, config.beta_scale);
        let v_lower = best.value - deduction;
        active = ActiveSet {
            phase: k,
            p_hat,
            r_hat,
            counts: counts.clone(),
            v_lower: Some(v_lower),
        };
        phase_log.push(PrinciplePhase {
            phase: k,
            target_total: target.table().total(),
            target: target.table().to_nested(),
            covgame_episodes: run.stop_round,
            effective_episodes: phase_counts.episodes,
            pruned,
            best_value: best.value,
            v_lower,
            deduction,
            target_lp_statuses: statuses,
        });
        observe(&PrincipleSnapshot {
            active: &active,
            effective_episodes: t,
        });

        if deduction <= config.eps {
            let argmax = active.polytope()?.maximize(&active.r_hat)?;
            let rho = match argmax.primal {
                Some(rho) if argmax.status == LpStatus::Optimal => rho,
                _ => {
                    return Err(PrincipleError::LpAbort {
                        phase: k,
                        what: "recommendation",
                        status: argmax.status,
                    })
                }
            };
            return Ok(PrincipleResult {
                policy: extract_policy(&rho)?,
                effective_episodes: t,
                raw_episodes: raw,
                burn_in_episodes: burn_in.stop_round,
                phases: k,
                phase_log,
            });
        }
    }
    Err(PrincipleError::PhaseCap(config.max_phases))
}

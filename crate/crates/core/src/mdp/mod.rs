//! Episodic tabular MDPs.
//!
//! Stages, states and actions are 0-based everywhere in the API. A stage `h`
//! transition kernel exists for `h < H - 1`; the last stage only carries
//! rewards.

mod data;
mod dp;
mod io;

use std::ops::{Index, IndexMut};

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

pub use data::{sample_episode, Dataset, Episode, EpisodeRef, Step, VisitCounts};
pub use dp::{
    extract_policy, max_reach, max_reach_table, optimal_q_values, optimal_value, policy_gap,
    policy_value, visitation_distribution, QValues, ReachTarget,
};
pub use io::{MdpFile, MdpFileError};

/// Tolerance for row-stochasticity of transition kernels.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Tolerance for policy rows.
pub const POLICY_SUM_TOL: f64 = 1e-12;
/// Tolerance for per-stage normalisation of occupancies.
pub const OCCUPANCY_SUM_TOL: f64 = 1e-9;
/// Tolerance for navigation (flow conservation) constraints.
pub const NAVIGATION_TOL: f64 = 1e-8;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MdpError {
    #[error("dimensions must be positive (S={states}, A={actions}, H={horizon})")]
    EmptyDimension {
        states: usize,
        actions: usize,
        horizon: usize,
    },
    #[error("initial state {0} out of range")]
    InitialState(usize),
    #[error("expected {expected} entries for {what}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("transition row (h={stage}, s={state}, a={action}) is not a distribution (sum {sum})")]
    NotStochastic {
        stage: usize,
        state: usize,
        action: usize,
        sum: f64,
    },
    #[error("reward mean at (h={stage}, s={state}, a={action}) is {value}, expected a value in [0, 1]")]
    RewardRange {
        stage: usize,
        state: usize,
        action: usize,
        value: f64,
    },
    #[error("policy row (h={stage}, s={state}) sums to {sum}")]
    PolicyRow { stage: usize, state: usize, sum: f64 },
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch { expected: Dims, got: Dims },
    #[error("negative occupancy entry {value} at {at:?}")]
    NegativeOccupancy { at: Triplet, value: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Sizes of an episodic tabular problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
}

impl Dims {
    pub fn new(states: usize, actions: usize, horizon: usize) -> Result<Self, MdpError> {
        if states == 0 || actions == 0 || horizon == 0 {
            return Err(MdpError::EmptyDimension {
                states,
                actions,
                horizon,
            });
        }
        Ok(Dims {
            states,
            actions,
            horizon,
        })
    }

    /// Number of (stage, state, action) triplets, `S * A * H`.
    #[inline]
    pub fn len(&self) -> usize {
        self.states * self.actions * self.horizon
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, stage: usize, state: usize, action: usize) -> usize {
        debug_assert!(stage < self.horizon && state < self.states && action < self.actions);
        (stage * self.states + state) * self.actions + action
    }

    #[inline]
    pub fn triplet(&self, index: usize) -> Triplet {
        let action = index % self.actions;
        let rest = index / self.actions;
        Triplet {
            stage: rest / self.states,
            state: rest % self.states,
            action,
        }
    }

    /// All triplets in storage order (stage-major, then state, then action).
    pub fn triplets(&self) -> impl Iterator<Item = Triplet> + '_ {
        (0..self.len()).map(move |i| self.triplet(i))
    }
}

/// A (stage, state, action) coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub stage: usize,
    pub state: usize,
    pub action: usize,
}

impl Triplet {
    pub const fn new(stage: usize, state: usize, action: usize) -> Self {
        Triplet {
            stage,
            state,
            action,
        }
    }
}

/// Dense table indexed by (stage, state, action).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTable<T> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Clone> StageTable<T> {
    pub fn filled(dims: Dims, value: T) -> Self {
        StageTable {
            dims,
            data: vec![value; dims.len()],
        }
    }
}

impl<T> StageTable<T> {
    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self, MdpError> {
        if data.len() != dims.len() {
            return Err(MdpError::Shape {
                what: "stage table",
                expected: dims.len(),
                got: data.len(),
            });
        }
        Ok(StageTable { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(Triplet) -> T) -> Self {
        StageTable {
            dims,
            data: (0..dims.len()).map(|i| f(dims.triplet(i))).collect(),
        }
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Entries of one stage, laid out as `[state][action]`.
    #[inline]
    pub fn stage(&self, stage: usize) -> &[T] {
        let w = self.dims.states * self.dims.actions;
        &self.data[stage * w..(stage + 1) * w]
    }

    /// Entries of one (stage, state) row, indexed by action.
    #[inline]
    pub fn row(&self, stage: usize, state: usize) -> &[T] {
        let start = self.dims.index(stage, state, 0);
        &self.data[start..start + self.dims.actions]
    }

    #[inline]
    pub fn row_mut(&mut self, stage: usize, state: usize) -> &mut [T] {
        let start = self.dims.index(stage, state, 0);
        &mut self.data[start..start + self.dims.actions]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Triplet, &T)> + '_ {
        self.data
            .iter()
            .enumerate()
            .map(move |(i, v)| (self.dims.triplet(i), v))
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> StageTable<U> {
        StageTable {
            dims: self.dims,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Nested `[h][s][a]` representation, the layout used by the JSON formats.
    pub fn to_nested(&self) -> Vec<Vec<Vec<T>>>
    where
        T: Clone,
    {
        (0..self.dims.horizon)
            .map(|h| {
                (0..self.dims.states)
                    .map(|s| self.row(h, s).to_vec())
                    .collect()
            })
            .collect()
    }

    pub fn from_nested(dims: Dims, nested: Vec<Vec<Vec<T>>>) -> Result<Self, MdpError> {
        let shape_err = |got| MdpError::Shape {
            what: "nested [h][s][a] table",
            expected: dims.len(),
            got,
        };
        if nested.len() != dims.horizon {
            return Err(shape_err(nested.len()));
        }
        let mut data = Vec::with_capacity(dims.len());
        for stage in nested {
            if stage.len() != dims.states {
                return Err(shape_err(stage.len()));
            }
            for row in stage {
                if row.len() != dims.actions {
                    return Err(shape_err(row.len()));
                }
                data.extend(row);
            }
        }
        Ok(StageTable { dims, data })
    }
}

impl StageTable<f64> {
    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, 0.0)
    }

    /// Sum over a stage.
    pub fn stage_sum(&self, stage: usize) -> f64 {
        self.stage(stage).iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Inner product `sum_{h,s,a} self * other`.
    pub fn dot(&self, other: &StageTable<f64>) -> f64 {
        debug_assert_eq!(self.dims, other.dims);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn max_abs_diff(&self, other: &StageTable<f64>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl<T> Index<Triplet> for StageTable<T> {
    type Output = T;
    #[inline]
    fn index(&self, t: Triplet) -> &T {
        &self.data[self.dims.index(t.stage, t.state, t.action)]
    }
}

impl<T> IndexMut<Triplet> for StageTable<T> {
    #[inline]
    fn index_mut(&mut self, t: Triplet) -> &mut T {
        let i = self.dims.index(t.stage, t.state, t.action);
        &mut self.data[i]
    }
}

impl<T> Index<(usize, usize, usize)> for StageTable<T> {
    type Output = T;
    #[inline]
    fn index(&self, (h, s, a): (usize, usize, usize)) -> &T {
        &self.data[self.dims.index(h, s, a)]
    }
}

impl<T> IndexMut<(usize, usize, usize)> for StageTable<T> {
    #[inline]
    fn index_mut(&mut self, (h, s, a): (usize, usize, usize)) -> &mut T {
        let i = self.dims.index(h, s, a);
        &mut self.data[i]
    }
}

/// Episodic MDP with stage-dependent transitions and Bernoulli rewards.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    dims: Dims,
    initial_state: usize,
    // [h][s][a][s'] for h in 0..H-1
    transitions: Vec<f64>,
    reward_means: StageTable<f64>,
}

impl TabularMdp {
    /// Builds and validates an MDP. `transitions` is laid out `[h][s][a][s']`
    /// over the first `H - 1` stages.
    pub fn new(
        dims: Dims,
        initial_state: usize,
        transitions: Vec<f64>,
        reward_means: StageTable<f64>,
    ) -> Result<Self, MdpError> {
        let mdp = TabularMdp {
            dims,
            initial_state,
            transitions,
            reward_means,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Builds an MDP from a closure giving each transition row.
    pub fn from_fn(
        dims: Dims,
        initial_state: usize,
        mut row: impl FnMut(Triplet) -> Vec<f64>,
        reward_means: StageTable<f64>,
    ) -> Result<Self, MdpError> {
        let mut transitions = Vec::with_capacity(Self::transition_len(dims));
        for h in 0..dims.horizon.saturating_sub(1) {
            for s in 0..dims.states {
                for a in 0..dims.actions {
                    let r = row(Triplet::new(h, s, a));
                    if r.len() != dims.states {
                        return Err(MdpError::Shape {
                            what: "transition row",
                            expected: dims.states,
                            got: r.len(),
                        });
                    }
                    transitions.extend(r);
                }
            }
        }
        Self::new(dims, initial_state, transitions, reward_means)
    }

    fn transition_len(dims: Dims) -> usize {
        dims.horizon.saturating_sub(1) * dims.states * dims.actions * dims.states
    }

    fn validate(&self) -> Result<(), MdpError> {
        let d = self.dims;
        Dims::new(d.states, d.actions, d.horizon)?;
        if self.initial_state >= d.states {
            return Err(MdpError::InitialState(self.initial_state));
        }
        if self.transitions.len() != Self::transition_len(d) {
            return Err(MdpError::Shape {
                what: "transitions",
                expected: Self::transition_len(d),
                got: self.transitions.len(),
            });
        }
        if self.reward_means.dims() != d {
            return Err(MdpError::DimensionMismatch {
                expected: d,
                got: self.reward_means.dims(),
            });
        }
        for h in 0..d.horizon.saturating_sub(1) {
            for s in 0..d.states {
                for a in 0..d.actions {
                    let row = self.next_state_probs(h, s, a);
                    let sum: f64 = row.iter().sum();
                    let bad_entry = row.iter().any(|p| !p.is_finite() || *p < 0.0);
                    if bad_entry || (sum - 1.0).abs() > ROW_SUM_TOL {
                        return Err(MdpError::NotStochastic {
                            stage: h,
                            state: s,
                            action: a,
                            sum,
                        });
                    }
                }
            }
        }
        for (t, &r) in self.reward_means.iter() {
            if !(0.0..=1.0).contains(&r) {
                return Err(MdpError::RewardRange {
                    stage: t.stage,
                    state: t.state,
                    action: t.action,
                    value: r,
                });
            }
        }
        Ok(())
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    #[inline]
    pub fn num_states(&self) -> usize {
        self.dims.states
    }

    #[inline]
    pub fn num_actions(&self) -> usize {
        self.dims.actions
    }

    #[inline]
    pub fn horizon(&self) -> usize {
        self.dims.horizon
    }

    /// `p_h(. | s, a)`; only defined for `stage < H - 1`.
    #[inline]
    pub fn next_state_probs(&self, stage: usize, state: usize, action: usize) -> &[f64] {
        let s = self.dims.states;
        let start = ((stage * s + state) * self.dims.actions + action) * s;
        &self.transitions[start..start + s]
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    pub fn reward_means(&self) -> &StageTable<f64> {
        &self.reward_means
    }

    /// Same dynamics with different reward means.
    pub fn with_rewards(&self, reward_means: StageTable<f64>) -> Result<Self, MdpError> {
        Self::new(
            self.dims,
            self.initial_state,
            self.transitions.clone(),
            reward_means,
        )
    }

    /// Draws one transition: Bernoulli reward and, for non-final stages, the next state.
    #[inline]
    pub fn step<R: Rng + ?Sized>(
        &self,
        stage: usize,
        state: usize,
        action: usize,
        rng: &mut R,
    ) -> (bool, Option<usize>) {
        let mean = self.reward_means[(stage, state, action)];
        let reward = mean > 0.0 && rng.random::<f64>() < mean;
        if stage + 1 >= self.dims.horizon {
            return (reward, None);
        }
        let probs = self.next_state_probs(stage, state, action);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut next = probs.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                next = i;
                break;
            }
        }
        // guard against round-off landing on a zero-probability tail state
        while probs[next] == 0.0 && next > 0 {
            next -= 1;
        }
        (reward, Some(next))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Deterministic,
    Stochastic,
}

/// Markov policy `pi_h(a | s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    kind: PolicyKind,
    probs: StageTable<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    actions: Option<Vec<usize>>,
}

impl Policy {
    /// Deterministic policy from an action per (stage, state), laid out `[h * S + s]`.
    pub fn deterministic(dims: Dims, actions: Vec<usize>) -> Result<Self, MdpError> {
        let expected = dims.horizon * dims.states;
        if actions.len() != expected {
            return Err(MdpError::Shape {
                what: "deterministic policy",
                expected,
                got: actions.len(),
            });
        }
        if let Some(&bad) = actions.iter().find(|&&a| a >= dims.actions) {
            return Err(MdpError::Shape {
                what: "action index",
                expected: dims.actions,
                got: bad,
            });
        }
        let probs = StageTable::from_fn(dims, |t| {
            if actions[t.stage * dims.states + t.state] == t.action {
                1.0
            } else {
                0.0
            }
        });
        Ok(Policy {
            kind: PolicyKind::Deterministic,
            probs,
            actions: Some(actions),
        })
    }

    pub fn stochastic(probs: StageTable<f64>) -> Result<Self, MdpError> {
        let d = probs.dims();
        for h in 0..d.horizon {
            for s in 0..d.states {
                let row = probs.row(h, s);
                let sum: f64 = row.iter().sum();
                if row.iter().any(|p| !p.is_finite() || *p < 0.0)
                    || (sum - 1.0).abs() > POLICY_SUM_TOL
                {
                    return Err(MdpError::PolicyRow {
                        stage: h,
                        state: s,
                        sum,
                    });
                }
            }
        }
        Ok(Policy {
            kind: PolicyKind::Stochastic,
            probs,
            actions: None,
        })
    }

    pub fn uniform(dims: Dims) -> Self {
        let p = 1.0 / dims.actions as f64;
        Policy {
            kind: PolicyKind::Stochastic,
            probs: StageTable::filled(dims, p),
            actions: None,
        }
    }

    #[inline]
    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.probs.dims()
    }

    #[inline]
    pub fn probs(&self) -> &StageTable<f64> {
        &self.probs
    }

    #[inline]
    pub fn prob(&self, stage: usize, state: usize, action: usize) -> f64 {
        self.probs[(stage, state, action)]
    }

    /// The action of a deterministic policy.
    #[inline]
    pub fn action(&self, stage: usize, state: usize) -> Option<usize> {
        self.actions
            .as_ref()
            .map(|a| a[stage * self.dims().states + state])
    }

    #[inline]
    pub fn sample_action<R: Rng + ?Sized>(&self, stage: usize, state: usize, rng: &mut R) -> usize {
        if let Some(a) = self.action(stage, state) {
            return a;
        }
        let row = self.probs.row(stage, state);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
    }
}

/// Per-stage state-action mass: a distribution in `Omega` when normalised, a flow otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub rho: StageTable<f64>,
    pub normalized: bool,
}

impl Occupancy {
    pub fn distribution(rho: StageTable<f64>) -> Self {
        Occupancy {
            rho,
            normalized: true,
        }
    }

    pub fn flow(rho: StageTable<f64>) -> Self {
        Occupancy {
            rho,
            normalized: false,
        }
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.rho.dims()
    }

    /// Mass leaving the initial state, `sum_a rho_1(s1, a)`.
    pub fn value(&self) -> f64 {
        self.rho.stage_sum(0)
    }

    pub fn state_mass(&self, stage: usize, state: usize) -> f64 {
        self.rho.row(stage, state).iter().sum()
    }

    /// Divides a flow by its value, giving a distribution.
    pub fn normalize(&self) -> Option<Occupancy> {
        let v = self.value();
        (v > 0.0).then(|| Occupancy::distribution(self.rho.scaled(1.0 / v)))
    }

    /// Largest violation of the navigation and initial-state constraints under `mdp`.
    pub fn navigation_residual(&self, mdp: &TabularMdp) -> f64 {
        let d = mdp.dims();
        let mut worst: f64 = 0.0;
        for s in 0..d.states {
            if s != mdp.initial_state() {
                worst = worst.max(self.state_mass(0, s).abs());
            }
        }
        for h in 1..d.horizon {
            let mut inflow = vec![0.0; d.states];
            for s in 0..d.states {
                for a in 0..d.actions {
                    let m = self.rho[(h - 1, s, a)];
                    if m != 0.0 {
                        for (sp, p) in mdp.next_state_probs(h - 1, s, a).iter().enumerate() {
                            inflow[sp] += m * p;
                        }
                    }
                }
            }
            for (s, f) in inflow.iter().enumerate() {
                worst = worst.max((self.state_mass(h, s) - f).abs());
            }
        }
        worst
    }

    /// Checks every invariant: nonnegativity, navigation and (if normalised) stage sums.
    pub fn is_valid_for(&self, mdp: &TabularMdp) -> bool {
        if self.dims() != mdp.dims() || self.rho.as_slice().iter().any(|&v| v < -NAVIGATION_TOL) {
            return false;
        }
        if self.normalized
            && (0..self.dims().horizon)
                .any(|h| (self.rho.stage_sum(h) - 1.0).abs() > OCCUPANCY_SUM_TOL)
        {
            return false;
        }
        let scale = if self.normalized { 1.0 } else { self.value().max(1.0) };
        self.navigation_residual(mdp) <= NAVIGATION_TOL * scale
    }
}

use serde::{Deserialize, Serialize};

use super::LearnerError;
use crate::mdp::{Dims, Episode, EpisodeRef, Policy, StageTable, TabularMdp, Triplet};

/// Confidence threshold `log(2SAH/delta) + S log(8e(n+1))`.
pub fn beta(n: u64, delta: f64, dims: Dims) -> f64 {
    beta_with_offset(beta_offset(delta, dims), n, dims)
}

/// The `n`-free part `log(2SAH/delta) + S log(8e)`.
fn beta_offset(delta: f64, dims: Dims) -> f64 {
    (2.0 * dims.len() as f64 / delta).ln() + dims.states as f64 * (8.0 * std::f64::consts::E).ln()
}

#[inline]
fn beta_with_offset(offset: f64, n: u64, dims: Dims) -> f64 {
    offset + dims.states as f64 * (n as f64 + 1.0).ln()
}

/// Visit counts, transition counts and reward sums of a set of episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UcbviStats {
    dims: Dims,
    counts: Vec<u64>,
    // [h][s][a][s'] for h < H - 1
    transitions: Vec<u64>,
    reward_sums: Vec<u64>,
    episodes: u64,
}

impl UcbviStats {
    pub fn new(dims: Dims) -> Self {
        UcbviStats {
            dims,
            counts: vec![0; dims.len()],
            transitions: vec![0; dims.horizon.saturating_sub(1) * dims.states * dims.actions * dims.states],
            reward_sums: vec![0; dims.len()],
            episodes: 0,
        }
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    #[inline]
    pub fn count(&self, t: Triplet) -> u64 {
        self.counts[self.dims.index(t.stage, t.state, t.action)]
    }

    pub fn counts(&self) -> StageTable<u64> {
        StageTable::from_vec(self.dims, self.counts.clone()).expect("sized by dims")
    }

    /// `m_h(s' | s, a)`, defined for `stage < H - 1`.
    #[inline]
    pub fn transition_counts(&self, stage: usize, state: usize, action: usize) -> &[u64] {
        let s = self.dims.states;
        let start = self.dims.index(stage, state, action) * s;
        &self.transitions[start..start + s]
    }

    pub fn update(&mut self, episode: &Episode) {
        let d = self.dims;
        for h in 0..episode.len() {
            let i = d.index(h, episode.states[h], episode.actions[h]);
            self.counts[i] += 1;
            self.reward_sums[i] += episode.rewards[h] as u64;
            if h + 1 < d.horizon {
                self.transitions[i * d.states + episode.states[h + 1]] += 1;
            }
        }
        self.episodes += 1;
    }

    pub fn update_ref(&mut self, episode: EpisodeRef<'_>) {
        let d = self.dims;
        let steps = episode.steps();
        for (h, st) in steps.iter().enumerate() {
            let i = d.index(h, st.state as usize, st.action as usize);
            self.counts[i] += 1;
            self.reward_sums[i] += st.reward as u64;
            if h + 1 < d.horizon {
                self.transitions[i * d.states + steps[h + 1].state as usize] += 1;
            }
        }
        self.episodes += 1;
    }

    /// Maximum-likelihood `p_hat(. | s, a)`; `None` when unvisited.
    pub fn p_hat_row(&self, stage: usize, state: usize, action: usize) -> Option<Vec<f64>> {
        let n = self.count(Triplet::new(stage, state, action));
        (n > 0).then(|| {
            self.transition_counts(stage, state, action)
                .iter()
                .map(|&m| m as f64 / n as f64)
                .collect()
        })
    }

    /// Empirical mean rewards, 0 where unvisited.
    pub fn r_hat(&self) -> StageTable<f64> {
        StageTable::from_fn(self.dims, |t| {
            let i = self.dims.index(t.stage, t.state, t.action);
            if self.counts[i] == 0 {
                0.0
            } else {
                self.reward_sums[i] as f64 / self.counts[i] as f64
            }
        })
    }

    /// The empirical MDP `(p_hat, r_hat)`; unvisited rows are uniform.
    pub fn empirical_mdp(&self, initial_state: usize) -> TabularMdp {
        let d = self.dims;
        let uniform = vec![1.0 / d.states as f64; d.states];
        TabularMdp::from_fn(
            d,
            initial_state,
            |t| {
                self.p_hat_row(t.stage, t.state, t.action)
                    .map(|row| {
                        // exact ratios of integers can still miss 1 by an ulp or two
                        let sum: f64 = row.iter().sum();
                        row.into_iter().map(|p| p / sum).collect()
                    })
                    .unwrap_or_else(|| uniform.clone())
            },
            self.r_hat(),
        )
        .expect("empirical rows are distributions")
    }
}

/// Checks that rewards lie in `[0, 1]` and that no trajectory collects more than 1.
fn check_reward(dims: Dims, reward: &StageTable<f64>) -> Result<(), LearnerError> {
    if reward.dims() != dims {
        return Err(crate::mdp::MdpError::DimensionMismatch {
            expected: dims,
            got: reward.dims(),
        }
        .into());
    }
    if let Some((at, &value)) = reward.iter().find(|(_, &r)| !(0.0..=1.0).contains(&r)) {
        return Err(LearnerError::RewardRange { at, value });
    }
    let mass: f64 = (0..dims.horizon)
        .map(|h| reward.stage(h).iter().copied().fold(0.0, f64::max))
        .sum();
    if mass > 1.0 + 1e-9 {
        return Err(LearnerError::RewardMass(mass));
    }
    Ok(())
}

/// One optimistic backward pass. Returns `Q_bar` and the greedy actions `[h * S + s]`.
fn backward_pass(
    stats: &UcbviStats,
    reward: &StageTable<f64>,
    beta_over_n: impl Fn(usize) -> f64,
    q: &mut [f64],
    v: &mut [f64],
    actions: &mut [usize],
) {
    let d = stats.dims;
    let (ns, na, nh) = (d.states, d.actions, d.horizon);
    let r = reward.as_slice();
    for h in (0..nh).rev() {
        for s in 0..ns {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0;
            for a in 0..na {
                let i = (h * ns + s) * na + a;
                let val = if h + 1 == nh {
                    r[i]
                } else {
                    let n = stats.counts[i];
                    if n == 0 {
                        1.0
                    } else {
                        let next = &v[(h + 1) * ns..(h + 2) * ns];
                        let m = &stats.transitions[i * ns..(i + 1) * ns];
                        let inv = 1.0 / n as f64;
                        let (mut mean, mut second) = (0.0, 0.0);
                        for (&c, &x) in m.iter().zip(next) {
                            if c != 0 {
                                let p = c as f64 * inv;
                                mean += p * x;
                                second += p * x * x;
                            }
                        }
                        let var = (second - mean * mean).max(0.0);
                        let bn = beta_over_n(i);
                        let bonus = (8.0 * var * bn).sqrt().max(8.0 * bn);
                        (r[i] + mean + bonus).min(1.0)
                    }
                };
                q[i] = val;
                if val > best {
                    best = val;
                    best_a = a;
                }
            }
            v[h * ns + s] = best;
            actions[h * ns + s] = best_a;
        }
    }
}

/// Optimistic planning for `reward` at confidence `delta`; `beta_scale` multiplies the
/// confidence threshold. Returns `Q_bar` and the deterministic greedy policy.
pub fn ucbvi_plan(
    stats: &UcbviStats,
    reward: &StageTable<f64>,
    delta: f64,
    beta_scale: f64,
) -> Result<(StageTable<f64>, Policy), LearnerError> {
    let d = stats.dims;
    check_reward(d, reward)?;
    let mut q = vec![0.0; d.len()];
    let mut v = vec![0.0; d.horizon * d.states];
    let mut actions = vec![0; d.horizon * d.states];
    backward_pass(
        stats,
        reward,
        |i| {
            let n = stats.counts[i];
            beta_scale * beta(n, delta, d) / n as f64
        },
        &mut q,
        &mut v,
        &mut actions,
    );
    Ok((
        StageTable::from_vec(d, q)?,
        Policy::deterministic(d, actions)?,
    ))
}

/// UCBVI for changing rewards with reusable buffers and per-triplet caches of
/// `beta(n, delta) / n` and of the nonzero empirical transitions.
#[derive(Clone, Debug)]
pub struct Ucbvi {
    stats: UcbviStats,
    delta: f64,
    beta_scale: f64,
    beta_offset: f64,
    beta_over_n: Vec<f64>,
    // nonzero (s', p_hat(s' | h, s, a)) per triplet, ascending in s'
    successors: Vec<Vec<(usize, f64)>>,
    q: Vec<f64>,
    v: Vec<f64>,
    actions: Vec<usize>,
    check_rewards: bool,
}

impl Ucbvi {
    pub fn new(dims: Dims, delta: f64, beta_scale: f64) -> Self {
        Ucbvi {
            stats: UcbviStats::new(dims),
            delta,
            beta_scale,
            beta_offset: beta_offset(delta, dims),
            beta_over_n: vec![0.0; dims.len()],
            successors: vec![Vec::new(); dims.len()],
            q: vec![0.0; dims.len()],
            v: vec![0.0; dims.horizon * dims.states],
            actions: vec![0; dims.horizon * dims.states],
            check_rewards: true,
        }
    }

    /// Skips the per-round reward audit; for callers whose rewards are admissible by
    /// construction.
    pub fn trusted_rewards(mut self) -> Self {
        self.check_rewards = false;
        self
    }

    pub fn stats(&self) -> &UcbviStats {
        &self.stats
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn beta_scale(&self) -> f64 {
        self.beta_scale
    }

    /// Plans for `reward` and returns the greedy actions laid out `[h * S + s]`.
    pub fn plan(&mut self, reward: &StageTable<f64>) -> Result<&[usize], LearnerError> {
        if self.check_rewards {
            check_reward(self.stats.dims, reward)?;
        }
        let d = self.stats.dims;
        let (ns, na, nh) = (d.states, d.actions, d.horizon);
        let r = reward.as_slice();
        for h in (0..nh).rev() {
            for s in 0..ns {
                let mut best = f64::NEG_INFINITY;
                let mut best_a = 0;
                for a in 0..na {
                    let i = (h * ns + s) * na + a;
                    let val = if h + 1 == nh {
                        r[i]
                    } else if self.stats.counts[i] == 0 {
                        1.0
                    } else {
                        let next = &self.v[(h + 1) * ns..(h + 2) * ns];
                        let (mut mean, mut second) = (0.0, 0.0);
                        for &(s2, p) in &self.successors[i] {
                            let x = next[s2];
                            mean += p * x;
                            second += p * x * x;
                        }
                        let var = (second - mean * mean).max(0.0);
                        let bn = self.beta_over_n[i];
                        let bonus = (8.0 * var * bn).sqrt().max(8.0 * bn);
                        (r[i] + mean + bonus).min(1.0)
                    };
                    self.q[i] = val;
                    if val > best {
                        best = val;
                        best_a = a;
                    }
                }
                self.v[h * ns + s] = best;
                self.actions[h * ns + s] = best_a;
            }
        }
        Ok(&self.actions)
    }

    /// `Q_bar` from the last call to [`Ucbvi::plan`].
    pub fn q_bar(&self) -> &[f64] {
        &self.q
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn greedy_policy(&self) -> Policy {
        Policy::deterministic(self.stats.dims, self.actions.clone()).expect("actions in range")
    }

    fn refresh(&mut self, i: usize) {
        let d = self.stats.dims;
        let n = self.stats.counts[i];
        self.beta_over_n[i] = self.beta_scale * beta_with_offset(self.beta_offset, n, d) / n as f64;
        if i < self.stats.transitions.len() / d.states {
            let inv = 1.0 / n as f64;
            let row = &self.stats.transitions[i * d.states..(i + 1) * d.states];
            let succ = &mut self.successors[i];
            succ.clear();
            succ.extend(
                row.iter()
                    .enumerate()
                    .filter(|(_, &c)| c != 0)
                    .map(|(s2, &c)| (s2, c as f64 * inv)),
            );
        }
    }

    pub fn update(&mut self, episode: &Episode) {
        self.stats.update(episode);
        for t in episode.triplets() {
            let i = self.stats.dims.index(t.stage, t.state, t.action);
            self.refresh(i);
        }
    }

    pub fn update_ref(&mut self, episode: EpisodeRef<'_>) {
        self.stats.update_ref(episode);
        for t in episode.triplets() {
            let i = self.stats.dims.index(t.stage, t.state, t.action);
            self.refresh(i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{gen_deterministic_chain, gen_random_mdp};
    use crate::mdp::{optimal_q_values, sample_episode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn beta_closed_form() {
        let d = Dims::new(2, 2, 2).unwrap();
        let expect = 160.0f64.ln() + 2.0 * (8.0 * std::f64::consts::E).ln();
        assert!((beta(0, 0.1, d) - expect).abs() < 1e-12);
        assert!((beta(0, 0.1, d) - 11.235).abs() < 1e-3);
        let mut last = beta(0, 0.1, d);
        for n in 1..1000 {
            let b = beta(n, 0.1, d);
            assert!(b >= last && b >= (16.0f64 / 0.1).ln());
            last = b;
        }
    }

    #[test]
    fn last_stage_is_the_reward_and_unvisited_is_clipped() {
        let mdp = gen_random_mdp(42, 3, 2, 3, 1.0).unwrap();
        let d = mdp.dims();
        let mut reward = StageTable::zeros(d);
        reward[(2, 1, 1)] = 0.4;
        reward[(0, 0, 0)] = 0.3;
        let (q, _) = ucbvi_plan(&UcbviStats::new(d), &reward, 0.1, 1.0).unwrap();
        for s in 0..3 {
            for a in 0..2 {
                assert_eq!(q[(2, s, a)], reward[(2, s, a)]);
                assert_eq!(q[(0, s, a)], 1.0);
                assert_eq!(q[(1, s, a)], 1.0);
            }
        }
    }

    #[test]
    fn one_episode_bookkeeping() {
        let mdp = gen_random_mdp(42, 3, 2, 3, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ep = sample_episode(&mdp, &Policy::uniform(mdp.dims()), &mut rng);
        let mut stats = UcbviStats::new(mdp.dims());
        stats.update(&ep);
        assert_eq!(stats.counts().as_slice().iter().sum::<u64>(), 3);
        let row = stats.p_hat_row(0, ep.states[0], ep.actions[0]).unwrap();
        assert_eq!(row[ep.states[1]], 1.0);
        assert_eq!(row.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn rejects_inadmissible_rewards() {
        let d = Dims::new(2, 2, 2).unwrap();
        let stats = UcbviStats::new(d);
        let r = StageTable::filled(d, 0.6);
        assert!(matches!(
            ucbvi_plan(&stats, &r, 0.1, 1.0),
            Err(LearnerError::RewardMass(_))
        ));
        let mut r = StageTable::zeros(d);
        r[(0, 0, 0)] = -0.1;
        assert!(matches!(
            ucbvi_plan(&stats, &r, 0.1, 1.0),
            Err(LearnerError::RewardRange { .. })
        ));
    }

    #[test]
    fn cached_planner_matches_reference() {
        let mdp = gen_random_mdp(7, 4, 3, 3, 0.5).unwrap();
        let d = mdp.dims();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut fast = Ucbvi::new(d, 0.05, 0.3);
        let mut reward = StageTable::zeros(d);
        reward[(1, 2, 0)] = 0.5;
        reward[(2, 3, 2)] = 0.5;
        for _ in 0..300 {
            let actions = fast.plan(&reward).unwrap().to_vec();
            let (q, pi) = ucbvi_plan(fast.stats(), &reward, 0.05, 0.3).unwrap();
            assert_eq!(fast.q_bar(), q.as_slice());
            for h in 0..3 {
                for s in 0..4 {
                    assert_eq!(Some(actions[h * 4 + s]), pi.action(h, s));
                }
            }
            let ep = sample_episode(&mdp, &pi, &mut rng);
            fast.update(&ep);
        }
    }

    #[test]
    fn exact_statistics_approach_optimal_values() {
        // near-noiseless data on a deterministic chain: Q_bar tends to Q*
        let mdp = gen_deterministic_chain(3, 2, 3).unwrap();
        let d = mdp.dims();
        let mut reward = StageTable::zeros(d);
        reward[(2, 2, 0)] = 1.0;
        let mut stats = UcbviStats::new(d);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20_000 {
            stats.update(&sample_episode(&mdp, &Policy::uniform(d), &mut rng));
        }
        let (q, _) = ucbvi_plan(&stats, &reward, 0.1, 1e-6).unwrap();
        let exact = optimal_q_values(&mdp, &reward).unwrap();
        for (t, &v) in exact.q.iter() {
            if stats.count(t) > 0 {
                assert!(q[t] >= v - 1e-12 && q[t] - v < 1e-3, "{t:?}: {} vs {v}", q[t]);
            }
        }
    }
}

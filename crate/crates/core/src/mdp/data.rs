use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dims, Policy, StageTable, TabularMdp, Triplet};

/// One trajectory `(s_h, a_h, reward_h)` for `h = 1..H`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<u8>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn triplets(&self) -> impl Iterator<Item = Triplet> + '_ {
        self.states
            .iter()
            .zip(&self.actions)
            .enumerate()
            .map(|(h, (&s, &a))| Triplet::new(h, s, a))
    }
}

/// Compact per-stage record used inside [`Dataset`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Step {
    pub state: u32,
    pub action: u16,
    pub reward: bool,
}

/// Borrowed view of one stored episode.
#[derive(Clone, Copy, Debug)]
pub struct EpisodeRef<'a> {
    steps: &'a [Step],
}

impl<'a> EpisodeRef<'a> {
    pub fn new(steps: &'a [Step]) -> Self {
        EpisodeRef { steps }
    }

    pub fn steps(&self) -> &'a [Step] {
        self.steps
    }

    pub fn triplets(&self) -> impl Iterator<Item = Triplet> + 'a {
        self.steps
            .iter()
            .enumerate()
            .map(|(h, st)| Triplet::new(h, st.state as usize, st.action as usize))
    }

    pub fn to_episode(&self) -> Episode {
        Episode {
            states: self.steps.iter().map(|s| s.state as usize).collect(),
            actions: self.steps.iter().map(|s| s.action as usize).collect(),
            rewards: self.steps.iter().map(|s| s.reward as u8).collect(),
        }
    }
}

/// Append-only list of episodes of a fixed horizon, stored contiguously.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    horizon: usize,
    steps: Vec<Step>,
}

impl Dataset {
    pub fn new(horizon: usize) -> Self {
        Dataset {
            horizon,
            steps: Vec::new(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        if self.horizon == 0 {
            0
        } else {
            self.steps.len() / self.horizon
        }
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn push_steps(&mut self, steps: &[Step]) {
        assert_eq!(steps.len(), self.horizon, "episode length must equal the horizon");
        self.steps.extend_from_slice(steps);
    }

    pub fn push(&mut self, episode: &Episode) {
        assert_eq!(episode.len(), self.horizon, "episode length must equal the horizon");
        for h in 0..self.horizon {
            self.steps.push(Step {
                state: episode.states[h] as u32,
                action: episode.actions[h] as u16,
                reward: episode.rewards[h] != 0,
            });
        }
    }

    pub fn get(&self, index: usize) -> EpisodeRef<'_> {
        let start = index * self.horizon;
        EpisodeRef {
            steps: &self.steps[start..start + self.horizon],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = EpisodeRef<'_>> + '_ {
        self.steps
            .chunks_exact(self.horizon.max(1))
            .map(|steps| EpisodeRef { steps })
    }

    pub fn extend_from(&mut self, other: &Dataset) {
        assert_eq!(self.horizon, other.horizon);
        self.steps.extend_from_slice(&other.steps);
    }

    pub fn counts(&self, dims: Dims) -> VisitCounts {
        let mut c = VisitCounts::new(dims);
        for ep in self.iter() {
            c.add_steps(ep.steps());
        }
        c
    }
}

/// Visit counts `n_h(s, a)` of a set of episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitCounts {
    pub counts: StageTable<u64>,
    pub episodes: u64,
}

impl VisitCounts {
    pub fn new(dims: Dims) -> Self {
        VisitCounts {
            counts: StageTable::filled(dims, 0),
            episodes: 0,
        }
    }

    pub fn dims(&self) -> Dims {
        self.counts.dims()
    }

    #[inline]
    pub fn get(&self, t: Triplet) -> u64 {
        self.counts[t]
    }

    pub fn add_steps(&mut self, steps: &[Step]) {
        for (h, st) in steps.iter().enumerate() {
            self.counts[(h, st.state as usize, st.action as usize)] += 1;
        }
        self.episodes += 1;
    }

    pub fn add_episode(&mut self, episode: &Episode) {
        for t in episode.triplets() {
            self.counts[t] += 1;
        }
        self.episodes += 1;
    }

    pub fn merge(&mut self, other: &VisitCounts) {
        for (a, b) in self
            .counts
            .as_mut_slice()
            .iter_mut()
            .zip(other.counts.as_slice())
        {
            *a += b;
        }
        self.episodes += other.episodes;
    }

    /// `n_h(s, a) >= c_h(s, a)` everywhere.
    pub fn dominates(&self, target: &StageTable<f64>) -> bool {
        self.counts
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .all(|(&n, &c)| n as f64 >= c)
    }

    /// Counts as reals.
    pub fn as_f64(&self) -> StageTable<f64> {
        self.counts.map(|&n| n as f64)
    }
}

/// Rolls out one episode of `policy` in `mdp`.
pub fn sample_episode<R: Rng + ?Sized>(mdp: &TabularMdp, policy: &Policy, rng: &mut R) -> Episode {
    let h_max = mdp.horizon();
    let mut ep = Episode {
        states: Vec::with_capacity(h_max),
        actions: Vec::with_capacity(h_max),
        rewards: Vec::with_capacity(h_max),
    };
    let mut s = mdp.initial_state();
    for h in 0..h_max {
        let a = policy.sample_action(h, s, rng);
        let (r, next) = mdp.step(h, s, a, rng);
        ep.states.push(s);
        ep.actions.push(a);
        ep.rewards.push(r as u8);
        if let Some(n) = next {
            s = n;
        }
    }
    ep
}

//! Instance generators. Every generator is deterministic in its arguments.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::mdp::{Dims, MdpError, StageTable, TabularMdp};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EnvError {
    #[error("invalid generator parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

fn invalid(msg: impl Into<String>) -> EnvError {
    EnvError::InvalidParameter(msg.into())
}

/// One Dirichlet(alpha, ..., alpha) draw via normalised Gamma variates.
fn dirichlet<R: Rng + ?Sized>(rng: &mut R, gamma: &Gamma<f64>, len: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = v.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        v.iter_mut().for_each(|x| *x /= sum);
    } else {
        // all draws underflowed (tiny alpha): the limit is a point mass
        let hit = rng.random_range(0..len);
        v = (0..len).map(|i| if i == hit { 1.0 } else { 0.0 }).collect();
    }
    v
}

fn uniform_rewards<R: Rng + ?Sized>(rng: &mut R, dims: Dims) -> StageTable<f64> {
    StageTable::from_fn(dims, |_| rng.random::<f64>())
}

/// Dirichlet(`alpha`) transition rows and uniform reward means, starting in state 0.
pub fn gen_random_mdp(
    seed: u64,
    states: usize,
    actions: usize,
    horizon: usize,
    alpha: f64,
) -> Result<TabularMdp, EnvError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(invalid(format!("alpha must be positive, got {alpha}")));
    }
    let dims = Dims::new(states, actions, horizon)?;
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rewards = uniform_rewards(&mut rng, dims);
    Ok(TabularMdp::from_fn(
        dims,
        0,
        |_| dirichlet(&mut rng, &gamma, states),
        rewards,
    )?)
}

/// Transitions depend on the state only: `p_h(s'|s,a) = p_h(s'|s)`.
pub fn gen_contextual_bandit(
    seed: u64,
    states: usize,
    actions: usize,
    horizon: usize,
) -> Result<TabularMdp, EnvError> {
    let dims = Dims::new(states, actions, horizon)?;
    let gamma = Gamma::new(1.0, 1.0).map_err(|e| invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rewards = uniform_rewards(&mut rng, dims);
    let mut last = Vec::new();
    Ok(TabularMdp::from_fn(
        dims,
        0,
        |t| {
            if t.action == 0 {
                last = dirichlet(&mut rng, &gamma, states);
            }
            last.clone()
        },
        rewards,
    )?)
}

/// Rows with every entry in `[(1 - S^(beta-1)) / (S - 1), S^(alpha-1)]`.
pub fn gen_ergodic(
    seed: u64,
    states: usize,
    actions: usize,
    horizon: usize,
    alpha_exp: f64,
    beta_exp: f64,
) -> Result<TabularMdp, EnvError> {
    if !(0.0 < beta_exp && beta_exp < alpha_exp && alpha_exp < 1.0) {
        return Err(invalid(format!(
            "need 0 < beta < alpha < 1, got alpha={alpha_exp}, beta={beta_exp}"
        )));
    }
    if states < 2 {
        return Err(invalid("ergodic rows need at least two states"));
    }
    let dims = Dims::new(states, actions, horizon)?;
    let (lo, hi) = ergodic_row_bounds(states, alpha_exp, beta_exp);
    let n = states as f64;
    let free = 1.0 - n * lo;
    // q = theta * Dirichlet + (1 - theta) * uniform keeps lo + free * max(q) <= hi
    let theta = ((hi - 1.0 / n) / (free * (1.0 - 1.0 / n))).clamp(0.0, 1.0) * (1.0 - 1e-9);
    let gamma = Gamma::new(1.0, 1.0).map_err(|e| invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rewards = uniform_rewards(&mut rng, dims);
    Ok(TabularMdp::from_fn(
        dims,
        0,
        |_| {
            let q = dirichlet(&mut rng, &gamma, states);
            let row: Vec<f64> = q
                .iter()
                .map(|&x| lo + free * (theta * x + (1.0 - theta) / n))
                .collect();
            let sum: f64 = row.iter().sum();
            row.into_iter().map(|x| x / sum).collect()
        },
        rewards,
    )?)
}

/// `(min entry, max entry)` allowed in an ergodic row.
pub fn ergodic_row_bounds(states: usize, alpha_exp: f64, beta_exp: f64) -> (f64, f64) {
    let n = states as f64;
    (
        (1.0 - n.powf(beta_exp - 1.0)) / (n - 1.0),
        n.powf(alpha_exp - 1.0),
    )
}

/// Deterministic tree: `A = branching`, `S = branching^(H-1)`; action `a` at node `i`
/// of stage `h` leads to node `i * branching + a`. The seed permutes state labels per stage.
/// Rewards are zero.
pub fn gen_tree_mdp(seed: u64, branching: usize, horizon: usize) -> Result<TabularMdp, EnvError> {
    if branching == 0 {
        return Err(invalid("branching must be positive"));
    }
    let states = branching
        .checked_pow(horizon.saturating_sub(1) as u32)
        .filter(|&s| s <= 1 << 16)
        .ok_or_else(|| invalid("tree too large"))?;
    let dims = Dims::new(states, branching, horizon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // label[h][node]
    let mut labels: Vec<Vec<usize>> = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let mut perm: Vec<usize> = (0..states).collect();
        if h > 0 {
            for i in (1..states).rev() {
                let j = rng.random_range(0..=i);
                perm.swap(i, j);
            }
        }
        labels.push(perm);
    }
    let mut node_of = vec![vec![0usize; states]; horizon];
    for h in 0..horizon {
        for (node, &label) in labels[h].iter().enumerate() {
            node_of[h][label] = node;
        }
    }
    let initial = labels[0][0];
    Ok(TabularMdp::from_fn(
        dims,
        initial,
        |t| {
            let node = node_of[t.stage][t.state];
            let width = branching.pow(t.stage as u32);
            // nodes beyond the stage's width are unreachable: keep them in place
            let child = if node < width {
                node * branching + t.action
            } else {
                node
            };
            let mut row = vec![0.0; states];
            row[labels[t.stage + 1][child]] = 1.0;
            row
        },
        StageTable::zeros(dims),
    )?)
}

/// Two sub-MDPs behind the first decision: action 0 at the initial state pays `delta`
/// and enters a stochastic zero-reward block of `floor(log2 S)` states whose actions
/// collapse onto `max(1, floor(log2 A))` distinct behaviours; action 1 pays nothing
/// and enters a deterministic zero-reward block with the remaining states. Other
/// actions at the initial state behave like action 1.
pub fn gen_two_block(
    delta: f64,
    states: usize,
    actions: usize,
    horizon: usize,
) -> Result<TabularMdp, EnvError> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1], got {delta}")));
    }
    if states < 4 || actions < 2 || horizon < 2 {
        return Err(invalid("two-block instance needs S >= 4, A >= 2, H >= 2"));
    }
    let dims = Dims::new(states, actions, horizon)?;
    let first_size = states.ilog2() as usize;
    let second_size = states - 1 - first_size;
    let behaviours = (actions.ilog2() as usize).max(1);
    let first = |i: usize| 1 + i;
    let second = |i: usize| 1 + first_size + i;
    let mut rewards = StageTable::zeros(dims);
    rewards[(0, 0, 0)] = delta;
    Ok(TabularMdp::from_fn(
        dims,
        0,
        |t| {
            let mut row = vec![0.0; states];
            if t.state == 0 {
                if t.stage == 0 {
                    let weight = 1.0 / first_size as f64;
                    if t.action == 0 {
                        (0..first_size).for_each(|i| row[first(i)] = weight);
                    } else {
                        row[second(0)] = 1.0;
                    }
                } else {
                    row[0] = 1.0;
                }
            } else if t.state <= first_size {
                let j = t.state - 1;
                let b = t.action % behaviours;
                let weights: Vec<f64> = (0..first_size)
                    .map(|i| 1.0 + ((i + j + b) % first_size) as f64)
                    .collect();
                let total: f64 = weights.iter().sum();
                for (i, w) in weights.iter().enumerate() {
                    row[first(i)] = w / total;
                }
            } else {
                let j = t.state - 1 - first_size;
                row[second((j + t.action) % second_size)] = 1.0;
            }
            row
        },
        rewards,
    )?)
}

/// States `0..S` in a line; action `a` moves from `s` to `min(s + a, S - 1)`. Zero rewards.
pub fn gen_deterministic_chain(
    states: usize,
    actions: usize,
    horizon: usize,
) -> Result<TabularMdp, EnvError> {
    let dims = Dims::new(states, actions, horizon)?;
    Ok(TabularMdp::from_fn(
        dims,
        0,
        |t| {
            let mut row = vec![0.0; states];
            row[(t.state + t.action).min(states - 1)] = 1.0;
            row
        },
        StageTable::zeros(dims),
    )?)
}

/// Single-state, one-stage bandit with the given Bernoulli means.
pub fn gen_bandit(means: &[f64]) -> Result<TabularMdp, EnvError> {
    let dims = Dims::new(1, means.len(), 1)?;
    let rewards = StageTable::from_vec(dims, means.to_vec())?;
    Ok(TabularMdp::new(dims, 0, Vec::new(), rewards)?)
}

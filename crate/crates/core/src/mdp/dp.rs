//! Exact dynamic programming on a known model.

use super::{Dims, MdpError, Occupancy, Policy, StageTable, TabularMdp, Triplet};

/// What [`max_reach`] measures: a state at a stage, or a full triplet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReachTarget {
    State { stage: usize, state: usize },
    Triplet(Triplet),
}

/// Optimal action values with the greedy policy.
#[derive(Clone, Debug)]
pub struct QValues {
    pub q: StageTable<f64>,
    /// `V_h(s)`, laid out `[h * S + s]`.
    pub v: Vec<f64>,
    pub greedy: Policy,
}

fn check_dims(expected: Dims, got: Dims) -> Result<(), MdpError> {
    if expected != got {
        return Err(MdpError::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Forward recursion `rho_h(s,a) = sum rho_{h-1}(s',a') p_{h-1}(s|s',a') pi_h(a|s)`.
pub fn visitation_distribution(mdp: &TabularMdp, policy: &Policy) -> Result<Occupancy, MdpError> {
    let d = mdp.dims();
    check_dims(d, policy.dims())?;
    let mut rho = StageTable::zeros(d);
    let mut state_dist = vec![0.0; d.states];
    state_dist[mdp.initial_state()] = 1.0;
    for h in 0..d.horizon {
        for (s, &mass) in state_dist.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for a in 0..d.actions {
                rho[(h, s, a)] = mass * policy.prob(h, s, a);
            }
        }
        if h + 1 < d.horizon {
            let mut next = vec![0.0; d.states];
            for s in 0..d.states {
                for a in 0..d.actions {
                    let m = rho[(h, s, a)];
                    if m == 0.0 {
                        continue;
                    }
                    for (sp, p) in mdp.next_state_probs(h, s, a).iter().enumerate() {
                        next[sp] += m * p;
                    }
                }
            }
            state_dist = next;
        }
    }
    Ok(Occupancy::distribution(rho))
}

/// `sup_pi p_h^pi(target)`, by backward induction on the indicator reward of the target.
pub fn max_reach(mdp: &TabularMdp, target: ReachTarget) -> f64 {
    let (stage, state) = match target {
        ReachTarget::State { stage, state } => (stage, state),
        // the action at the target stage is free, so a triplet is as reachable as its state
        ReachTarget::Triplet(t) => (t.stage, t.state),
    };
    let d = mdp.dims();
    let mut v = vec![0.0; d.states];
    v[state] = 1.0;
    for h in (0..stage).rev() {
        let mut prev = vec![0.0; d.states];
        for (s, out) in prev.iter_mut().enumerate() {
            let mut best: f64 = 0.0;
            for a in 0..d.actions {
                let val: f64 = mdp
                    .next_state_probs(h, s, a)
                    .iter()
                    .zip(&v)
                    .map(|(p, x)| p * x)
                    .sum();
                best = best.max(val);
            }
            *out = best;
        }
        v = prev;
    }
    v[mdp.initial_state()]
}

/// [`max_reach`] for every triplet.
pub fn max_reach_table(mdp: &TabularMdp) -> StageTable<f64> {
    let d = mdp.dims();
    let mut by_state = vec![0.0; d.horizon * d.states];
    for h in 0..d.horizon {
        for s in 0..d.states {
            by_state[h * d.states + s] = max_reach(mdp, ReachTarget::State { stage: h, state: s });
        }
    }
    StageTable::from_fn(d, |t| by_state[t.stage * d.states + t.state])
}

/// `V_1^pi(s_1; r) = sum_{h,s,a} p_h^pi(s,a) r_h(s,a)`.
pub fn policy_value(
    mdp: &TabularMdp,
    policy: &Policy,
    reward: &StageTable<f64>,
) -> Result<f64, MdpError> {
    check_dims(mdp.dims(), reward.dims())?;
    if reward.as_slice().iter().any(|r| !r.is_finite()) {
        return Err(MdpError::NonFinite("reward"));
    }
    Ok(visitation_distribution(mdp, policy)?.rho.dot(reward))
}

/// Backward induction for `reward`; the greedy policy breaks ties toward the lowest action.
pub fn optimal_q_values(mdp: &TabularMdp, reward: &StageTable<f64>) -> Result<QValues, MdpError> {
    let d = mdp.dims();
    check_dims(d, reward.dims())?;
    if reward.as_slice().iter().any(|r| !r.is_finite()) {
        return Err(MdpError::NonFinite("reward"));
    }
    let mut q = StageTable::zeros(d);
    let mut v = vec![0.0; d.horizon * d.states];
    let mut actions = vec![0usize; d.horizon * d.states];
    for h in (0..d.horizon).rev() {
        for s in 0..d.states {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0;
            for a in 0..d.actions {
                let mut val = reward[(h, s, a)];
                if h + 1 < d.horizon {
                    let next = &v[(h + 1) * d.states..(h + 2) * d.states];
                    val += mdp
                        .next_state_probs(h, s, a)
                        .iter()
                        .zip(next)
                        .map(|(p, x)| p * x)
                        .sum::<f64>();
                }
                q[(h, s, a)] = val;
                if val > best {
                    best = val;
                    best_a = a;
                }
            }
            v[h * d.states + s] = best;
            actions[h * d.states + s] = best_a;
        }
    }
    let greedy = Policy::deterministic(d, actions)?;
    Ok(QValues { q, v, greedy })
}

/// Optimal value at `s_1` and a deterministic greedy optimal policy.
pub fn optimal_value(mdp: &TabularMdp, reward: &StageTable<f64>) -> Result<(f64, Policy), MdpError> {
    let qv = optimal_q_values(mdp, reward)?;
    Ok((qv.v[mdp.initial_state()], qv.greedy))
}

/// `V*_1(s_1; r) - V^pi_1(s_1; r)`.
pub fn policy_gap(
    mdp: &TabularMdp,
    policy: &Policy,
    reward: &StageTable<f64>,
) -> Result<f64, MdpError> {
    let (best, _) = optimal_value(mdp, reward)?;
    Ok(best - policy_value(mdp, policy, reward)?)
}

/// `pi_h(a|s) = rho_h(s,a) / sum_b rho_h(s,b)`, uniform where the state has no mass.
pub fn extract_policy(occ: &Occupancy) -> Result<Policy, MdpError> {
    let d = occ.dims();
    for (t, &v) in occ.rho.iter() {
        if !v.is_finite() {
            return Err(MdpError::NonFinite("occupancy"));
        }
        if v < -1e-9 {
            return Err(MdpError::NegativeOccupancy { at: t, value: v });
        }
    }
    let uniform = 1.0 / d.actions as f64;
    let mut probs = StageTable::zeros(d);
    for h in 0..d.horizon {
        for s in 0..d.states {
            let row = occ.rho.row(h, s);
            let mass: f64 = row.iter().map(|v| v.max(0.0)).sum();
            let out = probs.row_mut(h, s);
            if mass > 0.0 {
                for (o, v) in out.iter_mut().zip(row) {
                    *o = v.max(0.0) / mass;
                }
            } else {
                out.fill(uniform);
            }
        }
    }
    Policy::stochastic(probs)
}

//! Reference computations that share no code with the library: plain backward
//! induction, forward occupancy of deterministic policies, and LPs solved by minilp.

#![allow(dead_code)]

use covkit::flow::TargetFunction;
use covkit::mdp::{StageTable, TabularMdp, Triplet, VisitCounts};
use minilp::{ComparisonOp, OptimizationDirection, Problem, Variable};

/// `p(s' | h, s, a)` read straight from the flat transition array.
pub fn prob(mdp: &TabularMdp, h: usize, s: usize, a: usize, next: usize) -> f64 {
    let d = mdp.dims();
    mdp.transitions()[((h * d.states + s) * d.actions + a) * d.states + next]
}

/// Deterministic best response to `weights`: `(value, actions[h * S + s])`.
pub fn best_response(mdp: &TabularMdp, weights: &StageTable<f64>) -> (f64, Vec<usize>) {
    let d = mdp.dims();
    let mut v_next = vec![0.0; d.states];
    let mut actions = vec![0; d.horizon * d.states];
    for h in (0..d.horizon).rev() {
        let mut v = vec![0.0; d.states];
        for s in 0..d.states {
            let mut best = f64::NEG_INFINITY;
            for a in 0..d.actions {
                let mut q = weights[(h, s, a)];
                if h + 1 < d.horizon {
                    q += (0..d.states).map(|n| prob(mdp, h, s, a, n) * v_next[n]).sum::<f64>();
                }
                if q > best {
                    best = q;
                    actions[h * d.states + s] = a;
                }
            }
            v[s] = best;
        }
        v_next = v;
    }
    (v_next[mdp.initial_state()], actions)
}

/// Occupancy of a deterministic policy by forward propagation.
pub fn occupancy(mdp: &TabularMdp, actions: &[usize]) -> StageTable<f64> {
    let d = mdp.dims();
    let mut out = StageTable::zeros(d);
    let mut mass = vec![0.0; d.states];
    mass[mdp.initial_state()] = 1.0;
    for h in 0..d.horizon {
        let mut next = vec![0.0; d.states];
        for s in 0..d.states {
            if mass[s] == 0.0 {
                continue;
            }
            let a = actions[h * d.states + s];
            out[(h, s, a)] += mass[s];
            if h + 1 < d.horizon {
                for (n, m) in next.iter_mut().enumerate() {
                    *m += mass[s] * prob(mdp, h, s, a, n);
                }
            }
        }
        mass = next;
    }
    out
}

/// Every deterministic policy, as `actions[h * S + s]`.
pub fn all_deterministic(mdp: &TabularMdp) -> Vec<Vec<usize>> {
    let d = mdp.dims();
    let slots = d.horizon * d.states;
    let total = d.actions.pow(slots as u32);
    (0..total)
        .map(|mut code| {
            (0..slots)
                .map(|_| {
                    let a = code % d.actions;
                    code /= d.actions;
                    a
                })
                .collect()
        })
        .collect()
}

/// Maximal reachability of every triplet via best responses to indicator weights.
pub fn reach_table(mdp: &TabularMdp) -> StageTable<f64> {
    let d = mdp.dims();
    StageTable::from_fn(d, |t| {
        let mut w = StageTable::zeros(d);
        w[t] = 1.0;
        best_response(mdp, &w).0
    })
}

/// `phi*(c)` as the smallest total mass of a mixture of deterministic policies whose
/// summed occupancies dominate `c`. Solved through its dual
/// `max c.y  s.t.  y.p^pi <= 1 for every deterministic pi`, with constraints
/// generated by best responses.
pub fn mixture_phi_star(mdp: &TabularMdp, c: &TargetFunction) -> f64 {
    let d = mdp.dims();
    let support: Vec<Triplet> = c.support();
    if support.is_empty() {
        return 0.0;
    }
    let mut cuts: Vec<StageTable<f64>> = Vec::new();
    for &t in &support {
        let mut w = StageTable::zeros(d);
        w[t] = 1.0;
        cuts.push(occupancy(mdp, &best_response(mdp, &w).1));
    }
    for _ in 0..10_000 {
        let mut lp = Problem::new(OptimizationDirection::Maximize);
        let vars: Vec<Variable> = support
            .iter()
            .map(|&t| lp.add_var(c.get(t), (0.0, f64::INFINITY)))
            .collect();
        for occ in &cuts {
            let row: Vec<(Variable, f64)> = support
                .iter()
                .zip(&vars)
                .filter(|(t, _)| occ[**t] > 0.0)
                .map(|(t, &v)| (v, occ[*t]))
                .collect();
            lp.add_constraint(row.as_slice(), ComparisonOp::Le, 1.0);
        }
        let sol = lp.solve().expect("dual is feasible and bounded");
        let mut y = StageTable::zeros(d);
        for (t, v) in support.iter().zip(&vars) {
            y[*t] = *sol.var_value(*v);
        }
        let (value, actions) = best_response(mdp, &y);
        if value <= 1.0 + 1e-11 {
            return sol.objective();
        }
        cuts.push(occupancy(mdp, &actions));
    }
    panic!("constraint generation did not converge");
}

/// `max objective.rho` over occupancies of `model` with `rho <= 2^-phase counts` and
/// optionally `rho.r >= floor`. `None` when infeasible.
pub fn capped_occupancy_lp(
    model: &TabularMdp,
    counts: &VisitCounts,
    phase: u32,
    objective: &StageTable<f64>,
    floor: Option<(&StageTable<f64>, f64)>,
) -> Option<f64> {
    let d = model.dims();
    let scale = 0.5f64.powi(phase as i32);
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let x: Vec<Variable> = d
        .triplets()
        .map(|t| lp.add_var(objective[t], (0.0, scale * counts.get(t) as f64)))
        .collect();
    let idx = |h: usize, s: usize, a: usize| x[d.index(h, s, a)];
    let start: Vec<(Variable, f64)> = (0..d.actions)
        .map(|a| (idx(0, model.initial_state(), a), 1.0))
        .collect();
    lp.add_constraint(start.as_slice(), ComparisonOp::Eq, 1.0);
    for s in 0..d.states {
        if s != model.initial_state() {
            let row: Vec<(Variable, f64)> = (0..d.actions).map(|a| (idx(0, s, a), 1.0)).collect();
            lp.add_constraint(row.as_slice(), ComparisonOp::Eq, 0.0);
        }
    }
    for h in 1..d.horizon {
        for s in 0..d.states {
            let mut row: Vec<(Variable, f64)> = (0..d.actions).map(|a| (idx(h, s, a), 1.0)).collect();
            for sp in 0..d.states {
                for a in 0..d.actions {
                    let p = prob(model, h - 1, sp, a, s);
                    if p != 0.0 {
                        row.push((idx(h - 1, sp, a), -p));
                    }
                }
            }
            lp.add_constraint(row.as_slice(), ComparisonOp::Eq, 0.0);
        }
    }
    if let Some((r, v)) = floor {
        let row: Vec<(Variable, f64)> = d.triplets().map(|t| (idx(t.stage, t.state, t.action), r[t])).collect();
        lp.add_constraint(row.as_slice(), ComparisonOp::Ge, v);
    }
    lp.solve().ok().map(|s| s.objective())
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

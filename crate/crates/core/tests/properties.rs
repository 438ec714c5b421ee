//! Invariants checked over generated instances.

use covkit::envs::gen_random_mdp;
use covkit::flow::{phi_star, TargetFunction};
use covkit::learners::WmfState;
use covkit::mdp::{
    extract_policy, max_reach_table, optimal_value, policy_value, sample_episode,
    visitation_distribution, Dataset, MdpFile, Policy, StageTable, TabularMdp, Triplet,
};
use covkit::principle::prune_dataset;
use covkit::reachability::ReachInterval;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance() -> impl Strategy<Value = TabularMdp> {
    (any::<u64>(), 1usize..=4, 1usize..=3, 1usize..=3, 0.2f64..2.0)
        .prop_map(|(seed, s, a, h, alpha)| gen_random_mdp(seed, s, a, h, alpha).unwrap())
}

/// A target on reachable triplets from a vector of raw draws in `[0, 1)`.
fn target_from(mdp: &TabularMdp, draws: &[f64], scale: f64) -> TargetFunction {
    let reach = max_reach_table(mdp);
    TargetFunction::new(StageTable::from_fn(mdp.dims(), |t| {
        let i = mdp.dims().index(t.stage, t.state, t.action);
        let u = draws[i % draws.len()];
        if reach[t] > 0.0 && u > 0.3 {
            scale * u
        } else {
            0.0
        }
    }))
    .unwrap()
}

fn stochastic_policy(mdp: &TabularMdp, draws: &[f64]) -> Policy {
    let d = mdp.dims();
    let mut probs = StageTable::from_fn(d, |t| {
        draws[d.index(t.stage, t.state, t.action) % draws.len()] + 1e-3
    });
    for h in 0..d.horizon {
        for s in 0..d.states {
            let row = probs.row_mut(h, s);
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= sum);
        }
    }
    Policy::stochastic(probs).unwrap()
}

fn draws() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 36)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coverage_is_sublinear(mdp in instance(), u in draws(), v in draws(), a in 0.0f64..3.0, b in 0.0f64..3.0) {
        let c1 = target_from(&mdp, &u, 4.0);
        let c2 = target_from(&mdp, &v, 4.0);
        let mixed = TargetFunction::new(StageTable::from_fn(mdp.dims(), |t| a * c1.get(t) + b * c2.get(t))).unwrap();
        let lhs = phi_star(&mdp, &mixed).unwrap().value;
        let rhs = a * phi_star(&mdp, &c1).unwrap().value + b * phi_star(&mdp, &c2).unwrap().value;
        prop_assert!(lhs <= rhs + 1e-7, "{} > {}", lhs, rhs);
    }

    #[test]
    fn coverage_scales_linearly(mdp in instance(), u in draws(), factor in 0.01f64..100.0) {
        let c = target_from(&mdp, &u, 2.0);
        let base = phi_star(&mdp, &c).unwrap().value;
        let scaled = phi_star(&mdp, &c.scaled(factor).unwrap()).unwrap().value;
        prop_assert!((scaled - factor * base).abs() <= 1e-9 * (factor * base).max(1e-12));
    }

    #[test]
    fn coverage_is_monotone(mdp in instance(), u in draws(), v in draws()) {
        let c = target_from(&mdp, &u, 3.0);
        let bump = target_from(&mdp, &v, 1.0);
        let bigger = TargetFunction::new(StageTable::from_fn(mdp.dims(), |t| c.get(t) + bump.get(t))).unwrap();
        prop_assert!(phi_star(&mdp, &c).unwrap().value <= phi_star(&mdp, &bigger).unwrap().value + 1e-9);
    }

    #[test]
    fn minimal_flow_is_feasible(mdp in instance(), u in draws()) {
        let c = target_from(&mdp, &u, 5.0);
        let sol = phi_star(&mdp, &c).unwrap();
        prop_assert!((sol.flow.value() - sol.value).abs() <= 1e-9 * sol.value.max(1.0));
        for (t, &x) in sol.flow.rho.iter() {
            prop_assert!(x >= c.get(t) - 1e-9, "{:?}", t);
        }
        prop_assert!(sol.flow.navigation_residual(&mdp) <= 1e-8 * sol.value.max(1.0));
    }

    #[test]
    fn flow_realizes_its_policy(mdp in instance(), u in draws()) {
        let c = target_from(&mdp, &u, 5.0);
        let sol = phi_star(&mdp, &c).unwrap();
        if let Some(rho) = sol.rho() {
            let pi = extract_policy(&sol.flow).unwrap();
            let got = visitation_distribution(&mdp, &pi).unwrap();
            prop_assert!(got.rho.max_abs_diff(&rho.rho) <= 1e-8);
        }
    }

    #[test]
    fn extract_policy_round_trip(mdp in instance(), u in draws()) {
        let pi = stochastic_policy(&mdp, &u);
        let occ = visitation_distribution(&mdp, &pi).unwrap();
        let back = visitation_distribution(&mdp, &extract_policy(&occ).unwrap()).unwrap();
        prop_assert!(back.rho.max_abs_diff(&occ.rho) <= 1e-9);
    }

    #[test]
    fn optimal_dominates_any_policy(mdp in instance(), u in draws()) {
        let reward = mdp.reward_means().clone();
        let best = optimal_value(&mdp, &reward).unwrap().0;
        let pi = stochastic_policy(&mdp, &u);
        prop_assert!(policy_value(&mdp, &pi, &reward).unwrap() <= best + 1e-12);
    }

    #[test]
    fn episodes_reproduce_from_seed(mdp in instance(), u in draws(), seed in any::<u64>()) {
        let pi = stochastic_policy(&mdp, &u);
        let mut r1 = ChaCha8Rng::seed_from_u64(seed);
        let mut r2 = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            prop_assert_eq!(sample_episode(&mdp, &pi, &mut r1), sample_episode(&mdp, &pi, &mut r2));
        }
    }

    #[test]
    fn mdp_file_round_trip(mdp in instance()) {
        let text = serde_json::to_string(&MdpFile::from_mdp(&mdp)).unwrap();
        prop_assert_eq!(MdpFile::parse(&text).unwrap(), mdp);
    }

    #[test]
    fn pruned_data_still_covers(mdp in instance(), u in draws(), episodes in 50usize..300, seed in any::<u64>()) {
        let pi = Policy::uniform(mdp.dims());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Dataset::new(mdp.horizon());
        for _ in 0..episodes {
            data.push(&sample_episode(&mdp, &pi, &mut rng));
        }
        let full = data.counts(mdp.dims());
        // a target the data is known to meet
        let c = TargetFunction::new(StageTable::from_fn(mdp.dims(), |t: Triplet| {
            let i = mdp.dims().index(t.stage, t.state, t.action);
            (full.get(t) as f64 * u[i % u.len()]).floor()
        })).unwrap();
        let kept = prune_dataset(&data, &c).unwrap();
        prop_assert!(kept.len() <= data.len());
        prop_assert!(kept.counts(mdp.dims()).dominates(c.table()));
        // every kept episode was needed when it was added
        prop_assert!(kept.len() as f64 <= c.table().total());
    }

    #[test]
    fn interval_is_ordered(visits in 0u64..1000, extra in 0u64..1000, eps0 in 1e-4f64..1.0) {
        let i = ReachInterval::from_visits(visits, visits + extra + 1, eps0);
        prop_assert!(0.0 <= i.lower && i.lower <= i.upper && i.upper <= 1.0);
    }

    #[test]
    fn wmf_weights_form_a_distribution(losses in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 5), 1..200)) {
        let support: Vec<Triplet> = (0..5).map(|i| Triplet::new(0, i, 0)).collect();
        let mut wmf = WmfState::new(support).unwrap();
        for l in &losses {
            let w = wmf.weights();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            wmf.update(l).unwrap();
        }
        let k = 5f64.ln();
        prop_assert!(wmf.regret() <= (16.0 * k * wmf.cumulative_alg_loss()).sqrt() + 16.0 * k + 1e-9);
    }
}

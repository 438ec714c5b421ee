//! Reachability intervals against the exact maximal reachability.

use covkit::envs::gen_random_mdp;
use covkit::mdp::max_reach_table;
use covkit::reachability::{estimate_reachability, ReachConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mdp = gen_random_mdp(42, 3, 2, 3, 1.0).expect("valid mdp");
    let truth = max_reach_table(&mdp);
    let (eps0, delta) = (0.1, 0.1);
    // budget sized without the planner's regret term
    let config = ReachConfig::new(0.05).with_regret_scale(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for h in 0..mdp.horizon() {
        for s in 0..mdp.num_states() {
            let w = truth.row(h, s).iter().copied().fold(0.0, f64::max);
            let i = estimate_reachability(&mdp, h, s, eps0, delta, &config, &mut rng)
                .expect("budget fits");
            println!(
                "h={h} s={s}  W {w:.3}  [{:.3}, {:.3}]  {}/{} visits{}",
                i.lower,
                i.upper,
                i.visits,
                i.episodes,
                if i.contains(w) { "" } else { "  MISSED" }
            );
        }
    }
}

//! CovGame on a random MDP for growing uniform targets.
//!
//! ```text
//! cargo run --release --example covgame -- [seeds]
//! ```

use covkit::covgame::{run_covgame, CovGameConfig};
use covkit::envs::gen_random_mdp;
use covkit::flow::{phi_star, TargetFunction};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let mdp = gen_random_mdp(42, 3, 2, 3, 1.0).expect("valid mdp");
    let config = CovGameConfig::new(0.1).with_beta_scale(0.05);
    for n in [1.0, 4.0, 16.0, 64.0] {
        let c = TargetFunction::constant_on_reachable(&mdp, n).expect("finite target");
        let phi = phi_star(&mdp, &c).expect("reachable support").value;
        let mut taus: Vec<u64> = (0..seeds)
            .map(|seed| {
                let run = run_covgame(&mdp, &c, &config, &mut ChaCha8Rng::seed_from_u64(seed))
                    .expect("run completes");
                assert!(run.covered(&c));
                run.stop_round
            })
            .collect();
        taus.sort_unstable();
        println!(
            "N={n:>4}: phi* {phi:8.2}  median tau {:6}  max tau {:6}",
            taus[taus.len() / 2],
            taus[taus.len() - 1]
        );
    }
}

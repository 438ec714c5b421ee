//! Best-policy identification on the two-block instance.
//!
//! ```text
//! cargo run --release --example principle -- [seeds]
//! ```

use std::time::Instant;

use covkit::envs::gen_two_block;
use covkit::mdp::policy_gap;
use covkit::principle::{run_principle_observed, PrincipleConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let env = gen_two_block(0.5, 8, 2, 3).expect("valid instance");
    let config = PrincipleConfig::new(0.2, 0.1)
        .with_beta_scale(0.02)
        .with_max_rounds(200_000_000);
    for seed in 0..seeds {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let report = |snap: &covkit::principle::PrincipleSnapshot<'_>| {
            eprintln!(
                "  phase {} t={} v_lower={:.4} {:.2?}",
                snap.active.phase,
                snap.effective_episodes,
                snap.active.v_lower.unwrap_or(f64::NAN),
                start.elapsed()
            )
        };
        match run_principle_observed(&env, &config, &mut rng, report) {
            Ok(res) => {
                let gap = policy_gap(&env, &res.policy, env.reward_means()).expect("same dims");
                let lowers: Vec<String> =
                    res.phase_log.iter().map(|p| format!("{:.3}", p.v_lower)).collect();
                println!(
                    "seed {seed}: gap {gap:.4}, phases {}, effective {}, raw {}, {:.2?}",
                    res.phases,
                    res.effective_episodes,
                    res.raw_episodes,
                    start.elapsed()
                );
                println!("  lower bounds: {}", lowers.join(" "));
            }
            Err(e) => println!("seed {seed}: {e}"),
        }
    }
}

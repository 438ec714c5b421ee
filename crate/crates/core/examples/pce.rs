//! Reward-free exploration, then planning for random rewards on the learned model.
//!
//! ```text
//! cargo run --release --example pce -- [seeds]
//! ```

use std::time::Instant;

use covkit::envs::{gen_deterministic_chain, gen_random_mdp};
use covkit::mdp::{policy_gap, StageTable, TabularMdp};
use covkit::pce::{rfe_plan, run_pce, PceConfig};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rewards in [0, 1/H] so every trajectory collects at most 1.
fn random_reward(mdp: &TabularMdp, rng: &mut ChaCha8Rng) -> StageTable<f64> {
    let h = mdp.horizon() as f64;
    StageTable::from_fn(mdp.dims(), |_| rng.random::<f64>() / h)
}

fn main() {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let envs = [
        ("chain", gen_deterministic_chain(2, 2, 3).expect("valid chain")),
        ("random", gen_random_mdp(42, 3, 2, 3, 1.0).expect("valid mdp")),
    ];
    // the regret term of the reachability budget is dropped at this scale
    let config = PceConfig::new(0.3, 0.1)
        .with_beta_scale(0.02)
        .with_regret_scale(0.0);
    for (name, env) in &envs {
        for seed in 0..seeds {
            let start = Instant::now();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let res = match run_pce(env, &config, &mut rng) {
                Ok(res) => res,
                Err(e) => {
                    println!("{name} seed {seed}: {e}");
                    continue;
                }
            };
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let r = random_reward(env, &mut rng);
                let pi = rfe_plan(&res.p_hat, &r).expect("same dims");
                worst = worst.max(policy_gap(env, &pi, &r).expect("same dims"));
            }
            println!(
                "{name} seed {seed}: worst gap {worst:.4}, |X_hat| {}, phases {}, episodes {} (+{} reach), {:.2?}",
                res.x_hat.len(),
                res.phases,
                res.total_episodes,
                res.reach_episodes,
                start.elapsed()
            );
        }
    }
}

//! Minimal coverage flow of a random MDP and the policy that realizes it.
//!
//! ```text
//! cargo run --release --example phi_star
//! ```

use covkit::envs::gen_random_mdp;
use covkit::flow::{phi_star, TargetFunction};
use covkit::mdp::{extract_policy, visitation_distribution};

fn main() {
    let mdp = gen_random_mdp(42, 3, 2, 3, 1.0).expect("valid mdp");
    let c = TargetFunction::constant_on_reachable(&mdp, 10.0).expect("finite target");
    let sol = phi_star(&mdp, &c).expect("reachable support");
    println!("phi* = {:.4} episodes to see every reachable triplet 10 times", sol.value);

    let pi = extract_policy(&sol.flow).expect("nonnegative flow");
    let realized = visitation_distribution(&mdp, &pi).expect("same dims");
    let rho = sol.rho().expect("nonzero target");
    println!("realization error {:.2e}", realized.rho.max_abs_diff(&rho.rho));
    for (t, &x) in sol.flow.rho.iter().filter(|(_, &x)| x > 0.0) {
        println!(
            "h={} s={} a={}  flow {:8.3}  target {:4.1}  pi {:.3}",
            t.stage,
            t.state,
            t.action,
            x,
            c.get(t),
            pi.prob(t.stage, t.state, t.action)
        );
    }
}

//! The cheap bounds around phi* across the instance families.

use covkit::envs::{gen_contextual_bandit, gen_ergodic, gen_random_mdp, gen_tree_mdp};
use covkit::flow::{coverage_bounds, phi_star, TargetFunction};
use covkit::mdp::{max_reach_table, TabularMdp};

fn report(name: &str, mdp: &TabularMdp, c: &TargetFunction) {
    let phi = phi_star(mdp, c).expect("reachable support").value;
    let b = coverage_bounds(mdp, c).expect("reachable support");
    println!(
        "{name:<24} b1 {:9.3}  phi* {:9.3}  b2 {:9.3}  b3 {:9.3}",
        b.b1, phi, b.b2, b.b3
    );
}

fn main() {
    let random = gen_random_mdp(7, 4, 3, 3, 0.5).expect("valid mdp");
    report("random, c = 1", &random, &TargetFunction::constant_on_reachable(&random, 1.0).unwrap());

    let tree = gen_tree_mdp(1, 2, 4).expect("valid tree");
    report("tree, c = 1", &tree, &TargetFunction::constant_on_reachable(&tree, 1.0).unwrap());

    for a in [2, 3, 5] {
        let mdp = gen_contextual_bandit(3, 4, a, 3).expect("valid bandit");
        let c = TargetFunction::new(max_reach_table(&mdp)).unwrap();
        report(&format!("contextual A={a}, c = W"), &mdp, &c);
    }

    let ergodic = gen_ergodic(0, 8, 2, 3, 0.5, 0.25).expect("valid exponents");
    let c = TargetFunction::new(max_reach_table(&ergodic)).unwrap();
    report("ergodic S=8, c = W", &ergodic, &c);
    println!("ergodic ceiling S^alpha A H = {:.3}", 8f64.sqrt() * 6.0);
}

//! Writes one instance of every generator family as MDP files.
//!
//! ```text
//! cargo run --example generators -- [out_dir]
//! ```

use std::path::PathBuf;

use covkit::envs::{
    gen_bandit, gen_contextual_bandit, gen_deterministic_chain, gen_ergodic, gen_random_mdp,
    gen_tree_mdp, gen_two_block,
};
use covkit::mdp::{MdpFile, TabularMdp};

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "instances".into()));
    std::fs::create_dir_all(&dir).expect("writable directory");
    let instances: Vec<(&str, TabularMdp)> = vec![
        ("random.json", gen_random_mdp(42, 3, 2, 3, 1.0).unwrap()),
        ("contextual_bandit.json", gen_contextual_bandit(0, 4, 3, 3).unwrap()),
        ("ergodic.json", gen_ergodic(0, 8, 2, 3, 0.5, 0.25).unwrap()),
        ("tree.json", gen_tree_mdp(0, 2, 3).unwrap()),
        ("two_block.json", gen_two_block(0.5, 8, 2, 3).unwrap()),
        ("chain.json", gen_deterministic_chain(2, 2, 3).unwrap()),
        ("bandit.json", gen_bandit(&[0.25, 0.75]).unwrap()),
    ];
    for (name, mdp) in &instances {
        let path = dir.join(name);
        MdpFile::save(mdp, &path).expect("file written");
        let d = mdp.dims();
        println!("{}: S={} A={} H={}", path.display(), d.states, d.actions, d.horizon);
    }
}

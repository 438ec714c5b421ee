//! Runs a sweep config and prints its summary.
//!
//! ```text
//! cargo run --release --example benchmark -- crates/core/examples/configs/covgame_sweep.json [threads]
//! ```

use covkit::bench::{run_experiment, summarize, ExperimentConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .unwrap_or_else(|| "crates/core/examples/configs/covgame_sweep.json".into());
    let threads: usize = args.next().and_then(|t| t.parse().ok()).unwrap_or(1);
    let config = match ExperimentConfig::load(&path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{path}: {e}");
            std::process::exit(2);
        }
    };
    let records = run_experiment(&config, threads).expect("sweep runs");
    for r in &records {
        match &r.error {
            Some(e) => println!("seed {:>3}: error {e}", r.seed),
            None => println!(
                "seed {:>3}: episodes {:>8}  success {}",
                r.seed,
                r.episodes.unwrap_or(0),
                r.success
            ),
        }
    }
    let s = summarize(&records);
    println!(
        "runs {}  success {:.2}  median tau {}  (jsonl {}, csv {})",
        s.runs,
        s.success_rate,
        s.tau_median,
        config.jsonl.display(),
        config.csv.display()
    );
}

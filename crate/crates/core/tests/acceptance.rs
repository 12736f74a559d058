//! Runs every acceptance criterion and prints one line per criterion.

use hbargeo::acceptance::{run_with_history, DEFAULT_SEED};

fn main() {
    let only: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let ids: Vec<u8> = if only.is_empty() { (1..=10).collect() } else { only };
    let mut done = Vec::new();
    let mut failures = 0;
    for id in ids {
        let o = run_with_history(id, DEFAULT_SEED, &done);
        println!(
            "criterion {:>2} {:<32} {} ({:.1}s) {}",
            o.id,
            o.name,
            if o.passed { "PASS" } else { "FAIL" },
            o.seconds,
            o.detail
        );
        if !o.passed {
            failures += 1;
        }
        done.push(o);
    }
    println!("{failures} criteria failed");
    if failures > 0 {
        std::process::exit(1);
    }
}

//! Cross-checks the router against the brute-force reference, exhaustively
//! on tiny lattice instances and on random larger ones.

use std::time::Instant;

use oea::oracle::{exhaustive_small_check, randomized_check};
use oea::route;

fn main() {
    let t0 = Instant::now();
    let exhaustive = exhaustive_small_check(3, 2, 6);
    println!(
        "exhaustive: {} instances, {} counterexamples ({:.1?})",
        exhaustive.instances,
        exhaustive.failure_count,
        t0.elapsed()
    );
    let t0 = Instant::now();
    let random = randomized_check(20_000, 32, 16, 1, &route);
    println!(
        "random:     {} instances, {} counterexamples ({:.1?})",
        random.instances,
        random.failure_count,
        t0.elapsed()
    );
    for c in exhaustive.failures.iter().chain(&random.failures).take(3) {
        println!("  {}: {} {:?}", c.invariant, c.config.label(), c.detail);
    }
}

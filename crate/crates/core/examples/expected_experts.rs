//! Closed-form expected activated experts versus a Monte-Carlo estimate.

use oea::expected_active_experts;
use oea::oracle::mc_expected_active_experts;

fn main() {
    let (n, k) = (128, 8);
    println!("{:>4} {:>10} {:>10} {:>8}", "B", "formula", "sampled", "se");
    for b in [1, 2, 4, 8, 16, 32, 64] {
        let exact = expected_active_experts(n, k, b);
        let (mean, se) = mc_expected_active_experts(n, k, b, 20_000, 1);
        println!("{b:>4} {exact:>10.3} {mean:>10.3} {se:>8.3}");
    }
}

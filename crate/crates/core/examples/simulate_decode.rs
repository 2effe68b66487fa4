//! Decode simulation: how far simplified routing cuts activated experts
//! and modeled latency as the baseline k0 grows.

use oea::sim::{simulate_decode, ScoreGenConfig, SimOptions};
use oea::{LatencyParams, RoutingConfig};

fn main() -> oea::Result<()> {
    let (n, k, b) = (128, 8, 16);
    let gen = ScoreGenConfig::dirichlet(1.0, n, b, 500, 42);
    let latency = LatencyParams::new(0.05, 2.0)?;
    let opts = SimOptions::new(k);

    println!(
        "{:<24} {:>8} {:>10} {:>10}",
        "config", "mean T", "norm T", "norm lat"
    );
    for k0 in 1..=k {
        let cfg = RoutingConfig::simplified(k0, k, n);
        let s = simulate_decode(&gen, &cfg, &latency, &opts)?.summary;
        println!(
            "{:<24} {:>8.2} {:>10.3} {:>10.3}",
            cfg.label(),
            s.mean_active_experts,
            s.normalized_active_experts,
            s.normalized_latency
        );
    }
    Ok(())
}

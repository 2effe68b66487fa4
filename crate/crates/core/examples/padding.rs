//! Padding a batch of 7 up to 8 with a dummy token: unmasked padding
//! activates extra experts, masked padding does not.

use oea::sim::{padding_experiment, ScoreGenConfig};
use oea::{LatencyParams, RoutingConfig};

fn main() -> oea::Result<()> {
    let gen = ScoreGenConfig::dirichlet(1.0, 128, 7, 300, 7);
    let latency = LatencyParams::new(0.05, 2.0)?;
    let report = padding_experiment(&gen, &RoutingConfig::vanilla(8), 8, &latency)?;
    for v in [&report.no_padding, &report.naive, &report.masked] {
        println!(
            "{:<12} T = {:>6.2}  latency = {:>7.2} us",
            v.name, v.mean_active_experts, v.mean_latency_us
        );
    }
    println!(
        "masked equals unpadded at every step: {}",
        report.masked_matches_no_padding
    );
    Ok(())
}

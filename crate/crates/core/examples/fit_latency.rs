//! Fits the per-expert latency slope from noisy simulated observations.

use oea::sim::{simulate_decode, GenKind, ScoreGenConfig, SimOptions};
use oea::{fit_linear, LatencyObservation, LatencyParams, RoutingConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> oea::Result<()> {
    let truth = LatencyParams::new(0.05, 2.0)?;
    let jitter = Normal::new(1.0, 0.01).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut obs = Vec::new();
    for (i, groups) in [1, 2, 4, 8, 16].into_iter().enumerate() {
        let gen = ScoreGenConfig {
            kind: GenKind::Clustered {
                groups,
                concentration: 2.0,
                spread: 1.0,
            },
            ..ScoreGenConfig::dirichlet(1.0, 128, 16, 100, i as u64)
        };
        let trace = simulate_decode(
            &gen,
            &RoutingConfig::vanilla(8),
            &truth,
            &SimOptions::new(8),
        )?;
        obs.extend(trace.records.iter().map(|r| LatencyObservation {
            active_experts: r.active_experts as u32,
            latency_us: r.modeled_latency_us * jitter.sample(&mut rng),
        }));
    }
    let fit = fit_linear(&obs)?;
    println!("{} observations", fit.n_obs);
    println!(
        "slope     {:.4} ± {:.4} us/expert (true {})",
        fit.slope, fit.slope_std_err, truth.b
    );
    println!(
        "intercept {:.3} ± {:.3} us",
        fit.intercept, fit.intercept_std_err
    );
    println!("R²        {:.5}", fit.r_squared);
    Ok(())
}

//! Sweeps routing configs on a toy layer and prints the Pareto frontier of
//! (activated experts, output divergence).

use oea::sim::{pareto_frontier, simplified_grid, sweep, Rounding, ScoreGenConfig, SimOptions};
use oea::{LatencyParams, LayerDims, MoeLayerParams};

fn main() -> oea::Result<()> {
    let dims = LayerDims {
        d_model: 32,
        d_hidden: 48,
        n_experts: 32,
    };
    let layer = MoeLayerParams::random(dims, 3)?;
    let gen = ScoreGenConfig::dirichlet(1.0, dims.n_experts, 16, 40, 3);
    let latency = LatencyParams::new(0.05, 2.0)?;
    let opts = SimOptions::new(4).with_toy_layer(&layer);

    let points = sweep(
        &gen,
        &simplified_grid(dims.n_experts, 4),
        &latency,
        &opts,
        Some(&Rounding::default()),
    )?;
    println!("{} configs swept; frontier:", points.len());
    for p in pareto_frontier(&points) {
        println!(
            "  {:<24} T = {:>6.2}  divergence = {:.4}",
            p.config.label(),
            p.mean_active_experts,
            p.quality_delta.unwrap_or(0.0)
        );
    }
    Ok(())
}

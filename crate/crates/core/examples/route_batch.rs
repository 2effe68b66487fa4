//! Routes one small batch under each routing mode and prints the sets.

use oea::{batch_stats, route, RoutingConfig, ScoreMatrix};

fn main() -> oea::Result<()> {
    let scores = ScoreMatrix::from_rows(&[
        vec![0.40, 0.05, 0.30, 0.05, 0.10, 0.10],
        vec![0.10, 0.45, 0.25, 0.05, 0.10, 0.05],
        vec![0.35, 0.05, 0.05, 0.40, 0.10, 0.05],
        vec![0.05, 0.30, 0.50, 0.05, 0.05, 0.05],
    ])?;

    let configs = [
        RoutingConfig::vanilla(3),
        RoutingConfig::pruned(1, 1.0),
        RoutingConfig::simplified(1, 3, 6),
        RoutingConfig::oea(1, 0.6, 3, 4),
    ];
    for cfg in configs {
        let plan = route(&scores, &cfg)?;
        let stats = batch_stats(&plan);
        println!(
            "{}: T = {}, load = {}",
            cfg.label(),
            stats.active_count,
            stats.total_load
        );
        for (i, (set, w)) in plan.sets.iter().zip(&plan.weights).enumerate() {
            let w: Vec<String> = w.iter().map(|x| format!("{x:.3}")).collect();
            println!("  token {i}: experts {set:?} weights [{}]", w.join(", "));
        }
    }
    Ok(())
}

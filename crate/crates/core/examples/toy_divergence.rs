//! Output drift of a toy MoE layer: pruning alone versus pruning with
//! piggybacking, both measured against vanilla top-k.

use oea::sim::{gen_embeddings, ScoreGenConfig};
use oea::{
    moe_forward, output_divergence, route, router_scores, LayerDims, MoeLayerParams, RoutingConfig,
};

fn main() -> oea::Result<()> {
    let dims = LayerDims::default();
    let k = 4;
    let layer = MoeLayerParams::random(dims, 11)?;
    let gen = ScoreGenConfig::dirichlet(1.0, dims.n_experts, 16, 1, 11);
    let x = gen_embeddings(&gen, 0, 0, dims.d_model)?;
    let scores = router_scores(&layer, &x)?;
    let reference = moe_forward(&layer, &x, &route(&scores, &RoutingConfig::vanilla(k))?)?;

    println!(
        "{:>3} {:>12} {:>12} {:>6}",
        "k0", "pruned", "piggyback", "T"
    );
    for k0 in 1..=k {
        let pruned = route(&scores, &RoutingConfig::pruned(k0, 1.0))?;
        let oea = route(&scores, &RoutingConfig::simplified(k0, k, dims.n_experts))?;
        let dp = output_divergence(&reference, &moe_forward(&layer, &x, &pruned)?)?.0;
        let d = output_divergence(&reference, &moe_forward(&layer, &x, &oea)?)?.0;
        println!("{k0:>3} {dp:>12.4} {d:>12.4} {:>6}", oea.active_count);
    }
    Ok(())
}

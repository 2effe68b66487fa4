//! What padding a batch costs when pad rows are routed like real tokens.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OeaError, Result};
use crate::latency::{moe_latency, LatencyParams};
use crate::routing::{route, RoutingConfig, ScoreMatrix};
use crate::sim::scores::{gen_pad_row, gen_scores, ScoreGenConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaddingVariant {
    pub name: String,
    pub mean_active_experts: f64,
    pub mean_latency_us: f64,
    /// T for every batch, step-major.
    pub active_experts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaddingReport {
    pub batch: usize,
    pub pad_to: usize,
    pub no_padding: PaddingVariant,
    /// Pad rows carry random scores and are routed as real tokens.
    pub naive: PaddingVariant,
    /// Pad rows are present but masked out of routing.
    pub masked: PaddingVariant,
    /// Whether masked padding reproduced the unpadded T in every batch.
    pub masked_matches_no_padding: bool,
}

fn padded(
    gen: &ScoreGenConfig,
    real: &ScoreMatrix,
    pad_to: usize,
    step: usize,
    layer: usize,
    masked: bool,
) -> Result<ScoreMatrix> {
    let b = real.n_tokens();
    let mut values = real.values().to_vec();
    for slot in 0..pad_to - b {
        values.extend(gen_pad_row(gen, step, layer, slot));
    }
    let mask = masked.then(|| (0..pad_to).map(|i| i < b).collect());
    ScoreMatrix::with_mask(pad_to, real.n_experts(), values, mask)
}

/// Routes identical real-token scores unpadded, naively padded to `pad_to`,
/// and mask-padded to `pad_to`.
pub fn padding_experiment(
    gen: &ScoreGenConfig,
    routing: &RoutingConfig,
    pad_to: usize,
    latency: &LatencyParams,
) -> Result<PaddingReport> {
    gen.validate()?;
    if pad_to < gen.batch {
        return Err(OeaError::InvalidInput(format!(
            "pad_to={pad_to} is smaller than the batch size {}",
            gen.batch
        )));
    }
    let layers = gen.layers;
    let per_batch: Vec<[(usize, f64); 3]> = (0..gen.steps * layers)
        .into_par_iter()
        .map(|idx| {
            let (step, layer) = (idx / layers, idx % layers);
            let real = gen_scores(gen, step, layer)?;
            let variants = [
                real.clone(),
                padded(gen, &real, pad_to, step, layer, false)?,
                padded(gen, &real, pad_to, step, layer, true)?,
            ];
            let mut out = [(0, 0.0); 3];
            for (slot, scores) in out.iter_mut().zip(&variants) {
                let plan = route(scores, routing)?;
                *slot = (plan.active_count, moe_latency(&plan.loads, latency));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let variant = |i: usize, name: &str| {
        let ts: Vec<usize> = per_batch.iter().map(|v| v[i].0).collect();
        let n = per_batch.len() as f64;
        PaddingVariant {
            name: name.to_string(),
            mean_active_experts: ts.iter().sum::<usize>() as f64 / n,
            mean_latency_us: per_batch.iter().map(|v| v[i].1).sum::<f64>() / n,
            active_experts: ts,
        }
    };
    let no_padding = variant(0, "no_padding");
    let naive = variant(1, "naive");
    let masked = variant(2, "masked");
    Ok(PaddingReport {
        batch: gen.batch,
        pad_to,
        masked_matches_no_padding: masked.active_experts == no_padding.active_experts,
        no_padding,
        naive,
        masked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat() -> LatencyParams {
        LatencyParams::new(0.05, 2.0).unwrap()
    }

    #[test]
    fn masked_padding_costs_nothing() {
        let gen = ScoreGenConfig::dirichlet(1.0, 64, 5, 30, 1);
        let r = padding_experiment(&gen, &RoutingConfig::vanilla(8), 8, &lat()).unwrap();
        assert!(r.masked_matches_no_padding);
        assert_eq!(r.masked.mean_latency_us, r.no_padding.mean_latency_us);
        assert!(r.naive.mean_active_experts > r.no_padding.mean_active_experts);
    }

    #[test]
    fn no_pad_rows_means_identical_variants() {
        let gen = ScoreGenConfig::dirichlet(1.0, 32, 4, 10, 2);
        let r = padding_experiment(&gen, &RoutingConfig::simplified(2, 4, 32), 4, &lat()).unwrap();
        assert_eq!(r.naive.active_experts, r.no_padding.active_experts);
        assert_eq!(r.masked.active_experts, r.no_padding.active_experts);
    }

    #[test]
    fn pad_target_below_batch_is_rejected() {
        let gen = ScoreGenConfig::dirichlet(1.0, 32, 4, 10, 2);
        assert!(matches!(
            padding_experiment(&gen, &RoutingConfig::vanilla(2), 3, &lat()),
            Err(OeaError::InvalidInput(_))
        ));
    }
}

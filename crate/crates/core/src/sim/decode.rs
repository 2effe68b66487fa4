//! Decode-step simulation.
//!
//! Each `(step, layer)` pair is one batch: B tokens from B sequences at the
//! same position. Routing sees only that batch. Results are gathered in
//! step-major order, so a parallel run is identical to a sequential one.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::latency::{moe_latency, LatencyParams};
use crate::moe::{moe_forward, output_divergence, router_scores, MoeLayerParams};
use crate::routing::{route, route_topk, RoutingConfig, RoutingPlan, ScoreMatrix};
use crate::sim::scores::{gen_embeddings, gen_scores, ScoreGenConfig};

pub const TRACE_VERSION: u32 = 1;

/// Simulation knobs beyond the generator and router.
#[derive(Debug, Clone, Copy)]
pub struct SimOptions<'a> {
    /// The model's default experts per token; the vanilla reference uses top-`k`.
    pub baseline_k: usize,
    /// When set, scores come from this layer's router applied to synthetic
    /// embeddings, and each step records output divergence against vanilla.
    pub toy_layer: Option<&'a MoeLayerParams>,
}

impl<'a> SimOptions<'a> {
    pub fn new(baseline_k: usize) -> Self {
        Self {
            baseline_k,
            toy_layer: None,
        }
    }

    pub fn with_toy_layer(mut self, layer: &'a MoeLayerParams) -> Self {
        self.toy_layer = Some(layer);
        self
    }
}

/// Batch statistics for one `(step, layer)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub layer: usize,
    pub step: usize,
    #[serde(rename = "T")]
    pub active_experts: usize,
    pub total_load: usize,
    pub modeled_latency_us: f64,
    pub divergence: Option<f64>,
}

/// Means over a trace, with the vanilla reference run on identical scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub batches: usize,
    pub mean_active_experts: f64,
    pub std_err_active_experts: f64,
    pub mean_total_load: f64,
    pub mean_latency_us: f64,
    pub vanilla_mean_active_experts: f64,
    pub vanilla_mean_total_load: f64,
    pub vanilla_mean_latency_us: f64,
    /// Mean T over vanilla mean T.
    pub normalized_active_experts: f64,
    /// Mean modeled latency over vanilla mean modeled latency.
    pub normalized_latency: f64,
    /// Proxy quality metric: mean relative output error against vanilla.
    pub mean_divergence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeTrace {
    pub records: Vec<StepRecord>,
    pub summary: TraceSummary,
}

/// Per-batch outcome of the routed and vanilla runs.
#[derive(Debug, Clone, Copy)]
struct StepOutcome {
    record: StepRecord,
    vanilla_t: usize,
    vanilla_load: usize,
    vanilla_latency: f64,
}

/// Scores for one batch, from the generator or from the toy router.
pub(crate) fn step_scores(
    gen: &ScoreGenConfig,
    opts: &SimOptions<'_>,
    step: usize,
    layer: usize,
) -> Result<(ScoreMatrix, Option<crate::moe::TokenBatch>)> {
    match opts.toy_layer {
        Some(l) => {
            let batch = gen_embeddings(gen, step, layer, l.dims.d_model)?;
            Ok((router_scores(l, &batch)?, Some(batch)))
        }
        None => Ok((gen_scores(gen, step, layer)?, None)),
    }
}

fn plan_latency(plan: &RoutingPlan, latency: &LatencyParams) -> f64 {
    moe_latency(&plan.loads, latency)
}

fn run_step(
    gen: &ScoreGenConfig,
    routing: &RoutingConfig,
    latency: &LatencyParams,
    opts: &SimOptions<'_>,
    step: usize,
    layer: usize,
) -> Result<StepOutcome> {
    let (scores, batch) = step_scores(gen, opts, step, layer)?;
    let plan = route(&scores, routing)?;
    let vanilla = route_topk(&scores, opts.baseline_k)?;
    let divergence = match (opts.toy_layer, &batch) {
        (Some(l), Some(b)) => {
            let reference = moe_forward(l, b, &vanilla)?;
            let test = moe_forward(l, b, &plan)?;
            Some(output_divergence(&reference, &test)?.0)
        }
        _ => None,
    };
    Ok(StepOutcome {
        record: StepRecord {
            layer,
            step,
            active_experts: plan.active_count,
            total_load: plan.total_load(),
            modeled_latency_us: plan_latency(&plan, latency),
            divergence,
        },
        vanilla_t: vanilla.active_count,
        vanilla_load: vanilla.total_load(),
        vanilla_latency: plan_latency(&vanilla, latency),
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        f64::NAN
    } else {
        a / b
    }
}

/// Simulates `gen.steps × gen.layers` independent batches.
pub fn simulate_decode(
    gen: &ScoreGenConfig,
    routing: &RoutingConfig,
    latency: &LatencyParams,
    opts: &SimOptions<'_>,
) -> Result<DecodeTrace> {
    gen.validate()?;
    if let Some(l) = opts.toy_layer {
        l.validate()?;
    }
    let layers = gen.layers;
    let outcomes: Vec<StepOutcome> = (0..gen.steps * layers)
        .into_par_iter()
        .map(|idx| run_step(gen, routing, latency, opts, idx / layers, idx % layers))
        .collect::<Result<_>>()?;

    let n = outcomes.len() as f64;
    let mean_t = mean(outcomes.iter().map(|o| o.record.active_experts as f64));
    let var_t = outcomes
        .iter()
        .map(|o| (o.record.active_experts as f64 - mean_t).powi(2))
        .sum::<f64>()
        / (n - 1.0).max(1.0);
    let mean_latency = mean(outcomes.iter().map(|o| o.record.modeled_latency_us));
    let van_t = mean(outcomes.iter().map(|o| o.vanilla_t as f64));
    let van_latency = mean(outcomes.iter().map(|o| o.vanilla_latency));
    let mean_divergence = opts
        .toy_layer
        .map(|_| mean(outcomes.iter().filter_map(|o| o.record.divergence)));

    let summary = TraceSummary {
        batches: outcomes.len(),
        mean_active_experts: mean_t,
        std_err_active_experts: (var_t / n).sqrt(),
        mean_total_load: mean(outcomes.iter().map(|o| o.record.total_load as f64)),
        mean_latency_us: mean_latency,
        vanilla_mean_active_experts: van_t,
        vanilla_mean_total_load: mean(outcomes.iter().map(|o| o.vanilla_load as f64)),
        vanilla_mean_latency_us: van_latency,
        normalized_active_experts: ratio(mean_t, van_t),
        normalized_latency: ratio(mean_latency, van_latency),
        mean_divergence,
    };
    Ok(DecodeTrace {
        records: outcomes.into_iter().map(|o| o.record).collect(),
        summary,
    })
}

/// Writes the per-batch trace as CSV, preceded by a `# oea.trace v1` line.
pub fn write_trace_csv<W: Write>(mut writer: W, records: &[StepRecord]) -> Result<()> {
    writeln!(writer, "# oea.trace v{TRACE_VERSION}")?;
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "layer",
        "step",
        "T",
        "total_load",
        "modeled_latency_us",
        "divergence",
    ])?;
    for r in records {
        wtr.write_record([
            r.layer.to_string(),
            r.step.to_string(),
            r.active_experts.to_string(),
            r.total_load.to_string(),
            r.modeled_latency_us.to_string(),
            r.divergence.map(|d| d.to_string()).unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

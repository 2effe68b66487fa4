//! Batch-aware expert routing for Mixture-of-Experts decode.
//!
//! During decode an MoE block's latency is dominated by how many distinct
//! experts the batch touches. This crate routes each token to a small
//! baseline of its top experts, then lets it piggyback on experts other
//! tokens already pulled in, so the batch activates fewer experts without
//! any retraining.
//!
//! - [`routing`]: vanilla, pruned and two-phase routers.
//! - [`latency`]: the per-expert roofline cost model and latency fits.
//! - [`moe`]: a small SwiGLU MoE layer for measuring output drift.
//! - [`sim`]: decode-trace simulation, padding study, sweeps and Pareto fronts.
//! - [`oracle`]: brute-force references used by the test suites.
//! - [`cli`]: the `oea` command-line front end.

pub mod cli;
pub mod error;
pub mod latency;
pub mod moe;
pub mod oracle;
pub mod routing;
pub mod sim;

pub use error::{OeaError, Result};
pub use latency::{
    estimate_speedup, expected_active_experts, expert_latency, fit_linear, moe_latency, FitResult,
    LatencyObservation, LatencyParams,
};
pub use moe::{
    expert_forward, moe_forward, output_divergence, router_scores, ExpertParams, LayerDims, Matrix,
    MoeLayerParams, TokenBatch,
};
pub use routing::{
    batch_stats, phase1_baseline, phase2_piggyback, route, route_topk, sort_experts, BatchStats,
    CapSemantics, Phase1Result, RoutingConfig, RoutingMode, RoutingPlan, ScoreMatrix,
    SortedExperts,
};

//! Workload simulation: synthetic scores, decode traces, padding, sweeps.

pub mod decode;
pub mod padding;
pub mod rng;
pub mod scores;
pub mod sweep;

pub use decode::{
    simulate_decode, write_trace_csv, DecodeTrace, SimOptions, StepRecord, TraceSummary,
};
pub use padding::{padding_experiment, PaddingReport, PaddingVariant};
pub use scores::{
    gen_embeddings, gen_pad_row, gen_scores, read_score_records, write_score_records, GenKind,
    ReplayTrace, ScoreGenConfig, ScoreRecord,
};
pub use sweep::{
    default_grid, pareto_frontier, pareto_indices, read_sweep_csv, simplified_grid, sweep,
    write_sweep_csv, Rounding, SweepPoint,
};

//! Hyperparameter sweeps and Pareto frontiers over
//! (mean activated experts, quality delta).

use std::cmp::Ordering;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{OeaError, Result};
use crate::latency::LatencyParams;
use crate::routing::{CapSemantics, RoutingConfig, RoutingMode};
use crate::sim::decode::{simulate_decode, SimOptions};
use crate::sim::scores::ScoreGenConfig;

pub const SWEEP_VERSION: u32 = 1;

/// Bin sizes for snapping sweep points before plotting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rounding {
    pub active_experts_bin: f64,
    pub quality_bin: f64,
}

impl Default for Rounding {
    fn default() -> Self {
        Self {
            active_experts_bin: 0.1,
            quality_bin: 0.005,
        }
    }
}

fn snap(x: f64, bin: f64) -> f64 {
    if bin > 0.0 {
        // dividing by the inverse keeps decimal bins like 0.1 printing cleanly
        (x / bin).round() / (1.0 / bin)
    } else {
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub config: RoutingConfig,
    pub mean_active_experts: f64,
    pub mean_latency_us: f64,
    pub normalized_latency: f64,
    /// Mean toy-layer output divergence against vanilla (a proxy for quality
    /// loss). `None` when no toy layer was supplied.
    pub quality_delta: Option<f64>,
    pub rounded_active_experts: Option<f64>,
    pub rounded_quality_delta: Option<f64>,
}

impl SweepPoint {
    /// Objectives used for dominance; a missing quality delta counts as 0.
    pub fn objectives(&self) -> (f64, f64) {
        (self.mean_active_experts, self.quality_delta.unwrap_or(0.0))
    }

    pub fn apply_rounding(&mut self, r: &Rounding) {
        self.rounded_active_experts = Some(snap(self.mean_active_experts, r.active_experts_bin));
        self.rounded_quality_delta = self.quality_delta.map(|q| snap(q, r.quality_bin));
    }
}

/// Runs one simulation per config on identical scores.
pub fn sweep(
    gen: &ScoreGenConfig,
    grid: &[RoutingConfig],
    latency: &LatencyParams,
    opts: &SimOptions<'_>,
    rounding: Option<&Rounding>,
) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(OeaError::InvalidInput("sweep grid is empty".into()));
    }
    grid.iter()
        .map(|cfg| {
            let s = simulate_decode(gen, cfg, latency, opts)?.summary;
            let mut point = SweepPoint {
                config: *cfg,
                mean_active_experts: s.mean_active_experts,
                mean_latency_us: s.mean_latency_us,
                normalized_latency: s.normalized_latency,
                quality_delta: s.mean_divergence,
                rounded_active_experts: None,
                rounded_quality_delta: None,
            };
            if let Some(r) = rounding {
                point.apply_rounding(r);
            }
            Ok(point)
        })
        .collect()
}

/// Indices of the non-dominated points (minimizing both coordinates), ordered
/// by the first coordinate, then the second, then index.
///
/// `a` dominates `b` when it is no worse on both and strictly better on one,
/// so exact duplicates never eliminate each other.
pub fn pareto_indices(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (points[i], points[j]);
        a.0.total_cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(i.cmp(&j))
    });
    let mut keep = Vec::new();
    let mut best_prev = f64::INFINITY;
    let mut g = 0;
    while g < order.len() {
        let x = points[order[g]].0;
        let mut end = g;
        while end < order.len() && points[order[end]].0.total_cmp(&x) == Ordering::Equal {
            end += 1;
        }
        // within a run of equal x only the minimal y survive, and only if no
        // point with smaller x reached that y
        let y_min = points[order[g]].1;
        if y_min < best_prev {
            keep.extend(
                order[g..end]
                    .iter()
                    .copied()
                    .take_while(|&i| points[i].1.total_cmp(&y_min) == Ordering::Equal),
            );
            best_prev = y_min;
        }
        g = end;
    }
    keep
}

/// Non-dominated sweep points, sorted by mean activated experts.
pub fn pareto_frontier(points: &[SweepPoint]) -> Vec<SweepPoint> {
    let objs: Vec<_> = points.iter().map(SweepPoint::objectives).collect();
    pareto_indices(&objs)
        .into_iter()
        .map(|i| points[i].clone())
        .collect()
}

/// The ablation grid scaled to a pool of `n_experts` and model top-`k`.
///
/// At `N = 128, k = 8` this is `k0 ∈ {4..8}`, `k_max ∈ {7..11}`,
/// `p ∈ {0.4, 0.5, …, 1}`, `max_p ∈ {8, 16, 32, 128}`, plus pruned runs over
/// the same `(k0, p)` and the vanilla reference. Elsewhere `k0` spans
/// `⌈k/2⌉..k`, `k_max` spans `k-1..k+3`, and scan ranks scale by `N/128`.
/// Invalid combinations (e.g. `k_max < k0`) are dropped.
pub fn default_grid(n_experts: usize, k: usize) -> Vec<RoutingConfig> {
    let ps = [0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
    let k0s: Vec<usize> = (k.div_ceil(2).max(1)..=k).collect();
    let kmaxs: Vec<usize> = (k.saturating_sub(1).max(1)..=k + 3).collect();
    let mut maxps: Vec<usize> = [8usize, 16, 32, 128]
        .iter()
        .map(|&r| (r * n_experts).div_ceil(128).clamp(1, n_experts))
        .collect();
    maxps.dedup();

    let mut grid = vec![RoutingConfig::vanilla(k)];
    for &k0 in &k0s {
        for &p in &ps {
            grid.push(RoutingConfig::pruned(k0, p));
        }
    }
    for &k0 in &k0s {
        for &k_max in &kmaxs {
            for &p in &ps {
                for &max_p in &maxps {
                    grid.push(RoutingConfig::oea(k0, p, k_max, max_p));
                }
            }
        }
    }
    grid.retain(|c| c.validate(n_experts).is_ok());
    grid
}

/// Vanilla plus pruned and simplified runs for every `k0` in `1..=k`.
pub fn simplified_grid(n_experts: usize, k: usize) -> Vec<RoutingConfig> {
    let mut grid = vec![RoutingConfig::vanilla(k)];
    for k0 in 1..=k {
        grid.push(RoutingConfig::pruned(k0, 1.0));
        grid.push(RoutingConfig::simplified(k0, k, n_experts));
    }
    grid.retain(|c| c.validate(n_experts).is_ok());
    grid
}

#[derive(Debug, Serialize, Deserialize)]
struct SweepRow {
    label: String,
    mode: String,
    k0: usize,
    p: f64,
    k_max: usize,
    max_p: usize,
    cap: String,
    mean_active_experts: f64,
    mean_latency_us: f64,
    normalized_latency: f64,
    quality_delta: Option<f64>,
    rounded_active_experts: Option<f64>,
    rounded_quality_delta: Option<f64>,
}

fn mode_name(mode: RoutingMode) -> &'static str {
    match mode {
        RoutingMode::Vanilla { .. } => "vanilla",
        RoutingMode::Pruned => "pruned",
        RoutingMode::Oea => "oea",
        RoutingMode::SimplifiedOea => "simplified",
    }
}

fn cap_name(cap: CapSemantics) -> &'static str {
    match cap {
        CapSemantics::ExactCap => "exact",
        CapSemantics::PseudocodeStrict => "pseudocode",
    }
}

/// Writes sweep points as CSV, preceded by a `# oea.sweep v1` line.
pub fn write_sweep_csv<W: Write>(mut writer: W, points: &[SweepPoint]) -> Result<()> {
    writeln!(writer, "# oea.sweep v{SWEEP_VERSION}")?;
    let mut wtr = csv::Writer::from_writer(writer);
    for pt in points {
        let c = &pt.config;
        wtr.serialize(SweepRow {
            label: c.label(),
            mode: mode_name(c.mode).into(),
            k0: c.k0,
            p: c.p,
            k_max: c.k_max,
            max_p: c.max_p,
            cap: cap_name(c.cap).into(),
            mean_active_experts: pt.mean_active_experts,
            mean_latency_us: pt.mean_latency_us,
            normalized_latency: pt.normalized_latency,
            quality_delta: pt.quality_delta,
            rounded_active_experts: pt.rounded_active_experts,
            rounded_quality_delta: pt.rounded_quality_delta,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads sweep CSV written by [`write_sweep_csv`]. Errors name the 0-based data row.
pub fn read_sweep_csv<R: Read>(reader: R) -> Result<Vec<SweepPoint>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<SweepRow>().enumerate() {
        let bad = |reason: String| OeaError::InvalidScores { row: i, reason };
        let row = rec.map_err(|e| bad(format!("bad sweep row: {e}")))?;
        let mode = match row.mode.as_str() {
            "vanilla" => RoutingMode::Vanilla { k: row.k_max },
            "pruned" => RoutingMode::Pruned,
            "oea" => RoutingMode::Oea,
            "simplified" => RoutingMode::SimplifiedOea,
            other => return Err(bad(format!("unknown mode {other:?}"))),
        };
        let cap = match row.cap.as_str() {
            "exact" => CapSemantics::ExactCap,
            "pseudocode" => CapSemantics::PseudocodeStrict,
            other => return Err(bad(format!("unknown cap {other:?}"))),
        };
        let finite = [row.mean_active_experts, row.quality_delta.unwrap_or(0.0)]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(bad("objectives must be finite".into()));
        }
        out.push(SweepPoint {
            config: RoutingConfig {
                k0: row.k0,
                p: row.p,
                k_max: row.k_max,
                max_p: row.max_p,
                mode,
                cap,
            },
            mean_active_experts: row.mean_active_experts,
            mean_latency_us: row.mean_latency_us,
            normalized_latency: row.normalized_latency,
            quality_delta: row.quality_delta,
            rounded_active_experts: row.rounded_active_experts,
            rounded_quality_delta: row.rounded_quality_delta,
        });
    }
    Ok(out)
}

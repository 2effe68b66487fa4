//! Batch-aware expert routing.
//!
//! Every router here maps a batch of score rows (one row per token, each row
//! on the probability simplex) to per-token expert sets plus renormalized
//! mixture weights. Expert indices are 0-based throughout.
//!
//! Routing proceeds in two phases:
//!
//! 1. **Baseline.** Token `i` keeps its top `n_i = min(k0, t_i)` experts, where
//!    `t_i` is the shortest prefix of its sorted scores whose mass reaches `p`.
//!    The union of all baselines is the set of experts the batch must fetch.
//! 2. **Piggybacking.** Each token walks further down its preference list and
//!    adopts any expert already in that union, up to `k_max` experts and rank
//!    `max_p`. This never grows the union, so the number of activated experts
//!    is fixed by phase 1.
//!
//! All functions are pure; ties between equal scores are broken by ascending
//! expert index.

use serde::{Deserialize, Serialize};

use crate::error::{OeaError, Result};

/// Tolerance for a score row to count as lying on the simplex.
pub const SIMPLEX_TOL: f64 = 1e-6;

/// Selected-score mass at or below this cannot be renormalized.
pub const DEGENERATE_MASS: f64 = 1e-12;

/// Router scores for one batch: `n_tokens` rows of `n_experts` values.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    n_tokens: usize,
    n_experts: usize,
    values: Vec<f64>,
    mask: Option<Vec<bool>>,
}

impl ScoreMatrix {
    /// Builds a matrix from row-major values. All rows are treated as real tokens.
    pub fn new(n_tokens: usize, n_experts: usize, values: Vec<f64>) -> Result<Self> {
        Self::with_mask(n_tokens, n_experts, values, None)
    }

    /// Builds a matrix with an optional padding mask (`true` = real token).
    ///
    /// Masked rows must still be finite and nonnegative but need not sum to one.
    pub fn with_mask(
        n_tokens: usize,
        n_experts: usize,
        values: Vec<f64>,
        mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        if n_tokens == 0 || n_experts == 0 {
            return Err(OeaError::InvalidInput(format!(
                "score matrix must be non-empty, got {n_tokens}x{n_experts}"
            )));
        }
        if values.len() != n_tokens * n_experts {
            return Err(OeaError::InvalidInput(format!(
                "expected {} values for {n_tokens}x{n_experts}, got {}",
                n_tokens * n_experts,
                values.len()
            )));
        }
        if let Some(m) = &mask {
            if m.len() != n_tokens {
                return Err(OeaError::InvalidInput(format!(
                    "mask has {} entries for {n_tokens} rows",
                    m.len()
                )));
            }
        }
        for (row, chunk) in values.chunks_exact(n_experts).enumerate() {
            for (expert, &v) in chunk.iter().enumerate() {
                if !v.is_finite() {
                    return Err(OeaError::InvalidScores {
                        row,
                        reason: format!("non-finite score at expert {expert}"),
                    });
                }
                if v < 0.0 {
                    return Err(OeaError::InvalidScores {
                        row,
                        reason: format!("negative score {v} at expert {expert}"),
                    });
                }
            }
            let real = mask.as_ref().is_none_or(|m| m[row]);
            if real {
                let sum: f64 = chunk.iter().sum();
                if (sum - 1.0).abs() > SIMPLEX_TOL {
                    return Err(OeaError::InvalidScores {
                        row,
                        reason: format!("scores sum to {sum}, expected 1"),
                    });
                }
            }
        }
        Ok(Self {
            n_tokens,
            n_experts,
            values,
            mask,
        })
    }

    /// Builds a matrix from a list of rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_tokens = rows.len();
        let n_experts = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n_experts) {
            return Err(OeaError::InvalidScores {
                row: i,
                reason: format!("row has {} scores, expected {n_experts}", r.len()),
            });
        }
        Self::new(n_tokens, n_experts, rows.concat())
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn n_experts(&self) -> usize {
        self.n_experts
    }

    pub fn row(&self, token: usize) -> &[f64] {
        &self.values[token * self.n_experts..(token + 1) * self.n_experts]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_experts)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    /// Whether `token` is a real (unmasked) token.
    pub fn is_real(&self, token: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[token])
    }

    /// Number of unmasked rows.
    pub fn real_tokens(&self) -> usize {
        (0..self.n_tokens).filter(|&i| self.is_real(i)).count()
    }
}

/// Which router to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RoutingMode {
    /// Plain top-k.
    Vanilla { k: usize },
    /// Phase 1 only: adaptive top-`k0`, no piggybacking.
    Pruned,
    /// Both phases with all four hyperparameters.
    Oea,
    /// Both phases with `p = 1`, `max_p = N` and `k_max` equal to the model's `k`.
    SimplifiedOea,
}

/// How the per-token cardinality cap is enforced during piggybacking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapSemantics {
    /// Stop once a token holds `k_max` experts.
    #[default]
    ExactCap,
    /// Break only once `|S_i| > k_max`, checked before each candidate. Sets can
    /// reach `k_max + 1`.
    PseudocodeStrict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingConfig {
    pub k0: usize,
    pub p: f64,
    pub k_max: usize,
    pub max_p: usize,
    pub mode: RoutingMode,
    #[serde(default)]
    pub cap: CapSemantics,
}

impl RoutingConfig {
    /// Plain top-`k` routing.
    pub fn vanilla(k: usize) -> Self {
        Self {
            k0: k,
            p: 1.0,
            k_max: k,
            max_p: k,
            mode: RoutingMode::Vanilla { k },
            cap: CapSemantics::ExactCap,
        }
    }

    /// Baseline selection only.
    pub fn pruned(k0: usize, p: f64) -> Self {
        Self {
            k0,
            p,
            k_max: k0,
            max_p: k0,
            mode: RoutingMode::Pruned,
            cap: CapSemantics::ExactCap,
        }
    }

    /// Full two-phase routing.
    pub fn oea(k0: usize, p: f64, k_max: usize, max_p: usize) -> Self {
        Self {
            k0,
            p,
            k_max,
            max_p,
            mode: RoutingMode::Oea,
            cap: CapSemantics::ExactCap,
        }
    }

    /// Two-phase routing parameterized by `k0` alone; `k` is the model's
    /// default experts per token and `n_experts` the pool size.
    pub fn simplified(k0: usize, k: usize, n_experts: usize) -> Self {
        Self {
            k0,
            p: 1.0,
            k_max: k,
            max_p: n_experts,
            mode: RoutingMode::SimplifiedOea,
            cap: CapSemantics::ExactCap,
        }
    }

    pub fn with_cap(mut self, cap: CapSemantics) -> Self {
        self.cap = cap;
        self
    }

    /// Checks the config against a pool of `n_experts`.
    pub fn validate(&self, n_experts: usize) -> Result<()> {
        let bad = |msg: String| Err(OeaError::InvalidConfig(msg));
        if let RoutingMode::Vanilla { k } = self.mode {
            if k == 0 || k > n_experts {
                return bad(format!("k={k} must lie in [1, {n_experts}]"));
            }
            return Ok(());
        }
        if self.k0 == 0 || self.k0 > n_experts {
            return bad(format!("k0={} must lie in [1, {n_experts}]", self.k0));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return bad(format!("p={} must lie in (0, 1]", self.p));
        }
        if self.k_max < self.k0 || self.k_max > n_experts {
            return bad(format!(
                "k_max={} must lie in [k0={}, {n_experts}]",
                self.k_max, self.k0
            ));
        }
        if self.max_p == 0 || self.max_p > n_experts {
            return bad(format!("max_p={} must lie in [1, {n_experts}]", self.max_p));
        }
        if self.mode == RoutingMode::SimplifiedOea {
            if self.p != 1.0 {
                return bad(format!("simplified mode requires p=1, got {}", self.p));
            }
            if self.max_p != n_experts {
                return bad(format!(
                    "simplified mode requires max_p={n_experts}, got {}",
                    self.max_p
                ));
            }
        }
        Ok(())
    }

    /// Short human-readable label, e.g. `oea(k0=4,p=1,kmax=8,maxp=128)`.
    pub fn label(&self) -> String {
        match self.mode {
            RoutingMode::Vanilla { k } => format!("vanilla(k={k})"),
            RoutingMode::Pruned => format!("pruned(k0={},p={})", self.k0, self.p),
            RoutingMode::Oea => format!(
                "oea(k0={},p={},kmax={},maxp={})",
                self.k0, self.p, self.k_max, self.max_p
            ),
            RoutingMode::SimplifiedOea => {
                format!("simplified(k0={},k={})", self.k0, self.k_max)
            }
        }
    }
}

/// Per-token expert preference order, descending by score.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortedExperts {
    n_experts: usize,
    order: Vec<usize>,
}

impl SortedExperts {
    /// Experts of `token` from most to least preferred.
    pub fn row(&self, token: usize) -> &[usize] {
        &self.order[token * self.n_experts..(token + 1) * self.n_experts]
    }

    pub fn n_tokens(&self) -> usize {
        self.order.len() / self.n_experts
    }

    pub fn n_experts(&self) -> usize {
        self.n_experts
    }
}

/// Ranks every token's experts by descending score, ties by ascending index.
pub fn sort_experts(scores: &ScoreMatrix) -> SortedExperts {
    let n = scores.n_experts();
    let mut order = Vec::with_capacity(scores.n_tokens() * n);
    let mut idx: Vec<usize> = Vec::with_capacity(n);
    for row in scores.rows() {
        idx.clear();
        idx.extend(0..n);
        // sort_by is stable, so equal scores keep ascending index order
        idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        order.extend_from_slice(&idx);
    }
    SortedExperts {
        n_experts: n,
        order,
    }
}

/// Output of the baseline phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase1Result {
    /// Shortest prefix length reaching mass `p` (0 for masked tokens).
    pub t: Vec<usize>,
    /// Baseline size `min(k0, t_i)` (0 for masked tokens).
    pub n: Vec<usize>,
    /// Each token's baseline, in preference order.
    pub base_sets: Vec<Vec<usize>>,
    /// Union of the unmasked baselines, ascending.
    pub base_union: Vec<usize>,
}

impl Phase1Result {
    pub fn base_count(&self) -> usize {
        self.base_union.len()
    }
}

fn mass_prefix_len(row: &[f64], order: &[usize], p: f64) -> usize {
    if p >= 1.0 {
        // cumulative float sums may fall just short of 1
        return order.len();
    }
    let mut acc = 0.0;
    for (j, &e) in order.iter().enumerate() {
        acc += row[e];
        if acc >= p {
            return j + 1;
        }
    }
    order.len()
}

/// Selects each token's baseline experts and their union.
pub fn phase1_baseline(
    scores: &ScoreMatrix,
    sorted: &SortedExperts,
    cfg: &RoutingConfig,
) -> Result<Phase1Result> {
    cfg.validate(scores.n_experts())?;
    check_sorted(scores, sorted)?;
    let n_experts = scores.n_experts();
    let b = scores.n_tokens();
    let mut t = vec![0; b];
    let mut n = vec![0; b];
    let mut base_sets = vec![Vec::new(); b];
    let mut in_union = vec![false; n_experts];
    for i in 0..b {
        if !scores.is_real(i) {
            continue;
        }
        let order = sorted.row(i);
        t[i] = mass_prefix_len(scores.row(i), order, cfg.p);
        n[i] = cfg.k0.min(t[i]);
        base_sets[i] = order[..n[i]].to_vec();
        for &e in &base_sets[i] {
            in_union[e] = true;
        }
    }
    let base_union = members(&in_union);
    Ok(Phase1Result {
        t,
        n,
        base_sets,
        base_union,
    })
}

/// Extends each baseline with experts already in the batch union.
///
/// Returns per-token sets in preference order; weights are assigned by [`route`].
pub fn phase2_piggyback(
    sorted: &SortedExperts,
    phase1: &Phase1Result,
    cfg: &RoutingConfig,
) -> Vec<Vec<usize>> {
    let n_experts = sorted.n_experts();
    let mut in_union = vec![false; n_experts];
    for &e in &phase1.base_union {
        in_union[e] = true;
    }
    let scan_end = cfg.max_p.min(n_experts);
    phase1
        .base_sets
        .iter()
        .enumerate()
        .map(|(i, base)| {
            let mut set = base.clone();
            if set.is_empty() {
                return set;
            }
            let order = sorted.row(i);
            for &e in order.iter().take(scan_end).skip(phase1.n[i]) {
                let full = match cfg.cap {
                    CapSemantics::ExactCap => set.len() >= cfg.k_max,
                    CapSemantics::PseudocodeStrict => set.len() > cfg.k_max,
                };
                if full {
                    break;
                }
                if in_union[e] {
                    set.push(e);
                }
            }
            set
        })
        .collect()
}

/// Final routing decision for a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingPlan {
    pub n_experts: usize,
    /// Per-token experts in descending score order; empty for padding.
    pub sets: Vec<Vec<usize>>,
    /// Mixture weights aligned with `sets`.
    pub weights: Vec<Vec<f64>>,
    /// Experts with at least one token, ascending.
    pub active_union: Vec<usize>,
    /// Number of activated experts `T`.
    pub active_count: usize,
    /// Tokens routed to each expert.
    pub loads: Vec<u32>,
    /// Padding mask carried over from the scores (`true` = real).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<bool>>,
}

impl RoutingPlan {
    fn assemble(scores: &ScoreMatrix, sets: Vec<Vec<usize>>) -> Result<Self> {
        let n_experts = scores.n_experts();
        let mut loads = vec![0u32; n_experts];
        let mut weights = Vec::with_capacity(sets.len());
        for (i, set) in sets.iter().enumerate() {
            if set.is_empty() {
                weights.push(Vec::new());
                continue;
            }
            let row = scores.row(i);
            let mass: f64 = set.iter().map(|&e| row[e]).sum();
            if mass <= DEGENERATE_MASS {
                return Err(OeaError::DegenerateWeights {
                    token: i,
                    sum: mass,
                });
            }
            weights.push(set.iter().map(|&e| row[e] / mass).collect());
            for &e in set {
                loads[e] += 1;
            }
        }
        let active_union: Vec<usize> = (0..n_experts).filter(|&e| loads[e] > 0).collect();
        Ok(Self {
            n_experts,
            active_count: active_union.len(),
            sets,
            weights,
            active_union,
            loads,
            mask: scores.mask().map(<[bool]>::to_vec),
        })
    }

    pub fn n_tokens(&self) -> usize {
        self.sets.len()
    }

    pub fn is_real(&self, token: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[token])
    }

    /// Sum of set sizes, equal to the sum of loads.
    pub fn total_load(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }
}

/// Routes every real token to its top `k` experts.
pub fn route_topk(scores: &ScoreMatrix, k: usize) -> Result<RoutingPlan> {
    if k == 0 || k > scores.n_experts() {
        return Err(OeaError::InvalidInput(format!(
            "k={k} must lie in [1, {}]",
            scores.n_experts()
        )));
    }
    let sorted = sort_experts(scores);
    let sets = (0..scores.n_tokens())
        .map(|i| {
            if scores.is_real(i) {
                sorted.row(i)[..k].to_vec()
            } else {
                Vec::new()
            }
        })
        .collect();
    RoutingPlan::assemble(scores, sets)
}

/// Runs the router selected by `cfg.mode` and renormalizes the original
/// scores over each token's final set.
pub fn route(scores: &ScoreMatrix, cfg: &RoutingConfig) -> Result<RoutingPlan> {
    cfg.validate(scores.n_experts())?;
    if let RoutingMode::Vanilla { k } = cfg.mode {
        return route_topk(scores, k);
    }
    let sorted = sort_experts(scores);
    let phase1 = phase1_baseline(scores, &sorted, cfg)?;
    let sets = match cfg.mode {
        RoutingMode::Pruned => phase1.base_sets,
        _ => phase2_piggyback(&sorted, &phase1, cfg),
    };
    RoutingPlan::assemble(scores, sets)
}

/// Load summary for a plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchStats {
    pub active_count: usize,
    pub loads: Vec<u32>,
    pub total_load: usize,
}

pub fn batch_stats(plan: &RoutingPlan) -> BatchStats {
    let mut loads = vec![0u32; plan.n_experts];
    for set in &plan.sets {
        for &e in set {
            loads[e] += 1;
        }
    }
    BatchStats {
        active_count: loads.iter().filter(|&&c| c > 0).count(),
        total_load: loads.iter().map(|&c| c as usize).sum(),
        loads,
    }
}

fn members(flags: &[bool]) -> Vec<usize> {
    flags
        .iter()
        .enumerate()
        .filter_map(|(e, &on)| on.then_some(e))
        .collect()
}

fn check_sorted(scores: &ScoreMatrix, sorted: &SortedExperts) -> Result<()> {
    if sorted.n_experts() != scores.n_experts() || sorted.n_tokens() != scores.n_tokens() {
        return Err(OeaError::DimensionMismatch(format!(
            "sorted order is {}x{}, scores are {}x{}",
            sorted.n_tokens(),
            sorted.n_experts(),
            scores.n_tokens(),
            scores.n_experts()
        )));
    }
    Ok(())
}

//! Brute-force references for validating the production router.
//!
//! Nothing here calls into [`crate::routing`]'s algorithms: preference order
//! comes from a selection sort, sets are plain vectors searched linearly, and
//! the piggybacking loop is written out with 1-based ranks. Only the data
//! types are shared.

// index loops mirror the written-out algorithm on purpose
#![allow(clippy::needless_range_loop)]

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{OeaError, Result};
use crate::routing::{route, CapSemantics, RoutingConfig, RoutingMode, RoutingPlan, ScoreMatrix};
use crate::sim::rng::{stream, Domain};

/// Reference plan plus the phase-1 state it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRouting {
    pub plan: RoutingPlan,
    /// Per-token baseline sets (the top-k for vanilla).
    pub base_sets: Vec<Vec<usize>>,
    /// Union of baselines in insertion order.
    pub base_union: Vec<usize>,
}

/// Descending preference via repeated selection of the highest remaining
/// score; the lowest index wins ties.
fn preference(row: &[f64]) -> Vec<usize> {
    let mut taken = vec![false; row.len()];
    let mut out = Vec::with_capacity(row.len());
    for _ in 0..row.len() {
        let mut best: Option<usize> = None;
        for e in 0..row.len() {
            if taken[e] {
                continue;
            }
            best = match best {
                Some(b) if row[b] >= row[e] => Some(b),
                _ => Some(e),
            };
        }
        let b = best.expect("row not exhausted");
        taken[b] = true;
        out.push(b);
    }
    out
}

/// Literal transcription of both phases, one token at a time.
pub fn reference_route_detailed(
    scores: &ScoreMatrix,
    cfg: &RoutingConfig,
) -> Result<ReferenceRouting> {
    cfg.validate(scores.n_experts())?;
    let n = scores.n_experts();
    let b = scores.n_tokens();
    // e[i][j-1] is token i's j-th choice
    let e: Vec<Vec<usize>> = (0..b).map(|i| preference(scores.row(i))).collect();

    // Phase 1
    let mut n_base = vec![0usize; b];
    let mut base_sets: Vec<Vec<usize>> = vec![Vec::new(); b];
    for i in 0..b {
        if !scores.is_real(i) {
            continue;
        }
        let r = scores.row(i);
        n_base[i] = match cfg.mode {
            RoutingMode::Vanilla { k } => k,
            RoutingMode::SimplifiedOea => cfg.k0,
            RoutingMode::Pruned | RoutingMode::Oea => {
                let t_i = if cfg.p == 1.0 {
                    n
                } else {
                    let mut t = n;
                    for t_prime in 1..=n {
                        let mass: f64 = (1..=t_prime).map(|j| r[e[i][j - 1]]).sum();
                        if mass >= cfg.p {
                            t = t_prime;
                            break;
                        }
                    }
                    t
                };
                cfg.k0.min(t_i)
            }
        };
        for j in 1..=n_base[i] {
            base_sets[i].push(e[i][j - 1]);
        }
    }
    let mut base_union: Vec<usize> = Vec::new();
    for set in &base_sets {
        for &x in set {
            if !base_union.contains(&x) {
                base_union.push(x);
            }
        }
    }

    // Phase 2
    let (scan_to, cap) = match cfg.mode {
        RoutingMode::Vanilla { .. } | RoutingMode::Pruned => (0, 0),
        RoutingMode::SimplifiedOea => (n, cfg.k_max),
        RoutingMode::Oea => (cfg.max_p, cfg.k_max),
    };
    let mut sets = base_sets.clone();
    for i in 0..b {
        if base_sets[i].is_empty() {
            continue;
        }
        let mut j = n_base[i] + 1;
        while j <= scan_to {
            let stop = match cfg.cap {
                CapSemantics::PseudocodeStrict => sets[i].len() > cap,
                CapSemantics::ExactCap => sets[i].len() >= cap,
            };
            if stop {
                break;
            }
            let cand = e[i][j - 1];
            if base_union.contains(&cand) {
                sets[i].push(cand);
            }
            j += 1;
        }
    }

    // Weights and aggregates
    let mut weights = Vec::with_capacity(b);
    let mut loads = vec![0u32; n];
    for (i, set) in sets.iter().enumerate() {
        let r = scores.row(i);
        let mut mass = 0.0;
        for &x in set {
            mass += r[x];
        }
        if !set.is_empty() && mass <= 1e-12 {
            return Err(OeaError::DegenerateWeights {
                token: i,
                sum: mass,
            });
        }
        weights.push(set.iter().map(|&x| r[x] / mass).collect());
        for &x in set {
            loads[x] += 1;
        }
    }
    let mut active_union = Vec::new();
    for x in 0..n {
        if loads[x] > 0 {
            active_union.push(x);
        }
    }
    Ok(ReferenceRouting {
        plan: RoutingPlan {
            n_experts: n,
            active_count: active_union.len(),
            sets,
            weights,
            active_union,
            loads,
            mask: scores.mask().map(<[bool]>::to_vec),
        },
        base_sets,
        base_union,
    })
}

/// Reference plan for `cfg`.
pub fn reference_route(scores: &ScoreMatrix, cfg: &RoutingConfig) -> Result<RoutingPlan> {
    reference_route_detailed(scores, cfg).map(|r| r.plan)
}

/// Monte-Carlo estimate of distinct experts hit when `b` tokens each pick a
/// uniform `k`-subset of `n`. Returns `(mean, standard error)`.
pub fn mc_expected_active_experts(
    n: usize,
    k: usize,
    b: usize,
    trials: usize,
    seed: u64,
) -> (f64, f64) {
    assert!(trials >= 1 && k >= 1 && k <= n);
    let counts: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = stream(seed, Domain::MonteCarlo, [trial, 0, 0]);
            let mut hit = vec![false; n];
            let mut pool: Vec<usize> = (0..n).collect();
            for _ in 0..b {
                // partial Fisher-Yates: the first k slots become a uniform k-subset
                for slot in 0..k {
                    let pick = rng.gen_range(slot..n);
                    pool.swap(slot, pick);
                    hit[pool[slot]] = true;
                }
            }
            hit.iter().filter(|&&h| h).count() as f64
        })
        .collect();
    let m = counts.iter().sum::<f64>() / trials as f64;
    if trials == 1 {
        return (m, 0.0);
    }
    let var = counts.iter().map(|c| (c - m).powi(2)).sum::<f64>() / (trials as f64 - 1.0);
    (m, (var / trials as f64).sqrt())
}

/// One failed check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counterexample {
    pub invariant: String,
    pub config: RoutingConfig,
    pub scores: Vec<Vec<f64>>,
    pub mask: Option<Vec<bool>>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub instances: u64,
    pub failure_count: u64,
    /// The first few failures, in enumeration order.
    pub failures: Vec<Counterexample>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failure_count == 0
    }

    /// Whether any failure concerns `invariant`.
    pub fn flags(&self, invariant: &str) -> bool {
        self.failures.iter().any(|f| f.invariant == invariant)
    }
}

const KEEP_FAILURES: usize = 32;

/// Every way to write `total` as an ordered sum of `parts` nonnegative integers.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Score rows on the simplex lattice with spacing `1/denom`.
pub fn lattice_rows(n: usize, denom: usize) -> Vec<Vec<f64>> {
    compositions(denom, n)
        .into_iter()
        .map(|c| c.into_iter().map(|v| v as f64 / denom as f64).collect())
        .collect()
}

/// Every valid config for a pool of `n`, with `p` on the given grid.
pub fn config_grid(n: usize, ps: &[f64]) -> Vec<RoutingConfig> {
    let caps = [CapSemantics::ExactCap, CapSemantics::PseudocodeStrict];
    let mut out = Vec::new();
    for k in 1..=n {
        out.push(RoutingConfig::vanilla(k));
    }
    for k0 in 1..=n {
        for &p in ps {
            out.push(RoutingConfig::pruned(k0, p));
        }
        for k in k0..=n {
            for cap in caps {
                out.push(RoutingConfig::simplified(k0, k, n).with_cap(cap));
            }
        }
        for k_max in k0..=n {
            for max_p in 1..=n {
                for &p in ps {
                    for cap in caps {
                        out.push(RoutingConfig::oea(k0, p, k_max, max_p).with_cap(cap));
                    }
                }
            }
        }
    }
    out.retain(|c| c.validate(n).is_ok());
    out
}

/// Checks one routed instance against the reference and the routing
/// invariants, appending any violations.
fn check_instance(
    router: &(dyn Fn(&ScoreMatrix, &RoutingConfig) -> Result<RoutingPlan> + Sync),
    scores: &ScoreMatrix,
    cfg: &RoutingConfig,
    out: &mut Vec<(String, String)>,
) {
    let mut fail = |inv: &str, detail: String| out.push((inv.to_string(), detail));
    let reference = match reference_route_detailed(scores, cfg) {
        Ok(r) => r,
        Err(e) => return fail("reference", e.to_string()),
    };
    let plan = match router(scores, cfg) {
        Ok(p) => p,
        Err(e) => return fail("routes", e.to_string()),
    };

    if plan.sets != reference.plan.sets
        || plan.active_union != reference.plan.active_union
        || plan.loads != reference.plan.loads
        || plan.active_count != reference.plan.active_count
    {
        fail(
            "oracle_equivalence",
            format!(
                "sets {:?} vs reference {:?}",
                plan.sets, reference.plan.sets
            ),
        );
    } else {
        let close = plan
            .weights
            .iter()
            .flatten()
            .zip(reference.plan.weights.iter().flatten())
            .all(|(a, b)| (a - b).abs() <= 1e-12);
        if !close {
            fail("oracle_equivalence", "weights differ".into());
        }
    }

    let mut base_sorted = reference.base_union.clone();
    base_sorted.sort_unstable();
    if plan.active_union != base_sorted {
        fail(
            "conservation",
            format!("active {:?} vs base {:?}", plan.active_union, base_sorted),
        );
    }

    let limit = match (cfg.mode, cfg.cap) {
        (RoutingMode::Vanilla { k }, _) => k,
        (RoutingMode::Pruned, _) => cfg.k0,
        (_, CapSemantics::ExactCap) => cfg.k_max,
        (_, CapSemantics::PseudocodeStrict) => cfg.k_max + 1,
    };
    for (i, set) in plan.sets.iter().enumerate() {
        if set.len() > limit {
            fail("cap", format!("token {i} holds {} > {limit}", set.len()));
        }
        let mut seen = set.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != set.len() {
            fail("distinct", format!("token {i} repeats an expert"));
        }
        if !matches!(cfg.mode, RoutingMode::Vanilla { .. })
            && !reference.base_sets[i].iter().all(|x| set.contains(x))
        {
            fail("baseline", format!("token {i} lost a baseline expert"));
        }
        if scores.is_real(i) {
            let sum: f64 = plan.weights[i].iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                fail("weights", format!("token {i} weights sum to {sum}"));
            }
        } else if !set.is_empty() || !plan.weights[i].is_empty() {
            fail("padding", format!("masked token {i} was routed"));
        }
    }

    if matches!(cfg.mode, RoutingMode::Oea | RoutingMode::SimplifiedOea) {
        let pruned = RoutingConfig::pruned(cfg.k0, cfg.p);
        match router(scores, &pruned) {
            Ok(p) if p.active_count == plan.active_count => {}
            Ok(p) => fail(
                "monotone_union",
                format!("pruned T={} vs T={}", p.active_count, plan.active_count),
            ),
            Err(e) => fail("routes", e.to_string()),
        }
    }
}

fn masks(b: usize) -> Vec<Vec<bool>> {
    (0..1u32 << b)
        .map(|bits| (0..b).map(|i| bits & (1 << i) == 0).collect())
        .collect()
}

/// Exhaustive check of [`route`] against [`reference_route`] on every score
/// matrix with rows on the `1/denom` simplex lattice, for `N ≤ max_n`,
/// `B ≤ max_b`, every padding mask, and every valid config with `p` on the
/// same lattice.
pub fn exhaustive_small_check(max_n: usize, max_b: usize, denom: usize) -> CheckReport {
    exhaustive_small_check_with(max_n, max_b, denom, &route)
}

/// Like [`exhaustive_small_check`] but for an arbitrary router.
pub fn exhaustive_small_check_with(
    max_n: usize,
    max_b: usize,
    denom: usize,
    router: &(dyn Fn(&ScoreMatrix, &RoutingConfig) -> Result<RoutingPlan> + Sync),
) -> CheckReport {
    assert!(
        max_n <= 6 && max_b <= 3 && denom >= 1,
        "enumeration too large"
    );
    let ps: Vec<f64> = (1..=denom).map(|j| j as f64 / denom as f64).collect();
    let mut instances = 0u64;
    let mut failure_count = 0u64;
    let mut failures = Vec::new();

    for n in 1..=max_n {
        let rows = lattice_rows(n, denom);
        let configs = config_grid(n, &ps);
        for b in 1..=max_b {
            for mask in masks(b) {
                let all_real = mask.iter().all(|&m| m);
                // masked rows never influence routing, so pin them to row 0
                let free: Vec<usize> = (0..b).filter(|&i| mask[i]).collect();
                let combos = rows.len().pow(free.len() as u32);
                let results: Vec<(u64, Vec<Counterexample>, u64)> = (0..combos)
                    .into_par_iter()
                    .map(|mut code| {
                        let mut chosen = vec![0usize; b];
                        for &i in &free {
                            chosen[i] = code % rows.len();
                            code /= rows.len();
                        }
                        let matrix_rows: Vec<Vec<f64>> =
                            chosen.iter().map(|&r| rows[r].clone()).collect();
                        let scores = ScoreMatrix::with_mask(
                            b,
                            n,
                            matrix_rows.concat(),
                            (!all_real).then(|| mask.clone()),
                        )
                        .expect("lattice rows lie on the simplex");
                        let mut local = Vec::new();
                        let mut count = 0u64;
                        let mut buf = Vec::new();
                        for cfg in &configs {
                            buf.clear();
                            check_instance(router, &scores, cfg, &mut buf);
                            count += buf.len() as u64;
                            for (invariant, detail) in buf.drain(..) {
                                if local.len() < KEEP_FAILURES {
                                    local.push(Counterexample {
                                        invariant,
                                        config: *cfg,
                                        scores: matrix_rows.clone(),
                                        mask: scores.mask().map(<[bool]>::to_vec),
                                        detail,
                                    });
                                }
                            }
                        }
                        (configs.len() as u64, local, count)
                    })
                    .collect();
                for (inst, local, count) in results {
                    instances += inst;
                    failure_count += count;
                    for f in local {
                        if failures.len() < KEEP_FAILURES {
                            failures.push(f);
                        }
                    }
                }
            }
        }
    }
    CheckReport {
        instances,
        failure_count,
        failures,
    }
}

/// Random cross-check: `instances` score matrices with `N ≤ max_n`,
/// `B ≤ max_b`, Dirichlet-like rows with occasional exact ties and padding,
/// each routed under a random valid config.
pub fn randomized_check(
    instances: usize,
    max_n: usize,
    max_b: usize,
    seed: u64,
    router: &(dyn Fn(&ScoreMatrix, &RoutingConfig) -> Result<RoutingPlan> + Sync),
) -> CheckReport {
    let results: Vec<(Vec<Counterexample>, u64)> = (0..instances as u64)
        .into_par_iter()
        .map(|idx| {
            let mut rng = stream(seed, Domain::Noise, [idx, 0, 0]);
            let (scores, cfg) = random_instance(&mut rng, max_n, max_b);
            let mut buf = Vec::new();
            check_instance(router, &scores, &cfg, &mut buf);
            let count = buf.len() as u64;
            let rows: Vec<Vec<f64>> = scores.rows().map(<[f64]>::to_vec).collect();
            let ces = buf
                .into_iter()
                .take(KEEP_FAILURES)
                .map(|(invariant, detail)| Counterexample {
                    invariant,
                    config: cfg,
                    scores: rows.clone(),
                    mask: scores.mask().map(<[bool]>::to_vec),
                    detail,
                })
                .collect();
            (ces, count)
        })
        .collect();
    let mut failures = Vec::new();
    let mut failure_count = 0;
    for (ces, count) in results {
        failure_count += count;
        for c in ces {
            if failures.len() < KEEP_FAILURES {
                failures.push(c);
            }
        }
    }
    CheckReport {
        instances: instances as u64,
        failure_count,
        failures,
    }
}

/// A random score matrix and a random valid config for it.
pub fn random_instance(
    rng: &mut impl Rng,
    max_n: usize,
    max_b: usize,
) -> (ScoreMatrix, RoutingConfig) {
    let n = rng.gen_range(1..=max_n);
    let b = rng.gen_range(1..=max_b);
    // a coarse grid in some rows forces exact ties
    let coarse = rng.gen_bool(0.3);
    let mut values = Vec::with_capacity(n * b);
    for _ in 0..b {
        let mut row: Vec<f64> = (0..n)
            .map(|_| {
                if coarse {
                    f64::from(rng.gen_range(0u32..4))
                } else {
                    -rng.gen::<f64>().max(1e-300).ln()
                }
            })
            .collect();
        let s: f64 = row.iter().sum();
        if s == 0.0 {
            row[rng.gen_range(0..n)] = 1.0;
        } else {
            row.iter_mut().for_each(|v| *v /= s);
        }
        values.extend(row);
    }
    let mask = if b > 1 && rng.gen_bool(0.2) {
        Some((0..b).map(|_| rng.gen_bool(0.75)).collect())
    } else {
        None
    };
    let scores = ScoreMatrix::with_mask(b, n, values, mask).expect("rows normalized");

    let cap = if rng.gen_bool(0.5) {
        CapSemantics::ExactCap
    } else {
        CapSemantics::PseudocodeStrict
    };
    let k0 = rng.gen_range(1..=n);
    let p = if rng.gen_bool(0.4) {
        1.0
    } else {
        rng.gen_range(0.05..1.0)
    };
    let cfg = match rng.gen_range(0..4) {
        0 => RoutingConfig::vanilla(rng.gen_range(1..=n)),
        1 => RoutingConfig::pruned(k0, p),
        2 => RoutingConfig::oea(k0, p, rng.gen_range(k0..=n), rng.gen_range(1..=n)).with_cap(cap),
        _ => RoutingConfig::simplified(k0, rng.gen_range(k0..=n), n).with_cap(cap),
    };
    (scores, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preference_breaks_ties_by_index() {
        assert_eq!(preference(&[0.25; 4]), vec![0, 1, 2, 3]);
        assert_eq!(preference(&[0.1, 0.25, 0.6, 0.05]), vec![2, 1, 0, 3]);
        assert_eq!(preference(&[0.2, 0.4, 0.2, 0.2]), vec![1, 0, 2, 3]);
    }

    #[test]
    fn hand_example() {
        let s = ScoreMatrix::from_rows(&[vec![0.5, 0.3, 0.15, 0.05], vec![0.1, 0.25, 0.6, 0.05]])
            .unwrap();
        let r = reference_route_detailed(&s, &RoutingConfig::oea(1, 1.0, 2, 4)).unwrap();
        assert_eq!(r.plan.sets, vec![vec![0, 2], vec![2, 0]]);
        assert_eq!(r.base_union, vec![0, 2]);
    }

    #[test]
    fn vanilla_reference_is_topk() {
        let s = ScoreMatrix::from_rows(&[vec![0.1, 0.4, 0.2, 0.3]]).unwrap();
        let r = reference_route(&s, &RoutingConfig::vanilla(2)).unwrap();
        assert_eq!(r.sets, vec![vec![1, 3]]);
        assert!((r.weights[0][0] - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn lattice_sizes() {
        assert_eq!(lattice_rows(1, 8).len(), 1);
        assert_eq!(lattice_rows(2, 8).len(), 9);
        assert_eq!(lattice_rows(4, 8).len(), 165);
        assert!(lattice_rows(3, 8)
            .iter()
            .all(|r| (r.iter().sum::<f64>() - 1.0).abs() == 0.0));
    }

    #[test]
    fn mc_edges() {
        assert_eq!(mc_expected_active_experts(16, 4, 1, 50, 1), (4.0, 0.0));
        let (m, se) = mc_expected_active_experts(16, 16, 3, 20, 1);
        assert_eq!((m, se), (16.0, 0.0));
    }

    #[test]
    fn tiny_exhaustive_single_token() {
        let report = exhaustive_small_check(2, 1, 8);
        assert!(report.passed(), "{:?}", report.failures.first());
        assert!(report.instances > 0);
    }
}

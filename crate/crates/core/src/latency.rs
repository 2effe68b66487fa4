//! Memory-bound latency model for one MoE block.
//!
//! An expert serving `n > 0` tokens costs `a·n + b` microseconds: `b` to
//! stream its weights in and `a` per token of compute. Idle experts cost
//! nothing, so a block's latency is `b·T + a·Σcnt` where `T` counts the
//! experts with any load.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{OeaError, Result};
use crate::routing::RoutingPlan;

/// Roofline coefficients, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyParams {
    /// Per token-expert compute.
    pub a: f64,
    /// Per expert weight fetch.
    pub b: f64,
}

impl LatencyParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || a < 0.0 || b < 0.0 {
            return Err(OeaError::InvalidInput(format!(
                "latency coefficients must be finite and nonnegative, got a={a}, b={b}"
            )));
        }
        if a == 0.0 && b == 0.0 {
            return Err(OeaError::InvalidInput(
                "latency coefficients cannot both be zero".into(),
            ));
        }
        Ok(Self { a, b })
    }
}

/// One measured or simulated `(T, latency)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyObservation {
    pub active_experts: u32,
    pub latency_us: f64,
}

/// Ordinary least-squares fit of latency against activated experts.
///
/// The slope estimates the per-expert fetch cost; the intercept absorbs the
/// compute term and any fixed per-block overhead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub residual_std: f64,
    pub slope_std_err: f64,
    pub intercept_std_err: f64,
    pub n_obs: usize,
}

/// Latency of one expert serving `n` tokens.
pub fn expert_latency(n: u32, params: &LatencyParams) -> f64 {
    if n == 0 {
        0.0
    } else {
        params.a * f64::from(n) + params.b
    }
}

/// Latency of a whole block given each expert's token count.
pub fn moe_latency(loads: &[u32], params: &LatencyParams) -> f64 {
    loads.iter().map(|&c| expert_latency(c, params)).sum()
}

/// Expected number of distinct experts hit by `b` tokens each picking `k`
/// of `n` uniformly at random: `n·(1 − (1 − k/n)^b)`.
pub fn expected_active_experts(n: usize, k: usize, b: usize) -> f64 {
    assert!(k >= 1 && k <= n, "need 1 <= k <= n");
    let miss = 1.0 - k as f64 / n as f64;
    n as f64 * (1.0 - miss.powi(b as i32))
}

/// Fits `latency = slope·T + intercept` by ordinary least squares.
pub fn fit_linear(observations: &[LatencyObservation]) -> Result<FitResult> {
    let n = observations.len();
    if n < 2 {
        return Err(OeaError::Fit(format!(
            "need at least 2 observations, got {n}"
        )));
    }
    let nf = n as f64;
    let mean_x = observations
        .iter()
        .map(|o| f64::from(o.active_experts))
        .sum::<f64>()
        / nf;
    let mean_y = observations.iter().map(|o| o.latency_us).sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for o in observations {
        let dx = f64::from(o.active_experts) - mean_x;
        let dy = o.latency_us - mean_y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(OeaError::Fit(
            "all observations share one activated-expert count".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = observations
        .iter()
        .map(|o| {
            let r = o.latency_us - (slope * f64::from(o.active_experts) + intercept);
            r * r
        })
        .sum();
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    let (residual_std, slope_std_err, intercept_std_err) = if n > 2 {
        let s2 = ss_res / (nf - 2.0);
        let se_slope = (s2 / sxx).sqrt();
        let se_int = (s2 * (1.0 / nf + mean_x * mean_x / sxx)).sqrt();
        (s2.sqrt(), se_slope, se_int)
    } else {
        (0.0, 0.0, 0.0)
    };
    Ok(FitResult {
        slope,
        intercept,
        r_squared,
        residual_std,
        slope_std_err,
        intercept_std_err,
        n_obs: n,
    })
}

/// Ratio of modeled latencies, `plan_a / plan_b`.
pub fn estimate_speedup(
    plan_a: &RoutingPlan,
    plan_b: &RoutingPlan,
    params: &LatencyParams,
) -> Result<f64> {
    if plan_a.n_experts != plan_b.n_experts {
        return Err(OeaError::DimensionMismatch(format!(
            "plans cover {} and {} experts",
            plan_a.n_experts, plan_b.n_experts
        )));
    }
    let denom = moe_latency(&plan_b.loads, params);
    if denom == 0.0 {
        return Err(OeaError::UndefinedRatio);
    }
    Ok(moe_latency(&plan_a.loads, params) / denom)
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationRow {
    active_experts: u32,
    latency_us: f64,
}

/// Reads `(active_experts, latency_us)` CSV with a header row. Lines starting
/// with `#` are ignored.
pub fn read_observations_csv<R: Read>(reader: R) -> Result<Vec<LatencyObservation>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<ObservationRow>().enumerate() {
        let row = rec.map_err(|e| OeaError::InvalidScores {
            row: i,
            reason: format!("bad observation: {e}"),
        })?;
        if !row.latency_us.is_finite() || row.latency_us < 0.0 {
            return Err(OeaError::InvalidScores {
                row: i,
                reason: format!(
                    "latency must be finite and nonnegative, got {}",
                    row.latency_us
                ),
            });
        }
        out.push(LatencyObservation {
            active_experts: row.active_experts,
            latency_us: row.latency_us,
        });
    }
    Ok(out)
}

pub fn write_observations_csv<W: Write>(writer: W, obs: &[LatencyObservation]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for o in obs {
        wtr.serialize(ObservationRow {
            active_experts: o.active_experts,
            latency_us: o.latency_us,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::routing::{route_topk, ScoreMatrix};

    fn obs(t: u32, y: f64) -> LatencyObservation {
        LatencyObservation {
            active_experts: t,
            latency_us: y,
        }
    }

    #[test]
    fn expert_cost() {
        let p = LatencyParams::new(0.0, 1.0).unwrap();
        assert_eq!(expert_latency(0, &p), 0.0);
        assert_eq!(expert_latency(5, &p), 1.0);
        let p = LatencyParams::new(2.0, 10.0).unwrap();
        assert_eq!(expert_latency(3, &p), 16.0);
    }

    #[test]
    fn block_cost() {
        let p = LatencyParams::new(1.0, 10.0).unwrap();
        assert_eq!(moe_latency(&[0, 0, 0, 0], &p), 0.0);
        assert_eq!(moe_latency(&[1, 1, 0, 0], &p), 22.0);
    }

    #[test]
    fn params_reject_bad_values() {
        assert!(LatencyParams::new(0.0, 0.0).is_err());
        assert!(LatencyParams::new(-1.0, 1.0).is_err());
        assert!(LatencyParams::new(1.0, f64::NAN).is_err());
    }

    #[test]
    fn expected_experts_edges() {
        assert!((expected_active_experts(128, 8, 16) - 82.422_511_302_170_5).abs() < 1e-9);
        assert_eq!(expected_active_experts(128, 8, 1), 8.0);
        assert_eq!(expected_active_experts(16, 16, 5), 16.0);
    }

    #[test]
    fn exact_line_fit() {
        let data: Vec<_> = (8..=128)
            .step_by(8)
            .map(|t| obs(t, 3.0 * t as f64 + 7.0))
            .collect();
        let fit = fit_linear(&data).unwrap();
        assert!((fit.slope - 3.0).abs() < 1e-9 * 3.0);
        assert!((fit.intercept - 7.0).abs() < 1e-9 * 7.0);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_point_fit() {
        let fit = fit_linear(&[obs(8, 30.0), obs(16, 50.0)]).unwrap();
        assert!((fit.slope - 2.5).abs() < 1e-12);
        assert!((fit.intercept - 10.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_design() {
        assert!(matches!(
            fit_linear(&[obs(8, 30.0), obs(8, 31.0)]),
            Err(OeaError::Fit(_))
        ));
        assert!(fit_linear(&[obs(8, 30.0)]).is_err());
    }

    #[test]
    fn speedup_ratios() {
        let s = ScoreMatrix::from_rows(&[vec![0.4, 0.3, 0.2, 0.1]]).unwrap();
        let plan = route_topk(&s, 2).unwrap();
        let p = LatencyParams::new(1.0, 3.0).unwrap();
        assert_eq!(estimate_speedup(&plan, &plan, &p).unwrap(), 1.0);

        let mk = |t: usize| RoutingPlan {
            n_experts: 50,
            sets: vec![],
            weights: vec![],
            active_union: (0..t).collect(),
            active_count: t,
            loads: (0..50).map(|e| u32::from(e < t)).collect(),
            mask: None,
        };
        let fetch_only = LatencyParams::new(0.0, 1.0).unwrap();
        assert!((estimate_speedup(&mk(25), &mk(50), &fetch_only).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(
            estimate_speedup(&mk(25), &mk(0), &fetch_only),
            Err(OeaError::UndefinedRatio)
        ));

        // compute-bound: same total load, different T
        let compute_only = LatencyParams::new(1.0, 0.0).unwrap();
        let mut wide = mk(4);
        wide.loads = vec![1; 4];
        wide.n_experts = 4;
        let mut narrow = wide.clone();
        narrow.loads = vec![2, 2, 0, 0];
        assert_eq!(
            estimate_speedup(&wide, &narrow, &compute_only).unwrap(),
            1.0
        );
    }

    #[test]
    fn observation_csv_roundtrip_and_errors() {
        let data = vec![obs(8, 30.5), obs(16, 50.25)];
        let mut buf = Vec::new();
        write_observations_csv(&mut buf, &data).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("active_experts,latency_us\n"));
        assert_eq!(read_observations_csv(buf.as_slice()).unwrap(), data);

        let bad = "active_experts,latency_us\n8,1.0\n9,-2\n";
        assert!(matches!(
            read_observations_csv(bad.as_bytes()),
            Err(OeaError::InvalidScores { row: 1, .. })
        ));
    }
}

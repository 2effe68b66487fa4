//! Synthetic router scores and the ndjson score-trace format.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{OeaError, Result};
use crate::moe::{l1_normalize, softmax, Matrix, TokenBatch};
use crate::routing::ScoreMatrix;
use crate::sim::rng::{stream, Domain};

pub const SCORE_TRACE_VERSION: u32 = 1;

/// Where score rows come from.
#[derive(Debug, Clone, PartialEq)]
pub enum GenKind {
    /// Each row drawn i.i.d. from a symmetric Dirichlet.
    Dirichlet { alpha: f64 },
    /// Token `i` belongs to group `i % groups`. Its logits are
    /// `concentration · template[group] + spread · noise`, with the template
    /// fixed per (layer, group) and the noise drawn per token.
    Clustered {
        groups: usize,
        concentration: f64,
        spread: f64,
    },
    /// Rows read back from a score trace.
    Replay(ReplayTrace),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGenConfig {
    pub kind: GenKind,
    pub n_experts: usize,
    pub batch: usize,
    pub steps: usize,
    pub layers: usize,
    pub seed: u64,
}

impl ScoreGenConfig {
    pub fn dirichlet(alpha: f64, n_experts: usize, batch: usize, steps: usize, seed: u64) -> Self {
        Self {
            kind: GenKind::Dirichlet { alpha },
            n_experts,
            batch,
            steps,
            layers: 1,
            seed,
        }
    }

    pub fn with_layers(mut self, layers: usize) -> Self {
        self.layers = layers;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_experts == 0 || self.batch == 0 || self.steps == 0 || self.layers == 0 {
            return Err(OeaError::InvalidInput(format!(
                "experts, batch, steps and layers must all be >= 1 (got {}, {}, {}, {})",
                self.n_experts, self.batch, self.steps, self.layers
            )));
        }
        match &self.kind {
            GenKind::Dirichlet { alpha } if !(alpha.is_finite() && *alpha > 0.0) => Err(
                OeaError::InvalidInput(format!("dirichlet alpha must be > 0, got {alpha}")),
            ),
            GenKind::Clustered {
                groups,
                concentration,
                spread,
            } => {
                if *groups == 0 {
                    return Err(OeaError::InvalidInput("groups must be >= 1".into()));
                }
                if !(concentration.is_finite() && spread.is_finite())
                    || *concentration < 0.0
                    || *spread < 0.0
                {
                    return Err(OeaError::InvalidInput(format!(
                        "concentration and spread must be finite and >= 0, got {concentration}, {spread}"
                    )));
                }
                Ok(())
            }
            GenKind::Replay(trace) => {
                if trace.n_experts != self.n_experts || trace.n_tokens != self.batch {
                    return Err(OeaError::InvalidInput(format!(
                        "replay trace is {}x{}, config expects {}x{}",
                        trace.n_tokens, trace.n_experts, self.batch, self.n_experts
                    )));
                }
                for step in 0..self.steps {
                    for layer in 0..self.layers {
                        if !trace.records.contains_key(&(step, layer)) {
                            return Err(OeaError::InvalidInput(format!(
                                "replay trace has no record for step {step}, layer {layer}"
                            )));
                        }
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// JSON description for provenance echoes.
    pub fn describe(&self) -> serde_json::Value {
        let kind = match &self.kind {
            GenKind::Dirichlet { alpha } => {
                serde_json::json!({"kind": "dirichlet", "alpha": alpha})
            }
            GenKind::Clustered {
                groups,
                concentration,
                spread,
            } => serde_json::json!({
                "kind": "clustered",
                "groups": groups,
                "concentration": concentration,
                "spread": spread,
            }),
            GenKind::Replay(t) => serde_json::json!({"kind": "replay", "path": t.path}),
        };
        serde_json::json!({
            "generator": kind,
            "n_experts": self.n_experts,
            "batch": self.batch,
            "steps": self.steps,
            "layers": self.layers,
            "seed": self.seed,
        })
    }
}

fn dirichlet_row(rng: &mut impl Rng, alpha: f64, n: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated");
    let mut row: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    if !l1_normalize(&mut row) {
        // every draw underflowed (tiny alpha); fall back to a one-hot row
        let hot = rng.gen_range(0..n);
        row.iter_mut()
            .enumerate()
            .for_each(|(e, v)| *v = f64::from(e == hot));
    }
    row
}

fn gaussian_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn clustered_logits(
    cfg: &ScoreGenConfig,
    layer: usize,
    token: usize,
    noise_key: (Domain, [u64; 3]),
    width: usize,
    template_slot: u64,
    groups: usize,
    concentration: f64,
    spread: f64,
) -> Vec<f64> {
    let group = (token % groups) as u64;
    let mut t_rng = stream(
        cfg.seed,
        Domain::GroupTemplate,
        [layer as u64, group, template_slot],
    );
    let template = gaussian_vec(&mut t_rng, width);
    let mut n_rng = stream(cfg.seed, noise_key.0, noise_key.1);
    let noise = gaussian_vec(&mut n_rng, width);
    template
        .iter()
        .zip(&noise)
        .map(|(t, z)| concentration * t + spread * z)
        .collect()
}

/// One synthetic score row for `token` at `(step, layer)`.
fn gen_row(cfg: &ScoreGenConfig, step: usize, layer: usize, token: usize) -> Result<Vec<f64>> {
    let key = [step as u64, layer as u64, token as u64];
    let n = cfg.n_experts;
    match &cfg.kind {
        GenKind::Dirichlet { alpha } => {
            let mut rng = stream(cfg.seed, Domain::Scores, key);
            Ok(dirichlet_row(&mut rng, *alpha, n))
        }
        GenKind::Clustered {
            groups,
            concentration,
            spread,
        } => {
            let logits = clustered_logits(
                cfg,
                layer,
                token,
                (Domain::Scores, key),
                n,
                0,
                *groups,
                *concentration,
                *spread,
            );
            let mut row = vec![0.0; n];
            softmax(&logits, &mut row);
            Ok(row)
        }
        GenKind::Replay(trace) => {
            let m = trace.get(step, layer)?;
            Ok(m.row(token).to_vec())
        }
    }
}

/// Score matrix for `(step, layer)`, deterministic in `cfg.seed`.
pub fn gen_scores(cfg: &ScoreGenConfig, step: usize, layer: usize) -> Result<ScoreMatrix> {
    if let GenKind::Replay(trace) = &cfg.kind {
        return trace.get(step, layer).cloned();
    }
    let mut values = Vec::with_capacity(cfg.batch * cfg.n_experts);
    for token in 0..cfg.batch {
        values.extend(gen_row(cfg, step, layer, token)?);
    }
    ScoreMatrix::new(cfg.batch, cfg.n_experts, values)
}

/// A Dirichlet(1) row standing in for an unmasked padding token.
pub fn gen_pad_row(cfg: &ScoreGenConfig, step: usize, layer: usize, slot: usize) -> Vec<f64> {
    let mut rng = stream(
        cfg.seed,
        Domain::Padding,
        [step as u64, layer as u64, slot as u64],
    );
    dirichlet_row(&mut rng, 1.0, cfg.n_experts)
}

/// Token embeddings for driving a toy layer at `(step, layer)`.
///
/// Dirichlet configs give i.i.d. standard normal embeddings; clustered configs
/// reuse the group/noise structure in embedding space. Replay traces carry
/// scores only and are rejected.
pub fn gen_embeddings(
    cfg: &ScoreGenConfig,
    step: usize,
    layer: usize,
    d_model: usize,
) -> Result<TokenBatch> {
    let mut data = Vec::with_capacity(cfg.batch * d_model);
    for token in 0..cfg.batch {
        let key = [step as u64, layer as u64, token as u64];
        match &cfg.kind {
            GenKind::Dirichlet { .. } => {
                let mut rng = stream(cfg.seed, Domain::Embedding, key);
                data.extend(gaussian_vec(&mut rng, d_model));
            }
            GenKind::Clustered {
                groups,
                concentration,
                spread,
            } => data.extend(clustered_logits(
                cfg,
                layer,
                token,
                (Domain::Embedding, key),
                d_model,
                1,
                *groups,
                *concentration,
                *spread,
            )),
            GenKind::Replay(_) => {
                return Err(OeaError::InvalidInput(
                    "replayed score traces carry no embeddings; a toy layer needs a synthetic generator"
                        .into(),
                ))
            }
        }
    }
    TokenBatch::new(Matrix::from_vec(cfg.batch, d_model, data)?)
}

/// One line of a score trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub version: u32,
    pub step: usize,
    pub layer: usize,
    pub scores: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<bool>>,
}

impl ScoreRecord {
    pub fn from_matrix(step: usize, layer: usize, m: &ScoreMatrix) -> Self {
        Self {
            version: SCORE_TRACE_VERSION,
            step,
            layer,
            scores: m.rows().map(<[f64]>::to_vec).collect(),
            mask: m.mask().map(<[bool]>::to_vec),
        }
    }

    pub fn to_matrix(&self) -> Result<ScoreMatrix> {
        let b = self.scores.len();
        let n = self.scores.first().map_or(0, Vec::len);
        if let Some((i, r)) = self.scores.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(OeaError::InvalidScores {
                row: i,
                reason: format!("row has {} scores, expected {n}", r.len()),
            });
        }
        ScoreMatrix::with_mask(b, n, self.scores.concat(), self.mask.clone())
    }
}

/// Parses an ndjson score trace. Errors name the 0-based record and row.
pub fn read_score_records<R: BufRead>(reader: R) -> Result<Vec<(ScoreRecord, ScoreMatrix)>> {
    let mut out = Vec::new();
    let mut index = 0usize;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScoreRecord = serde_json::from_str(&line)
            .map_err(|e| OeaError::Format(format!("record {index}: {e}")))?;
        if rec.version != SCORE_TRACE_VERSION {
            return Err(OeaError::Format(format!(
                "record {index}: unsupported score trace version {}",
                rec.version
            )));
        }
        let m = rec
            .to_matrix()
            .map_err(|e| OeaError::Format(format!("record {index}: {e}")))?;
        out.push((rec, m));
        index += 1;
    }
    if out.is_empty() {
        return Err(OeaError::Format("score trace is empty".into()));
    }
    Ok(out)
}

pub fn write_score_records<W: Write>(mut writer: W, records: &[ScoreRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Score matrices indexed by `(step, layer)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayTrace {
    pub path: String,
    pub n_tokens: usize,
    pub n_experts: usize,
    pub records: BTreeMap<(usize, usize), ScoreMatrix>,
}

impl ReplayTrace {
    pub fn from_reader<R: BufRead>(path: &str, reader: R) -> Result<Self> {
        let parsed = read_score_records(reader)?;
        let n_tokens = parsed[0].1.n_tokens();
        let n_experts = parsed[0].1.n_experts();
        let mut records = BTreeMap::new();
        for (i, (rec, m)) in parsed.into_iter().enumerate() {
            if m.n_tokens() != n_tokens || m.n_experts() != n_experts {
                return Err(OeaError::Format(format!(
                    "record {i}: shape {}x{} differs from first record {n_tokens}x{n_experts}",
                    m.n_tokens(),
                    m.n_experts()
                )));
            }
            if records.insert((rec.step, rec.layer), m).is_some() {
                return Err(OeaError::Format(format!(
                    "record {i}: duplicate step {} layer {}",
                    rec.step, rec.layer
                )));
            }
        }
        Ok(Self {
            path: path.to_string(),
            n_tokens,
            n_experts,
            records,
        })
    }

    pub fn get(&self, step: usize, layer: usize) -> Result<&ScoreMatrix> {
        self.records.get(&(step, layer)).ok_or_else(|| {
            OeaError::InvalidInput(format!("replay trace has no step {step}, layer {layer}"))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::routing::sort_experts;

    #[test]
    fn dirichlet_rows_are_on_simplex_and_deterministic() {
        let cfg = ScoreGenConfig::dirichlet(1.0, 32, 4, 1, 9);
        let a = gen_scores(&cfg, 3, 0).unwrap();
        let b = gen_scores(&cfg, 3, 0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_scores(&cfg, 4, 0).unwrap());
        for row in a.rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn huge_alpha_is_nearly_uniform() {
        let cfg = ScoreGenConfig::dirichlet(1e6, 16, 3, 1, 1);
        let s = gen_scores(&cfg, 0, 0).unwrap();
        assert!(s.values().iter().all(|v| (v - 1.0 / 16.0).abs() < 1e-2));
    }

    #[test]
    fn tiny_alpha_still_yields_valid_rows() {
        let cfg = ScoreGenConfig::dirichlet(1e-4, 16, 8, 1, 1);
        let s = gen_scores(&cfg, 0, 0).unwrap();
        assert_eq!(s.n_tokens(), 8);
    }

    #[test]
    fn one_group_without_spread_shares_order() {
        let cfg = ScoreGenConfig {
            kind: GenKind::Clustered {
                groups: 1,
                concentration: 2.0,
                spread: 0.0,
            },
            ..ScoreGenConfig::dirichlet(1.0, 24, 6, 1, 5)
        };
        let s = gen_scores(&cfg, 0, 0).unwrap();
        let sorted = sort_experts(&s);
        for i in 1..6 {
            assert_eq!(sorted.row(i), sorted.row(0));
        }
    }

    #[test]
    fn rows_are_independent_of_batch_size() {
        let small = ScoreGenConfig::dirichlet(1.0, 8, 3, 1, 2);
        let large = ScoreGenConfig {
            batch: 5,
            ..small.clone()
        };
        let a = gen_scores(&small, 0, 0).unwrap();
        let b = gen_scores(&large, 0, 0).unwrap();
        assert_eq!(a.values(), &b.values()[..24]);
    }

    #[test]
    fn config_validation() {
        assert!(ScoreGenConfig::dirichlet(0.0, 8, 1, 1, 0)
            .validate()
            .is_err());
        assert!(ScoreGenConfig::dirichlet(1.0, 8, 0, 1, 0)
            .validate()
            .is_err());
        assert!(ScoreGenConfig::dirichlet(1.0, 8, 1, 1, 0)
            .validate()
            .is_ok());
    }

    #[test]
    fn trace_roundtrip_and_replay() {
        let cfg = ScoreGenConfig::dirichlet(1.0, 4, 2, 2, 3);
        let recs: Vec<_> = (0..2)
            .map(|s| ScoreRecord::from_matrix(s, 0, &gen_scores(&cfg, s, 0).unwrap()))
            .collect();
        let mut buf = Vec::new();
        write_score_records(&mut buf, &recs).unwrap();
        let trace = ReplayTrace::from_reader("mem", buf.as_slice()).unwrap();
        let replay = ScoreGenConfig {
            kind: GenKind::Replay(trace),
            ..cfg.clone()
        };
        replay.validate().unwrap();
        assert_eq!(
            gen_scores(&replay, 1, 0).unwrap(),
            gen_scores(&cfg, 1, 0).unwrap()
        );
        let longer = ScoreGenConfig { steps: 3, ..replay };
        assert!(longer.validate().is_err());
    }

    #[test]
    fn malformed_record_names_row() {
        let text = "{\"version\":1,\"step\":0,\"layer\":0,\"scores\":[[0.5,0.5],[1.2,-0.2]]}\n";
        let err = read_score_records(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("record 0") && err.contains("row 1"), "{err}");
    }
}

//! A small dense-weight MoE layer: softmax router plus SwiGLU experts.
//!
//! Used to measure how far a rerouted output drifts from the vanilla top-k
//! output. All arithmetic is `f64`.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{OeaError, Result};
use crate::routing::{RoutingPlan, ScoreMatrix};
use crate::sim::rng::{stream, Domain};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(OeaError::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn check_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(OeaError::InvalidInput(format!(
                "{what} has non-finite entries"
            )))
        }
    }

    /// `x · self` for a row vector `x` of length `rows`.
    fn left_mul(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += xr * w;
            }
        }
    }
}

/// One SwiGLU expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertParams {
    /// D×H
    pub w_gate: Matrix,
    /// D×H
    pub w_up: Matrix,
    /// H×D
    pub w_down: Matrix,
}

impl ExpertParams {
    pub fn d_model(&self) -> usize {
        self.w_gate.rows
    }

    pub fn d_hidden(&self) -> usize {
        self.w_gate.cols
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDims {
    pub d_model: usize,
    pub d_hidden: usize,
    pub n_experts: usize,
}

impl Default for LayerDims {
    fn default() -> Self {
        Self {
            d_model: 64,
            d_hidden: 96,
            n_experts: 16,
        }
    }
}

/// Router plus experts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoeLayerParams {
    pub dims: LayerDims,
    /// D×N
    pub router: Matrix,
    pub experts: Vec<ExpertParams>,
}

/// Token embeddings for one batch, B×D.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    pub embeddings: Matrix,
}

impl TokenBatch {
    pub fn new(embeddings: Matrix) -> Result<Self> {
        embeddings.check_finite("token batch")?;
        Ok(Self { embeddings })
    }

    pub fn n_tokens(&self) -> usize {
        self.embeddings.rows
    }
}

const LAYER_FORMAT: &str = "oea.moe_layer";
const LAYER_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    layer: MoeLayerParams,
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, seed: u64, key: [u64; 3]) -> Matrix {
    let mut rng = stream(seed, Domain::Weights, key);
    let data = (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix { rows, cols, data }
}

impl MoeLayerParams {
    /// Random layer with zero-mean Gaussian entries: router and the two input
    /// projections scaled by `1/√D`, the output projection by `1/√H`.
    pub fn random(dims: LayerDims, seed: u64) -> Result<Self> {
        let LayerDims {
            d_model: d,
            d_hidden: h,
            n_experts: n,
        } = dims;
        if d == 0 || h == 0 || n == 0 {
            return Err(OeaError::InvalidInput(format!(
                "layer dims must be positive: {dims:?}"
            )));
        }
        let in_scale = 1.0 / (d as f64).sqrt();
        let out_scale = 1.0 / (h as f64).sqrt();
        let router = gaussian_matrix(d, n, in_scale, seed, [0, 0, 0]);
        let experts = (0..n as u64)
            .map(|e| ExpertParams {
                w_gate: gaussian_matrix(d, h, in_scale, seed, [1, e, 0]),
                w_up: gaussian_matrix(d, h, in_scale, seed, [1, e, 1]),
                w_down: gaussian_matrix(h, d, out_scale, seed, [1, e, 2]),
            })
            .collect();
        Ok(Self {
            dims,
            router,
            experts,
        })
    }

    /// Checks shapes and finiteness.
    pub fn validate(&self) -> Result<()> {
        let LayerDims {
            d_model: d,
            d_hidden: h,
            n_experts: n,
        } = self.dims;
        let mismatch = |m: String| Err(OeaError::DimensionMismatch(m));
        if self.router.rows != d || self.router.cols != n || self.router.data.len() != d * n {
            return mismatch(format!(
                "router is {}x{}, expected {d}x{n}",
                self.router.rows, self.router.cols
            ));
        }
        if self.experts.len() != n {
            return mismatch(format!("{} experts, expected {n}", self.experts.len()));
        }
        for (i, e) in self.experts.iter().enumerate() {
            let shapes = [
                (&e.w_gate, d, h, "w_gate"),
                (&e.w_up, d, h, "w_up"),
                (&e.w_down, h, d, "w_down"),
            ];
            for (m, r, c, name) in shapes {
                if m.rows != r || m.cols != c || m.data.len() != r * c {
                    return mismatch(format!(
                        "expert {i} {name} is {}x{}, expected {r}x{c}",
                        m.rows, m.cols
                    ));
                }
                m.check_finite(name)?;
            }
        }
        self.router.check_finite("router")
    }

    /// Writes the layer as JSON with a format tag and version.
    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        let file = LayerFile {
            format: LAYER_FORMAT.into(),
            version: LAYER_VERSION,
            layer: self.clone(),
        };
        serde_json::to_writer(writer, &file)?;
        Ok(())
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        let file: LayerFile = serde_json::from_reader(reader)?;
        if file.format != LAYER_FORMAT || file.version != LAYER_VERSION {
            return Err(OeaError::Format(format!(
                "unsupported layer file {} v{}",
                file.format, file.version
            )));
        }
        file.layer.validate()?;
        Ok(file.layer)
    }
}

/// Numerically stable softmax of `logits` into `out`.
pub fn softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Scales a nonnegative row to unit sum. Returns `false` if the row has no mass.
pub fn l1_normalize(row: &mut [f64]) -> bool {
    let sum: f64 = row.iter().sum();
    if sum <= 0.0 || !sum.is_finite() {
        return false;
    }
    row.iter_mut().for_each(|v| *v /= sum);
    true
}

/// Softmax router scores for every token.
pub fn router_scores(layer: &MoeLayerParams, batch: &TokenBatch) -> Result<ScoreMatrix> {
    let d = layer.dims.d_model;
    let n = layer.dims.n_experts;
    if batch.embeddings.cols != d {
        return Err(OeaError::DimensionMismatch(format!(
            "embeddings have width {}, layer expects {d}",
            batch.embeddings.cols
        )));
    }
    let b = batch.n_tokens();
    let mut values = vec![0.0; b * n];
    let mut logits = vec![0.0; n];
    for (i, out) in values.chunks_exact_mut(n).enumerate() {
        layer.router.left_mul(batch.embeddings.row(i), &mut logits);
        softmax(&logits, out);
    }
    ScoreMatrix::new(b, n, values)
}

fn silu(z: f64) -> f64 {
    z / (1.0 + (-z).exp())
}

/// SwiGLU forward: `w_down · (silu(x·w_gate) ⊙ (x·w_up))`.
pub fn expert_forward(expert: &ExpertParams, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != expert.d_model() {
        return Err(OeaError::DimensionMismatch(format!(
            "input has width {}, expert expects {}",
            x.len(),
            expert.d_model()
        )));
    }
    let h = expert.d_hidden();
    let mut gate = vec![0.0; h];
    let mut up = vec![0.0; h];
    expert.w_gate.left_mul(x, &mut gate);
    expert.w_up.left_mul(x, &mut up);
    for (g, u) in gate.iter_mut().zip(&up) {
        *g = silu(*g) * u;
    }
    let mut out = vec![0.0; expert.w_down.cols];
    expert.w_down.left_mul(&gate, &mut out);
    Ok(out)
}

/// Mixture output for every token under `plan`. Padding tokens produce zeros.
pub fn moe_forward(
    layer: &MoeLayerParams,
    batch: &TokenBatch,
    plan: &RoutingPlan,
) -> Result<Matrix> {
    let d = layer.dims.d_model;
    if batch.embeddings.cols != d {
        return Err(OeaError::DimensionMismatch(format!(
            "embeddings have width {}, layer expects {d}",
            batch.embeddings.cols
        )));
    }
    if plan.n_tokens() != batch.n_tokens() || plan.n_experts != layer.dims.n_experts {
        return Err(OeaError::InvalidPlan(format!(
            "plan is {}x{}, batch has {} tokens over {} experts",
            plan.n_tokens(),
            plan.n_experts,
            batch.n_tokens(),
            layer.dims.n_experts
        )));
    }
    let mut out = Matrix::zeros(batch.n_tokens(), d);
    for i in 0..batch.n_tokens() {
        let set = &plan.sets[i];
        if set.is_empty() {
            if plan.is_real(i) {
                return Err(OeaError::InvalidPlan(format!("token {i} has no experts")));
            }
            continue;
        }
        let x = batch.embeddings.row(i);
        let acc = out.row_mut(i);
        for (&e, &w) in set.iter().zip(&plan.weights[i]) {
            let y = expert_forward(&layer.experts[e], x)?;
            for (a, v) in acc.iter_mut().zip(&y) {
                *a += w * v;
            }
        }
    }
    Ok(out)
}

/// Per-token relative L2 error aggregated as (mean, max).
pub fn output_divergence(reference: &Matrix, test: &Matrix) -> Result<(f64, f64)> {
    const EPS: f64 = 1e-12;
    if reference.rows != test.rows || reference.cols != test.cols {
        return Err(OeaError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            reference.rows, reference.cols, test.rows, test.cols
        )));
    }
    if reference.rows == 0 {
        return Ok((0.0, 0.0));
    }
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for i in 0..reference.rows {
        let r = reference.row(i);
        let t = test.row(i);
        let diff = r
            .iter()
            .zip(t)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let norm = r.iter().map(|a| a * a).sum::<f64>().sqrt();
        let rel = diff / norm.max(EPS);
        sum += rel;
        max = max.max(rel);
    }
    Ok((sum / reference.rows as f64, max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::routing::{route, route_topk, RoutingConfig};

    fn small_layer() -> MoeLayerParams {
        MoeLayerParams::random(
            LayerDims {
                d_model: 8,
                d_hidden: 12,
                n_experts: 6,
            },
            7,
        )
        .unwrap()
    }

    fn batch(layer: &MoeLayerParams, b: usize, seed: u64) -> TokenBatch {
        let m = gaussian_matrix(b, layer.dims.d_model, 1.0, seed, [9, 9, 9]);
        TokenBatch::new(m).unwrap()
    }

    #[test]
    fn zero_embedding_gives_uniform_scores() {
        let layer = small_layer();
        let tb = TokenBatch::new(Matrix::zeros(2, 8)).unwrap();
        let s = router_scores(&layer, &tb).unwrap();
        for v in s.values() {
            assert!((v - 1.0 / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dominant_logit_wins() {
        let mut layer = small_layer();
        layer.router.data.iter_mut().for_each(|v| *v = 0.0);
        // x = e_0, router column 3 gets logit +20
        layer.router.data[3] = 20.0;
        let mut x = Matrix::zeros(1, 8);
        x.data[0] = 1.0;
        let s = router_scores(&layer, &TokenBatch::new(x).unwrap()).unwrap();
        assert!(s.row(0)[3] > 0.999);
    }

    #[test]
    fn router_dimension_mismatch() {
        let layer = small_layer();
        let tb = TokenBatch::new(Matrix::zeros(1, 5)).unwrap();
        assert!(matches!(
            router_scores(&layer, &tb),
            Err(OeaError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn swiglu_scalar_case() {
        let one = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let e = ExpertParams {
            w_gate: one.clone(),
            w_up: one.clone(),
            w_down: one,
        };
        let y = expert_forward(&e, &[1.0]).unwrap();
        assert!((y[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert_eq!(expert_forward(&e, &[0.0]).unwrap(), vec![0.0]);
        assert!(expert_forward(&e, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_up_projection_gives_zero() {
        let mut layer = small_layer();
        layer.experts[0].w_up.data.iter_mut().for_each(|v| *v = 0.0);
        let y = expert_forward(&layer.experts[0], &[0.3; 8]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_set_is_dense_mixture() {
        let layer = small_layer();
        let tb = batch(&layer, 3, 1);
        let s = router_scores(&layer, &tb).unwrap();
        let plan = route_topk(&s, 6).unwrap();
        let out = moe_forward(&layer, &tb, &plan).unwrap();
        for i in 0..3 {
            let mut dense = [0.0; 8];
            for e in 0..6 {
                let y = expert_forward(&layer.experts[e], tb.embeddings.row(i)).unwrap();
                for (d, v) in dense.iter_mut().zip(&y) {
                    *d += s.row(i)[e] * v;
                }
            }
            let norm = dense.iter().map(|v| v * v).sum::<f64>().sqrt();
            let diff = dense
                .iter()
                .zip(out.row(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(diff <= 1e-6 * norm);
        }
    }

    #[test]
    fn single_expert_output_ignores_score_magnitude() {
        let layer = small_layer();
        let tb = batch(&layer, 2, 2);
        let s = router_scores(&layer, &tb).unwrap();
        let plan = route(&s, &RoutingConfig::pruned(1, 1.0)).unwrap();
        let out = moe_forward(&layer, &tb, &plan).unwrap();
        for i in 0..2 {
            let y = expert_forward(&layer.experts[plan.sets[i][0]], tb.embeddings.row(i)).unwrap();
            assert_eq!(out.row(i), y.as_slice());
        }
    }

    #[test]
    fn empty_set_for_real_token_is_invalid() {
        let layer = small_layer();
        let tb = batch(&layer, 1, 3);
        let s = router_scores(&layer, &tb).unwrap();
        let mut plan = route_topk(&s, 2).unwrap();
        plan.sets[0].clear();
        plan.weights[0].clear();
        assert!(matches!(
            moe_forward(&layer, &tb, &plan),
            Err(OeaError::InvalidPlan(_))
        ));
    }

    #[test]
    fn divergence_basics() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, -3.0, 0.5]).unwrap();
        assert_eq!(output_divergence(&a, &a).unwrap(), (0.0, 0.0));
        let mut b = a.clone();
        b.data.iter_mut().for_each(|v| *v *= 2.0);
        let (mean, max) = output_divergence(&a, &b).unwrap();
        assert!((mean - 1.0).abs() < 1e-12 && (max - 1.0).abs() < 1e-12);
        assert!(output_divergence(&a, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn divergence_matches_direct_computation() {
        let a = gaussian_matrix(4, 8, 1.0, 11, [0, 1, 2]);
        let b = gaussian_matrix(4, 8, 1.0, 12, [0, 1, 2]);
        let mut rels = Vec::new();
        for i in 0..4 {
            let mut num = 0.0;
            let mut den = 0.0;
            for j in 0..8 {
                let (x, y) = (a.data[i * 8 + j], b.data[i * 8 + j]);
                num += (x - y).powi(2);
                den += x * x;
            }
            rels.push(num.sqrt() / den.sqrt());
        }
        let mean = rels.iter().sum::<f64>() / 4.0;
        let max = rels.iter().cloned().fold(0.0, f64::max);
        let (m, x) = output_divergence(&a, &b).unwrap();
        assert!((m - mean).abs() < 1e-12 && (x - max).abs() < 1e-12);
    }

    #[test]
    fn layer_json_roundtrip() {
        let layer = small_layer();
        let mut buf = Vec::new();
        layer.write_json(&mut buf).unwrap();
        let back = MoeLayerParams::read_json(buf.as_slice()).unwrap();
        assert_eq!(back, layer);

        let mut broken = layer.clone();
        broken.experts.pop();
        let mut buf = Vec::new();
        broken.write_json(&mut buf).unwrap();
        assert!(MoeLayerParams::read_json(buf.as_slice()).is_err());
    }

    #[test]
    fn random_layer_is_seeded() {
        assert_eq!(small_layer(), small_layer());
        let other = MoeLayerParams::random(small_layer().dims, 8).unwrap();
        assert_ne!(other, small_layer());
    }
}

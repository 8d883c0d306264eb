//! Frozen stand-in for the vision-language detector.
//!
//! Text side: a token embedding table, prompt insertion before every class
//! span, and mean pooling into one unit feature per class. Image side:
//! scenes arrive as region features with proposal boxes. The detection
//! head scores region/class pairs by cosine similarity and nudges the
//! proposal box with a frozen linear head; everything is differentiable
//! with respect to the class features.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::boxes::BoxCxCyWH;
use crate::error::{Error, Result};
use crate::numerics::{dot, l2_norm, rng::fnv1a, Matrix, RngStream, StreamName};
use crate::promptgen::{ClassEmbeddingBatch, ClassSpan, PromptSet};

/// Smallest predicted box extent.
pub const MIN_EXTENT: f64 = 1e-3;

/// Frozen head settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub temperature: f64,
    pub center: f64,
    pub box_step: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            temperature: 10.0,
            center: 0.5,
            box_step: 0.2,
        }
    }
}

/// Inference post-processing thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub box_threshold: f64,
    pub text_threshold: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            box_threshold: 0.3,
            text_threshold: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenBackbone {
    dim: usize,
    seed: u64,
    token_table: BTreeMap<String, Vec<f64>>,
    box_head: Matrix,
    head: HeadConfig,
    correction: Option<Vec<f64>>,
}

impl FrozenBackbone {
    pub fn new(
        dim: usize,
        seed: u64,
        token_table: BTreeMap<String, Vec<f64>>,
        box_head: Matrix,
        head: HeadConfig,
    ) -> Result<Self> {
        if box_head.shape() != (4, dim) {
            return Err(Error::shape(format!(
                "box head must be 4x{dim}, got {:?}",
                box_head.shape()
            )));
        }
        if let Some((tok, v)) = token_table.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::shape(format!(
                "token {tok:?} has width {}, expected {dim}",
                v.len()
            )));
        }
        Ok(FrozenBackbone {
            dim,
            seed,
            token_table,
            box_head,
            head,
            correction: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn head(&self) -> HeadConfig {
        self.head
    }

    pub fn box_head(&self) -> &Matrix {
        &self.box_head
    }

    pub fn correction(&self) -> Option<&[f64]> {
        self.correction.as_deref()
    }

    /// A copy whose every token embedding is shifted by `correction`.
    pub fn with_correction(&self, correction: Vec<f64>) -> Result<Self> {
        if correction.len() != self.dim {
            return Err(Error::shape("correction width"));
        }
        let mut out = self.clone();
        out.correction = Some(correction);
        Ok(out)
    }

    /// Embedding of a single token. Unknown tokens hash to a fixed
    /// Normal(0, 1/d) vector.
    pub fn embed_token(&self, token: &str) -> Vec<f64> {
        let mut v = match self.token_table.get(token) {
            Some(v) => v.clone(),
            None => {
                let salt = self.seed ^ fnv1a(token.as_bytes());
                let mut rng = RngStream::from_salt(StreamName::World, salt);
                rng.normal_vec(self.dim, 1.0 / (self.dim as f64).sqrt())
            }
        };
        if let Some(c) = &self.correction {
            v.iter_mut().zip(c).for_each(|(x, d)| *x += d);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub feature: Vec<f64>,
    pub proposal: BoxCxCyWH,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub label: usize,
    pub bbox: BoxCxCyWH,
}

/// Image-encoder output for one image: region features and the annotated objects.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scene {
    pub regions: Vec<Region>,
    pub ground_truth: Vec<GroundTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub region: usize,
    pub class_index: usize,
    pub class_name: String,
    pub bbox: BoxCxCyWH,
    pub score: f64,
    pub similarity: f64,
}

/// Whitespace-tokenize each class name and embed every token.
pub fn encode_classnames(backbone: &FrozenBackbone, class_names: &[String]) -> Result<ClassEmbeddingBatch> {
    if class_names.is_empty() {
        return Err(Error::config("class list is empty"));
    }
    let mut data = Vec::new();
    let mut spans = Vec::with_capacity(class_names.len());
    let mut start = 0;
    for name in class_names {
        let tokens: Vec<&str> = name.split_whitespace().collect();
        if tokens.is_empty() {
            return Err(Error::config(format!("class name {name:?} has no tokens")));
        }
        for t in &tokens {
            data.extend(backbone.embed_token(t));
        }
        spans.push(ClassSpan {
            class_name: name.clone(),
            start,
            len: tokens.len(),
        });
        start += tokens.len();
    }
    ClassEmbeddingBatch::new(Matrix::from_vec(start, backbone.dim(), data)?, spans)
}

/// A class span inside a prompted sequence: `prompt_len` prompt rows at
/// `start`, followed by `token_len` class-token rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptedSpan {
    pub class_name: String,
    pub start: usize,
    pub prompt_len: usize,
    pub token_len: usize,
}

impl PromptedSpan {
    pub fn rows(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.prompt_len + self.token_len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptedSequence {
    pub rows: Matrix,
    pub spans: Vec<PromptedSpan>,
}

/// Insert the prompt block in front of every class span.
pub fn assemble_prompted_embeddings(classes: &ClassEmbeddingBatch, prompts: &PromptSet) -> Result<PromptedSequence> {
    let d = classes.dim();
    let m = prompts.width();
    if m > 0 && prompts.vectors.cols() != d {
        return Err(Error::shape(format!(
            "prompt width {} does not match embedding width {d}",
            prompts.vectors.cols()
        )));
    }
    let total = classes.tokens.rows() + m * classes.n_classes();
    let mut data = Vec::with_capacity(total * d);
    let mut spans = Vec::with_capacity(classes.n_classes());
    for span in &classes.spans {
        let start = data.len() / d.max(1);
        data.extend_from_slice(prompts.vectors.as_slice());
        for r in span.start..span.start + span.len {
            data.extend_from_slice(classes.tokens.row(r));
        }
        spans.push(PromptedSpan {
            class_name: span.class_name.clone(),
            start,
            prompt_len: m,
            token_len: span.len,
        });
    }
    Ok(PromptedSequence {
        rows: Matrix::from_vec(total, d, data)?,
        spans,
    })
}

/// Pooled class features plus what the backward pass needs.
#[derive(Debug, Clone)]
pub struct ClassFeatures {
    pub feats: Matrix,
    norms: Vec<f64>,
}

/// `t̃_c = normalize(mean of class c's prompt and token rows)`.
pub fn class_features(seq: &PromptedSequence) -> Result<ClassFeatures> {
    let d = seq.rows.cols();
    let mut feats = Matrix::zeros(seq.spans.len(), d);
    let mut norms = Vec::with_capacity(seq.spans.len());
    for (c, span) in seq.spans.iter().enumerate() {
        let count = (span.prompt_len + span.token_len) as f64;
        let out = feats.row_mut(c);
        for r in span.rows() {
            out.iter_mut().zip(seq.rows.row(r)).for_each(|(o, x)| *o += x);
        }
        out.iter_mut().for_each(|o| *o /= count);
        let n = l2_norm(out);
        if n.is_nan() || n <= 1e-12 {
            return Err(Error::Degenerate(format!(
                "class {:?} pools to a zero vector",
                span.class_name
            )));
        }
        out.iter_mut().for_each(|o| *o /= n);
        norms.push(n);
    }
    Ok(ClassFeatures { feats, norms })
}

/// Gradient with respect to every row of the prompted sequence.
pub fn class_features_backward(seq: &PromptedSequence, cf: &ClassFeatures, d_feats: &Matrix) -> Result<Matrix> {
    if d_feats.shape() != cf.feats.shape() {
        return Err(Error::shape("class feature gradient shape"));
    }
    let d = seq.rows.cols();
    let mut d_rows = Matrix::zeros(seq.rows.rows(), d);
    for (c, span) in seq.spans.iter().enumerate() {
        let t = cf.feats.row(c);
        let g = d_feats.row(c);
        let proj = dot(t, g);
        let count = (span.prompt_len + span.token_len) as f64;
        let k = 1.0 / (cf.norms[c] * count);
        let d_mean: Vec<f64> = g.iter().zip(t).map(|(gi, ti)| (gi - ti * proj) * k).collect();
        for r in span.rows() {
            d_rows.row_mut(r).copy_from_slice(&d_mean);
        }
    }
    Ok(d_rows)
}

/// Sum the per-block row gradients back onto the shared prompt vectors.
pub fn prompt_gradient(seq: &PromptedSequence, d_rows: &Matrix) -> Matrix {
    let m = seq.spans.first().map_or(0, |s| s.prompt_len);
    let mut out = Matrix::zeros(m, d_rows.cols());
    for span in &seq.spans {
        for k in 0..m {
            out.row_mut(k)
                .iter_mut()
                .zip(d_rows.row(span.start + k))
                .for_each(|(o, g)| *o += g);
        }
    }
    out
}

/// Sum of the gradients landing on class-token rows (for a shift shared by all tokens).
pub fn token_gradient_sum(seq: &PromptedSequence, d_rows: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; d_rows.cols()];
    for span in &seq.spans {
        for r in span.start + span.prompt_len..span.start + span.prompt_len + span.token_len {
            out.iter_mut().zip(d_rows.row(r)).for_each(|(o, g)| *o += g);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
struct BoxTrace {
    pre: [f64; 4],
    w_free: bool,
    h_free: bool,
    /// 0 free, -1 clamped at low edge, +1 clamped at high edge
    cx_clamp: i8,
    cy_clamp: i8,
}

/// Dense region × class output used for training.
#[derive(Debug, Clone)]
pub struct DenseOutput {
    pub similarity: Matrix,
    pub logits: Matrix,
    /// Row-major `n_regions × n_classes`.
    pub boxes: Vec<BoxCxCyWH>,
    n_classes: usize,
    traces: Vec<BoxTrace>,
}

impl DenseOutput {
    pub fn n_regions(&self) -> usize {
        self.logits.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn box_at(&self, region: usize, class: usize) -> BoxCxCyWH {
        self.boxes[region * self.n_classes + class]
    }
}

fn clamp_axis(center: f64, extent: f64) -> (f64, i8) {
    let lo = extent / 2.0;
    let hi = 1.0 - extent / 2.0;
    if center < lo {
        (lo, -1)
    } else if center > hi {
        (hi, 1)
    } else {
        (center, 0)
    }
}

fn adjust_box(proposal: BoxCxCyWH, pre: [f64; 4], step: f64) -> (BoxCxCyWH, BoxTrace) {
    let raw: [f64; 4] = std::array::from_fn(|k| proposal.to_array()[k] + step * pre[k].tanh());
    let w = raw[2].clamp(MIN_EXTENT, 1.0);
    let h = raw[3].clamp(MIN_EXTENT, 1.0);
    let (cx, cx_clamp) = clamp_axis(raw[0], w);
    let (cy, cy_clamp) = clamp_axis(raw[1], h);
    (
        BoxCxCyWH::new(cx, cy, w, h),
        BoxTrace {
            pre,
            w_free: raw[2] > MIN_EXTENT && raw[2] < 1.0,
            h_free: raw[3] > MIN_EXTENT && raw[3] < 1.0,
            cx_clamp,
            cy_clamp,
        },
    )
}

fn check_scene(scene: &Scene, feats: &Matrix) -> Result<()> {
    if let Some(r) = scene.regions.iter().find(|r| r.feature.len() != feats.cols()) {
        return Err(Error::shape(format!(
            "region feature width {} vs class feature width {}",
            r.feature.len(),
            feats.cols()
        )));
    }
    Ok(())
}

/// Similarities, logits and adjusted boxes for every region/class pair.
pub fn detect_forward_for_training(backbone: &FrozenBackbone, scene: &Scene, feats: &Matrix) -> Result<DenseOutput> {
    check_scene(scene, feats)?;
    if feats.cols() != backbone.dim() {
        return Err(Error::shape("class features do not match backbone width"));
    }
    let HeadConfig {
        temperature,
        center,
        box_step,
    } = backbone.head;
    let (nr, nc) = (scene.regions.len(), feats.rows());
    let mut similarity = Matrix::zeros(nr, nc);
    let mut logits = Matrix::zeros(nr, nc);
    let mut boxes = Vec::with_capacity(nr * nc);
    let mut traces = Vec::with_capacity(nr * nc);
    let mut prod = vec![0.0; feats.cols()];
    for (r, region) in scene.regions.iter().enumerate() {
        for c in 0..nc {
            let t = feats.row(c);
            let s = dot(&region.feature, t);
            similarity[(r, c)] = s;
            logits[(r, c)] = temperature * (s - center);
            prod.iter_mut()
                .zip(region.feature.iter().zip(t))
                .for_each(|(p, (u, v))| *p = u * v);
            let pre: [f64; 4] = std::array::from_fn(|k| dot(backbone.box_head.row(k), &prod));
            let (b, tr) = adjust_box(region.proposal, pre, box_step);
            boxes.push(b);
            traces.push(tr);
        }
    }
    Ok(DenseOutput {
        similarity,
        logits,
        boxes,
        n_classes: nc,
        traces,
    })
}

/// Gradient of the loss with respect to the class features, given its
/// gradients with respect to the dense logits and boxes.
pub fn detect_backward(
    backbone: &FrozenBackbone,
    scene: &Scene,
    feats: &Matrix,
    dense: &DenseOutput,
    d_logits: &Matrix,
    d_boxes: &[[f64; 4]],
) -> Result<Matrix> {
    let (nr, nc) = (scene.regions.len(), feats.rows());
    if d_logits.shape() != (nr, nc) || d_boxes.len() != nr * nc || dense.boxes.len() != nr * nc {
        return Err(Error::shape("dense gradient shapes do not match the scene"));
    }
    let HeadConfig {
        temperature,
        box_step,
        ..
    } = backbone.head;
    let d = feats.cols();
    let mut d_feats = Matrix::zeros(nc, d);
    let mut d_prod = vec![0.0; d];
    for (r, region) in scene.regions.iter().enumerate() {
        let u = &region.feature;
        for c in 0..nc {
            let idx = r * nc + c;
            let tr = dense.traces[idx];
            let g = d_boxes[idx];
            let (mut g_cx, mut g_cy, mut g_w, mut g_h) = (g[0], g[1], g[2], g[3]);
            if tr.cx_clamp != 0 {
                g_w += g_cx * if tr.cx_clamp < 0 { 0.5 } else { -0.5 };
                g_cx = 0.0;
            }
            if tr.cy_clamp != 0 {
                g_h += g_cy * if tr.cy_clamp < 0 { 0.5 } else { -0.5 };
                g_cy = 0.0;
            }
            if !tr.w_free {
                g_w = 0.0;
            }
            if !tr.h_free {
                g_h = 0.0;
            }
            let g_raw = [g_cx, g_cy, g_w, g_h];
            d_prod.iter_mut().for_each(|x| *x = 0.0);
            for k in 0..4 {
                let th = tr.pre[k].tanh();
                let gz = g_raw[k] * box_step * (1.0 - th * th);
                if gz != 0.0 {
                    d_prod
                        .iter_mut()
                        .zip(backbone.box_head.row(k))
                        .for_each(|(p, b)| *p += gz * b);
                }
            }
            let gl = d_logits[(r, c)] * temperature;
            let out = d_feats.row_mut(c);
            for i in 0..d {
                out[i] += gl * u[i] + d_prod[i] * u[i];
            }
        }
    }
    Ok(d_feats)
}

/// Thresholded inference: at most one detection per region, the
/// highest-scoring class (lowest index on ties).
pub fn detect(
    backbone: &FrozenBackbone,
    scene: &Scene,
    feats: &Matrix,
    class_names: &[String],
    thresholds: Thresholds,
) -> Result<Vec<Detection>> {
    if class_names.len() != feats.rows() {
        return Err(Error::shape("one class name per feature row required"));
    }
    let dense = detect_forward_for_training(backbone, scene, feats)?;
    Ok(dense_to_detections(&dense, class_names, thresholds))
}

pub fn dense_to_detections(dense: &DenseOutput, class_names: &[String], thresholds: Thresholds) -> Vec<Detection> {
    let mut out = Vec::new();
    for r in 0..dense.n_regions() {
        let mut best: Option<usize> = None;
        for c in 0..dense.n_classes() {
            if best.is_none_or(|b| dense.logits[(r, c)] > dense.logits[(r, b)]) {
                best = Some(c);
            }
        }
        let Some(c) = best else { continue };
        let score = sigmoid(dense.logits[(r, c)]);
        let similarity = dense.similarity[(r, c)];
        if score >= thresholds.box_threshold && similarity >= thresholds.text_threshold {
            out.push(Detection {
                region: r,
                class_index: c,
                class_name: class_names[c].clone(),
                bbox: dense.box_at(r, c),
                score,
                similarity,
            });
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;

    fn backbone(d: usize, seed: u64) -> FrozenBackbone {
        let mut rng = RngStream::new(seed, StreamName::World);
        let b = Matrix::from_vec(4, d, rng.normal_vec(4 * d, 1.0)).unwrap();
        FrozenBackbone::new(d, seed, BTreeMap::new(), b, HeadConfig::default()).unwrap()
    }

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = l2_norm(&v);
        v.into_iter().map(|x| x / n).collect()
    }

    fn random_scene(d: usize, n: usize, rng: &mut RngStream) -> Scene {
        Scene {
            regions: (0..n)
                .map(|_| Region {
                    feature: unit(rng.normal_vec(d, 1.0)),
                    proposal: BoxCxCyWH::new(
                        rng.uniform_in(0.3, 0.7),
                        rng.uniform_in(0.3, 0.7),
                        rng.uniform_in(0.1, 0.4),
                        rng.uniform_in(0.1, 0.4),
                    ),
                })
                .collect(),
            ground_truth: vec![],
        }
    }

    fn names(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenization_and_spans() {
        let bb = backbone(8, 1);
        let t = encode_classnames(&bb, &names(&["red apple"])).unwrap();
        assert_eq!(t.tokens.rows(), 2);
        assert_eq!(t.spans.len(), 1);
        assert_eq!(t.spans[0].len, 2);
        assert_eq!(t, encode_classnames(&bb, &names(&["red apple"])).unwrap());
    }

    #[test]
    fn token_rows_equal_table_entries() {
        let bb = backbone(8, 2);
        let t = encode_classnames(&bb, &names(&["apple", "orange", "lemon"])).unwrap();
        assert_eq!(t.spans.len(), 3);
        for (i, tok) in ["apple", "orange", "lemon"].iter().enumerate() {
            // independent recomputation of the hashed entry
            let mut rng = RngStream::from_salt(StreamName::World, 2 ^ fnv1a(tok.as_bytes()));
            let expected = rng.normal_vec(8, 1.0 / 8f64.sqrt());
            assert_eq!(t.tokens.row(i), expected.as_slice());
        }
    }

    #[test]
    fn empty_class_list_is_config_error() {
        let bb = backbone(8, 3);
        assert!(matches!(encode_classnames(&bb, &[]), Err(Error::Config(_))));
        assert!(encode_classnames(&bb, &names(&["  "])).is_err());
    }

    #[test]
    fn assemble_shapes() {
        let bb = backbone(6, 4);
        let t = encode_classnames(&bb, &names(&["a b", "c", "d e"])).unwrap();
        let empty = assemble_prompted_embeddings(&t, &PromptSet::empty(6)).unwrap();
        assert_eq!(empty.rows, t.tokens);

        let mut rng = RngStream::new(1, StreamName::Init);
        let p = PromptSet {
            vectors: Matrix::from_vec(4, 6, rng.normal_vec(24, 1.0)).unwrap(),
        };
        let seq = assemble_prompted_embeddings(&t, &p).unwrap();
        assert_eq!(seq.rows.rows(), 17);
        for span in &seq.spans {
            for k in 0..4 {
                assert_eq!(seq.rows.row(span.start + k), p.vectors.row(k));
            }
        }
        // class tokens unchanged, in order
        assert_eq!(seq.rows.row(4), t.tokens.row(0));
        assert_eq!(seq.rows.row(5), t.tokens.row(1));
        assert_eq!(seq.rows.row(10), t.tokens.row(2));

        let bad = PromptSet {
            vectors: Matrix::zeros(2, 5),
        };
        assert!(matches!(assemble_prompted_embeddings(&t, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn pooled_features() {
        let bb = backbone(5, 5);
        let t = encode_classnames(&bb, &names(&["x"])).unwrap();
        let seq = assemble_prompted_embeddings(&t, &PromptSet::empty(5)).unwrap();
        let f = class_features(&seq).unwrap();
        let tok = t.tokens.row(0);
        let n = l2_norm(tok);
        for (a, b) in f.feats.row(0).iter().zip(tok) {
            assert!((a - b / n).abs() < 1e-15);
        }

        let v = vec![0.3, -0.1, 0.5, 0.2, 0.0];
        let same = PromptedSequence {
            rows: Matrix::from_rows(&[v.clone(), v.clone(), v.clone()]).unwrap(),
            spans: vec![PromptedSpan {
                class_name: "x".into(),
                start: 0,
                prompt_len: 2,
                token_len: 1,
            }],
        };
        let f = class_features(&same).unwrap();
        let n = l2_norm(&v);
        for (a, b) in f.feats.row(0).iter().zip(&v) {
            assert!((a - b / n).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_mean_is_degenerate() {
        let seq = PromptedSequence {
            rows: Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, -2.0]]).unwrap(),
            spans: vec![PromptedSpan {
                class_name: "x".into(),
                start: 0,
                prompt_len: 1,
                token_len: 1,
            }],
        };
        assert!(matches!(class_features(&seq), Err(Error::Degenerate(_))));
    }

    #[test]
    fn feature_gradient_wrt_prompts() {
        let bb = backbone(6, 6);
        let t = encode_classnames(&bb, &names(&["a b", "c"])).unwrap();
        let mut rng = RngStream::new(2, StreamName::Init);
        let p0 = rng.normal_vec(18, 0.5);
        let g = Matrix::from_vec(2, 6, rng.normal_vec(12, 1.0)).unwrap();
        let f = |flat: &[f64]| {
            let p = PromptSet {
                vectors: Matrix::from_vec(3, 6, flat.to_vec()).unwrap(),
            };
            let seq = assemble_prompted_embeddings(&t, &p).unwrap();
            dot(class_features(&seq).unwrap().feats.as_slice(), g.as_slice())
        };
        let p = PromptSet {
            vectors: Matrix::from_vec(3, 6, p0.clone()).unwrap(),
        };
        let seq = assemble_prompted_embeddings(&t, &p).unwrap();
        let cf = class_features(&seq).unwrap();
        let d_rows = class_features_backward(&seq, &cf, &g).unwrap();
        let analytic = prompt_gradient(&seq, &d_rows);
        let numeric = finite_diff_grad(f, &p0, 1e-6).unwrap();
        for (a, b) in analytic.as_slice().iter().zip(&numeric) {
            assert!((a - b).abs() < 1e-4 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn aligned_region_score() {
        let mut bb = backbone(4, 7);
        bb.box_head = Matrix::zeros(4, 4);
        let t = unit(vec![1.0, 2.0, -1.0, 0.5]);
        let proposal = BoxCxCyWH::new(0.5, 0.5, 0.2, 0.2);
        let scene = Scene {
            regions: vec![
                Region {
                    feature: t.clone(),
                    proposal,
                },
                Region {
                    feature: unit(vec![2.0, -1.0, 0.0, 0.0]),
                    proposal,
                },
            ],
            ground_truth: vec![],
        };
        let feats = Matrix::from_vec(1, 4, t).unwrap();
        let dets = detect(&bb, &scene, &feats, &names(&["x"]), Thresholds::default()).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].region, 0);
        assert!((dets[0].score - sigmoid(5.0)).abs() < 1e-12);
        assert!((dets[0].score - 0.9933).abs() < 1e-4);
        assert_eq!(dets[0].bbox, proposal);
    }

    #[test]
    fn detections_satisfy_thresholds_and_subset_of_dense() {
        let bb = backbone(8, 8);
        let mut rng = RngStream::new(3, StreamName::Scenes);
        for _ in 0..50 {
            let scene = random_scene(8, 6, &mut rng);
            let mut feats = Matrix::zeros(3, 8);
            for c in 0..3 {
                // mix a region feature in so some pairs clear the thresholds
                let mix: Vec<f64> = scene.regions[c]
                    .feature
                    .iter()
                    .zip(rng.normal_vec(8, 0.3))
                    .map(|(a, b)| a + b)
                    .collect();
                feats.row_mut(c).copy_from_slice(&unit(mix));
            }
            let th = Thresholds::default();
            let dense = detect_forward_for_training(&bb, &scene, &feats).unwrap();
            let dets = detect(&bb, &scene, &feats, &names(&["a", "b", "c"]), th).unwrap();
            let mut seen = std::collections::HashSet::new();
            for det in &dets {
                assert!(seen.insert(det.region));
                assert!(det.score >= th.box_threshold && det.similarity >= th.text_threshold);
                assert_eq!(det.bbox, dense.box_at(det.region, det.class_index));
                assert!(det.bbox.in_unit_square());
            }
            assert!(dense.boxes.iter().all(|b| b.in_unit_square()));
        }
    }

    #[test]
    fn zero_regions() {
        let bb = backbone(4, 9);
        let feats = Matrix::from_vec(1, 4, unit(vec![1.0, 0.0, 0.0, 0.0])).unwrap();
        let dense = detect_forward_for_training(&bb, &Scene::default(), &feats).unwrap();
        assert_eq!(dense.n_regions(), 0);
        let g = detect_backward(&bb, &Scene::default(), &feats, &dense, &Matrix::zeros(0, 1), &[]).unwrap();
        assert!(g.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn dense_backward_matches_finite_differences() {
        let mut bb = backbone(6, 10);
        bb.head.box_step = 0.05;
        let mut rng = RngStream::new(4, StreamName::Scenes);
        for _ in 0..20 {
            let scene = random_scene(6, 4, &mut rng);
            let f0 = rng.normal_vec(12, 0.5);
            let gl = Matrix::from_vec(4, 2, rng.normal_vec(8, 1.0)).unwrap();
            let gb: Vec<[f64; 4]> = (0..8).map(|_| std::array::from_fn(|_| rng.normal())).collect();
            let objective = |flat: &[f64]| {
                let feats = Matrix::from_vec(2, 6, flat.to_vec()).unwrap();
                let dense = detect_forward_for_training(&bb, &scene, &feats).unwrap();
                let mut acc = dot(dense.logits.as_slice(), gl.as_slice());
                for (b, g) in dense.boxes.iter().zip(&gb) {
                    acc += dot(&b.to_array(), g);
                }
                acc
            };
            let feats = Matrix::from_vec(2, 6, f0.clone()).unwrap();
            let dense = detect_forward_for_training(&bb, &scene, &feats).unwrap();
            let analytic = detect_backward(&bb, &scene, &feats, &dense, &gl, &gb).unwrap();
            let numeric = finite_diff_grad(objective, &f0, 1e-6).unwrap();
            for (a, b) in analytic.as_slice().iter().zip(&numeric) {
                assert!((a - b).abs() < 1e-4 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }
}

//! Prompts → pooled class features → dense detections → loss, and the
//! matching backward pass down to the prompt vectors.

use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};
use crate::losses::{total_loss, LossBreakdown};
use crate::metrics::{evaluate_map, EvalReport, LabeledBox, ScoredBox};
use crate::numerics::Matrix;
use crate::promptgen::{ClassEmbeddingBatch, PromptSet};
use crate::surrogate::{
    assemble_prompted_embeddings, class_features, class_features_backward, detect_backward,
    detect, detect_forward_for_training, prompt_gradient, token_gradient_sum, FrozenBackbone, Scene,
    Thresholds,
};

/// IoU a detection needs to count as a true positive.
pub const MATCH_IOU: f64 = 0.5;

/// Column of each world label within a task's class list.
pub fn label_columns(scene: &Scene, class_ids: &[usize]) -> Result<Vec<usize>> {
    scene
        .ground_truth
        .iter()
        .map(|g| {
            class_ids.iter().position(|&c| c == g.label).ok_or_else(|| {
                Error::Domain(format!("label {} is not among task classes {class_ids:?}", g.label))
            })
        })
        .collect()
}

/// Mean loss over `scenes` and its gradients.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub loss: LossBreakdown,
    /// Gradient with respect to the prompt vectors (`m × d`).
    pub d_prompts: Matrix,
    /// Summed gradient over every class-token row (`d`).
    pub d_tokens: Vec<f64>,
}

pub fn batch_loss_and_grad(
    backbone: &FrozenBackbone,
    classes: &ClassEmbeddingBatch,
    class_ids: &[usize],
    prompts: &PromptSet,
    scenes: &[&Scene],
    mode: ExecMode,
) -> Result<BatchGradient> {
    if class_ids.len() != classes.n_classes() {
        return Err(Error::shape("one class id per class span required"));
    }
    let seq = assemble_prompted_embeddings(classes, prompts)?;
    let cf = class_features(&seq)?;
    let per_scene = map_indexed(mode, scenes, |_, scene| -> Result<_> {
        let cols = label_columns(scene, class_ids)?;
        let gt: Vec<_> = cols
            .into_iter()
            .zip(&scene.ground_truth)
            .map(|(c, g)| (c, g.bbox))
            .collect();
        let dense = detect_forward_for_training(backbone, scene, &cf.feats)?;
        let sl = total_loss(&dense, &gt)?;
        let d_feats = detect_backward(backbone, scene, &cf.feats, &dense, &sl.d_logits, &sl.d_boxes)?;
        Ok((sl.breakdown, d_feats))
    });
    let n = scenes.len().max(1) as f64;
    let mut losses = Vec::with_capacity(scenes.len());
    let mut d_feats = Matrix::zeros(cf.feats.rows(), cf.feats.cols());
    for item in per_scene {
        let (loss, g) = item?;
        losses.push(loss);
        for (acc, x) in d_feats.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *acc += x / n;
        }
    }
    let d_rows = class_features_backward(&seq, &cf, &d_feats)?;
    Ok(BatchGradient {
        loss: LossBreakdown::mean(&losses),
        d_prompts: prompt_gradient(&seq, &d_rows),
        d_tokens: token_gradient_sum(&seq, &d_rows),
    })
}

/// Thresholded detection on every scene, scored against ground truth with
/// class columns in `class_ids` order.
pub fn evaluate_prompts(
    backbone: &FrozenBackbone,
    classes: &ClassEmbeddingBatch,
    class_ids: &[usize],
    prompts: &PromptSet,
    scenes: &[&Scene],
    thresholds: Thresholds,
    mode: ExecMode,
) -> Result<EvalReport> {
    if class_ids.len() != classes.n_classes() {
        return Err(Error::shape("one class id per class span required"));
    }
    let names: Vec<String> = classes.spans.iter().map(|s| s.class_name.clone()).collect();
    let seq = assemble_prompted_embeddings(classes, prompts)?;
    let cf = class_features(&seq)?;
    let per_scene = map_indexed(mode, scenes, |_, scene| -> Result<_> {
        let cols = label_columns(scene, class_ids)?;
        let gt: Vec<LabeledBox> = cols
            .into_iter()
            .zip(&scene.ground_truth)
            .map(|(class, g)| LabeledBox { class, bbox: g.bbox })
            .collect();
        let dets: Vec<ScoredBox> = detect(backbone, scene, &cf.feats, &names, thresholds)?
            .into_iter()
            .map(|d| ScoredBox {
                class: d.class_index,
                bbox: d.bbox,
                score: d.score,
            })
            .collect();
        Ok((dets, gt))
    });
    let mut all_dets = Vec::with_capacity(scenes.len());
    let mut all_gt = Vec::with_capacity(scenes.len());
    for item in per_scene {
        let (d, g) = item?;
        all_dets.push(d);
        all_gt.push(g);
    }
    evaluate_map(&all_dets, &all_gt, class_ids.len(), MATCH_IOU)
}

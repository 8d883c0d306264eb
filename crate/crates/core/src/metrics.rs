//! Mean average precision at a fixed IoU threshold with all-point
//! interpolation.

use serde::Serialize;

use crate::boxes::{iou, BoxCxCyWH};
use crate::error::Result;

/// A scored prediction for one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub class: usize,
    pub bbox: BoxCxCyWH,
    pub score: f64,
}

/// An annotated object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledBox {
    pub class: usize,
    pub bbox: BoxCxCyWH,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PrCurve {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// `None` for classes without ground truth.
    pub per_class_ap: Vec<Option<f64>>,
    pub map: f64,
    pub curves: Vec<PrCurve>,
}

/// Per-class AP and their mean over classes that have ground truth.
///
/// Detections of a class are swept by descending score (ties keep scene
/// then input order); each is matched to the unmatched ground truth of the
/// same scene and class with the highest IoU ≥ `iou_threshold`, lower index
/// on ties.
pub fn evaluate_map(
    detections: &[Vec<ScoredBox>],
    ground_truth: &[Vec<LabeledBox>],
    n_classes: usize,
    iou_threshold: f64,
) -> Result<EvalReport> {
    let mut per_class_ap = Vec::with_capacity(n_classes);
    let mut curves = Vec::with_capacity(n_classes);
    for class in 0..n_classes {
        let n_gt: usize = ground_truth
            .iter()
            .map(|g| g.iter().filter(|b| b.class == class).count())
            .sum();
        let mut dets: Vec<(usize, ScoredBox)> = detections
            .iter()
            .enumerate()
            .flat_map(|(s, ds)| ds.iter().filter(|d| d.class == class).map(move |d| (s, *d)))
            .collect();
        dets.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));

        let mut used: Vec<Vec<bool>> = ground_truth.iter().map(|g| vec![false; g.len()]).collect();
        let mut curve = PrCurve::default();
        let mut tp = 0usize;
        for (k, (scene, det)) in dets.iter().enumerate() {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in ground_truth[*scene].iter().enumerate() {
                if g.class != class || used[*scene][j] {
                    continue;
                }
                let v = iou(det.bbox, g.bbox)?;
                if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            if let Some((j, _)) = best {
                used[*scene][j] = true;
                tp += 1;
            }
            if n_gt > 0 {
                curve.precision.push(tp as f64 / (k + 1) as f64);
                curve.recall.push(tp as f64 / n_gt as f64);
            }
        }
        per_class_ap.push((n_gt > 0).then(|| average_precision(&curve)));
        curves.push(curve);
    }
    let included: Vec<f64> = per_class_ap.iter().flatten().copied().collect();
    let map = if included.is_empty() {
        0.0
    } else {
        included.iter().sum::<f64>() / included.len() as f64
    };
    Ok(EvalReport {
        per_class_ap,
        map,
        curves,
    })
}

/// Exact area under the monotone precision envelope.
pub fn average_precision(curve: &PrCurve) -> f64 {
    let n = curve.precision.len();
    let mut envelope = curve.precision.clone();
    for i in (0..n.saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..n {
        if curve.recall[i] > prev_recall {
            ap += (curve.recall[i] - prev_recall) * envelope[i];
            prev_recall = curve.recall[i];
        }
    }
    ap
}

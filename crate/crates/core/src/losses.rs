//! Training objective: L1 box loss + GIoU loss + consistency loss over a
//! Hungarian matching of regions to ground-truth objects.

use serde::{Deserialize, Serialize};

use crate::boxes::{giou_with_grad, l1_box, l1_box_grad, BoxCxCyWH};
use crate::error::{Error, Result};
use crate::matching::{hungarian, Assignment};
use crate::numerics::Matrix;
use crate::surrogate::{sigmoid, DenseOutput};

/// Logits are clipped to this magnitude inside the cross-entropy.
pub const LOGIT_CLIP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub giou: f64,
    pub cons: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l1: f64, giou: f64, cons: f64) -> Self {
        LossBreakdown {
            l1,
            giou,
            cons,
            total: l1 + giou + cons,
        }
    }

    /// Component-wise mean, accumulated in slice order.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        if items.is_empty() {
            return LossBreakdown::default();
        }
        let n = items.len() as f64;
        let (mut l1, mut giou, mut cons) = (0.0, 0.0, 0.0);
        for it in items {
            l1 += it.l1;
            giou += it.giou;
            cons += it.cons;
        }
        LossBreakdown::new(l1 / n, giou / n, cons / n)
    }
}

/// Mean binary cross-entropy of `sigmoid(logits)` against 0/1 targets
/// (1 on matched `(region, class)` cells) and its gradient.
pub fn consistency_loss(logits: &Matrix, matched_cells: &[(usize, usize)]) -> Result<(f64, Matrix)> {
    let (nr, nc) = logits.shape();
    let mut targets = Matrix::zeros(nr, nc);
    for &(r, c) in matched_cells {
        if r >= nr || c >= nc {
            return Err(Error::Domain(format!(
                "matched cell ({r}, {c}) outside {nr}x{nc} logits"
            )));
        }
        targets[(r, c)] = 1.0;
    }
    let cells = (nr * nc) as f64;
    let mut grad = Matrix::zeros(nr, nc);
    if nr * nc == 0 {
        return Ok((0.0, grad));
    }
    let mut loss = 0.0;
    for ((x_raw, y), g) in logits
        .as_slice()
        .iter()
        .zip(targets.as_slice())
        .zip(grad.as_mut_slice())
    {
        let x = x_raw.clamp(-LOGIT_CLIP, LOGIT_CLIP);
        loss += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        if x_raw.abs() < LOGIT_CLIP {
            *g = (sigmoid(x) - y) / cells;
        }
    }
    Ok((loss / cells, grad))
}

/// Loss value plus gradients for one scene.
#[derive(Debug, Clone)]
pub struct SceneLoss {
    pub breakdown: LossBreakdown,
    pub assignment: Assignment,
    pub d_logits: Matrix,
    /// Row-major `n_regions × n_classes`, one `(cx, cy, w, h)` gradient each.
    pub d_boxes: Vec<[f64; 4]>,
}

/// Matching cost between region `r` and every ground-truth object.
pub fn matching_cost(dense: &DenseOutput, gt: &[(usize, BoxCxCyWH)]) -> Result<Matrix> {
    let mut cost = Matrix::zeros(dense.n_regions(), gt.len());
    for r in 0..dense.n_regions() {
        for (j, &(col, gt_box)) in gt.iter().enumerate() {
            let pred = dense.box_at(r, col);
            let (g, _) = giou_with_grad(pred, gt_box)?;
            cost[(r, j)] = (1.0 - sigmoid(dense.logits[(r, col)])) + l1_box(pred, gt_box) + (1.0 - g);
        }
    }
    Ok(cost)
}

/// Unweighted sum of the three losses. `gt` holds `(class column, box)`
/// per object. The matching is treated as constant for the gradient.
pub fn total_loss(dense: &DenseOutput, gt: &[(usize, BoxCxCyWH)]) -> Result<SceneLoss> {
    let (nr, nc) = (dense.n_regions(), dense.n_classes());
    if let Some(&(col, _)) = gt.iter().find(|(col, _)| *col >= nc) {
        return Err(Error::Domain(format!("label column {col} >= {nc} classes")));
    }
    let assignment = hungarian(&matching_cost(dense, gt)?);
    let mut d_boxes = vec![[0.0; 4]; nr * nc];
    let mut l1 = 0.0;
    let mut giou_loss = 0.0;
    let matched = assignment.pairs.len();
    let mut cells = Vec::with_capacity(matched);
    for &(r, j) in &assignment.pairs {
        let (col, gt_box) = gt[j];
        let pred = dense.box_at(r, col);
        let (g, g_grad) = giou_with_grad(pred, gt_box)?;
        l1 += l1_box(pred, gt_box);
        giou_loss += 1.0 - g;
        let l1_grad = l1_box_grad(pred, gt_box);
        let slot = &mut d_boxes[r * nc + col];
        for k in 0..4 {
            slot[k] += (l1_grad[k] - g_grad[k]) / matched as f64;
        }
        cells.push((r, col));
    }
    if matched > 0 {
        l1 /= matched as f64;
        giou_loss /= matched as f64;
    }
    let (cons, d_logits) = consistency_loss(&dense.logits, &cells)?;
    Ok(SceneLoss {
        breakdown: LossBreakdown::new(l1, giou_loss, cons),
        assignment,
        d_logits,
        d_boxes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;

    #[test]
    fn zero_logits_give_ln2() {
        let logits = Matrix::zeros(3, 2);
        let (l, _) = consistency_loss(&logits, &[(0, 1)]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let (l, _) = consistency_loss(&logits, &[]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn saturated_logits() {
        let logits = Matrix::from_rows(&[vec![f64::INFINITY, f64::NEG_INFINITY], vec![-1e9, -40.0]]).unwrap();
        let (l, g) = consistency_loss(&logits, &[(0, 0)]).unwrap();
        assert!(l <= 1e-9);
        assert!(g.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn out_of_range_label() {
        let logits = Matrix::zeros(2, 2);
        assert!(matches!(consistency_loss(&logits, &[(0, 2)]), Err(Error::Domain(_))));
    }

    #[test]
    fn consistency_gradient() {
        let vals = vec![0.3, -1.2, 2.5, 0.0, -0.7, 4.0];
        let cells = [(0, 1), (2, 0)];
        let (_, g) = consistency_loss(&Matrix::from_vec(3, 2, vals.clone()).unwrap(), &cells).unwrap();
        let num = finite_diff_grad(
            |x| consistency_loss(&Matrix::from_vec(3, 2, x.to_vec()).unwrap(), &cells).unwrap().0,
            &vals,
            1e-5,
        )
        .unwrap();
        for (a, b) in g.as_slice().iter().zip(&num) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn breakdown_mean() {
        let a = LossBreakdown::new(1.0, 2.0, 3.0);
        let b = LossBreakdown::new(3.0, 0.0, 1.0);
        let m = LossBreakdown::mean(&[a, b]);
        assert_eq!(m, LossBreakdown::new(2.0, 1.0, 2.0));
        assert_eq!(m.total, m.l1 + m.giou + m.cons);
    }
}

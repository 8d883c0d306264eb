//! Axis-aligned boxes in normalized (cx, cy, w, h) form, IoU/GIoU and the
//! L1 box distance, with gradients with respect to the first box.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxCxCyWH {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxCxCyWH {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BoxCxCyWH { cx, cy, w, h }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        BoxCxCyWH::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn corners(self) -> [f64; 4] {
        [
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        ]
    }

    pub fn area(self) -> f64 {
        self.w * self.h
    }

    pub fn validate(self) -> Result<Self> {
        let finite = self.to_array().iter().all(|v| v.is_finite());
        if !finite || self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::Domain(format!("degenerate box {self:?}")));
        }
        Ok(self)
    }

    /// `true` when every corner lies in the unit square and extents are positive.
    pub fn in_unit_square(self) -> bool {
        let [x1, y1, x2, y2] = self.corners();
        let eps = 1e-12;
        self.w > 0.0 && self.h > 0.0 && x1 >= -eps && y1 >= -eps && x2 <= 1.0 + eps && y2 <= 1.0 + eps
    }
}

pub fn iou(a: BoxCxCyWH, b: BoxCxCyWH) -> Result<f64> {
    let (a, b) = (a.validate()?, b.validate()?);
    let inter = intersection(a, b);
    Ok(inter / (a.area() + b.area() - inter))
}

fn intersection(a: BoxCxCyWH, b: BoxCxCyWH) -> f64 {
    let [ax1, ay1, ax2, ay2] = a.corners();
    let [bx1, by1, bx2, by2] = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    iw * ih
}

pub fn giou(a: BoxCxCyWH, b: BoxCxCyWH) -> Result<f64> {
    Ok(giou_with_grad(a, b)?.0)
}

/// GIoU and its gradient with respect to `a`'s (cx, cy, w, h).
pub fn giou_with_grad(a: BoxCxCyWH, b: BoxCxCyWH) -> Result<(f64, [f64; 4])> {
    let (a, b) = (a.validate()?, b.validate()?);
    let [ax1, ay1, ax2, ay2] = a.corners();
    let [bx1, by1, bx2, by2] = b.corners();

    let iw_raw = ax2.min(bx2) - ax1.max(bx1);
    let ih_raw = ay2.min(by2) - ay1.max(by1);
    let (iw, ih) = (iw_raw.max(0.0), ih_raw.max(0.0));
    let inter = iw * ih;
    let area_a = a.area();
    let union = area_a + b.area() - inter;
    let ew = ax2.max(bx2) - ax1.min(bx1);
    let eh = ay2.max(by2) - ay1.min(by1);
    let enclose = ew * eh;
    let value = inter / union - (enclose - union) / enclose;

    // value = I/U - 1 + U/E with U = A_a + A_b - I
    let d_inter = (union + inter) / (union * union) - 1.0 / enclose;
    let d_area = -inter / (union * union) + 1.0 / enclose;
    let d_enclose = -union / (enclose * enclose);

    let d_iw = d_inter * ih;
    let d_ih = d_inter * iw;
    let d_ew = d_enclose * eh;
    let d_eh = d_enclose * ew;

    // corner derivatives of a: (x1, y1, x2, y2)
    let mut dx1 = 0.0;
    let mut dx2 = 0.0;
    let mut dy1 = 0.0;
    let mut dy2 = 0.0;
    if iw_raw > 0.0 {
        if ax2 < bx2 {
            dx2 += d_iw;
        }
        if ax1 > bx1 {
            dx1 -= d_iw;
        }
    }
    if ih_raw > 0.0 {
        if ay2 < by2 {
            dy2 += d_ih;
        }
        if ay1 > by1 {
            dy1 -= d_ih;
        }
    }
    if ax2 > bx2 {
        dx2 += d_ew;
    }
    if ax1 < bx1 {
        dx1 -= d_ew;
    }
    if ay2 > by2 {
        dy2 += d_eh;
    }
    if ay1 < by1 {
        dy1 -= d_eh;
    }

    let grad = [
        dx1 + dx2,
        dy1 + dy2,
        (dx2 - dx1) / 2.0 + d_area * a.h,
        (dy2 - dy1) / 2.0 + d_area * a.w,
    ];
    Ok((value, grad))
}

/// Mean absolute coordinate difference.
pub fn l1_box(a: BoxCxCyWH, b: BoxCxCyWH) -> f64 {
    a.to_array()
        .iter()
        .zip(b.to_array())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / 4.0
}

/// Gradient of [`l1_box`] with respect to `a`.
pub fn l1_box_grad(a: BoxCxCyWH, b: BoxCxCyWH) -> [f64; 4] {
    let (a, b) = (a.to_array(), b.to_array());
    std::array::from_fn(|i| {
        let d = a[i] - b[i];
        if d > 0.0 {
            0.25
        } else if d < 0.0 {
            -0.25
        } else {
            0.0
        }
    })
}

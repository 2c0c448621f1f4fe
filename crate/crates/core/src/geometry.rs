//! Axis-aligned boxes, intersection-over-union and greedy non-maximum suppression.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

/// Integer pixel box; `(x, y)` is the top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: i32,
    pub y: i32,
    pub w: i32,
    pub h: i32,
}

impl BoundingBox {
    pub fn new(x: i32, y: i32, w: i32, h: i32) -> Self {
        assert!(w > 0 && h > 0, "box dimensions must be positive, got {w}x{h}");
        Self { x, y, w, h }
    }

    pub fn area(&self) -> i64 {
        i64::from(self.w) * i64::from(self.h)
    }

    pub fn right(&self) -> i32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> i32 {
        self.y + self.h
    }

    pub fn center_x(&self) -> f64 {
        f64::from(self.x) + f64::from(self.w) / 2.0
    }

    pub fn center_y(&self) -> f64 {
        f64::from(self.y) + f64::from(self.h) / 2.0
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.x >= 0
            && self.y >= 0
            && self.w > 0
            && self.h > 0
            && self.right() as i64 <= width as i64
            && self.bottom() as i64 <= height as i64
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> i64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0 || ih <= 0 {
            0
        } else {
            i64::from(iw) * i64::from(ih)
        }
    }
}

/// A scored box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(flatten)]
    pub bbox: BoundingBox,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BoundingBox, score: f64) -> Self {
        debug_assert!(score.is_finite());
        Self { bbox, score }
    }
}

/// Intersection area over union area; 0 for disjoint boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Descending score, then smaller x, then smaller y.
pub(crate) fn by_score_desc(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.x.cmp(&b.bbox.x))
        .then(a.bbox.y.cmp(&b.bbox.y))
        .then(a.bbox.w.cmp(&b.bbox.w))
        .then(a.bbox.h.cmp(&b.bbox.h))
}

/// Greedy suppression: keep the best remaining detection, drop every
/// remaining one with IOU at or above `iou_threshold` against it. The
/// result is ordered by descending score.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    assert!(
        iou_threshold > 0.0 && iou_threshold <= 1.0,
        "NMS threshold must lie in (0,1], got {iou_threshold}"
    );
    let mut order: Vec<Detection> = dets.to_vec();
    order.sort_by(by_score_desc);
    let mut suppressed = vec![false; order.len()];
    let mut kept = Vec::new();
    for i in 0..order.len() {
        if suppressed[i] {
            continue;
        }
        kept.push(order[i]);
        for j in i + 1..order.len() {
            if !suppressed[j] && iou(&order[i].bbox, &order[j].bbox) >= iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    kept
}

//! Axis-aligned rectangle arithmetic shared by every other module.
//!
//! Boxes use real-valued pixel coordinates with y growing downward. The
//! serialized form is always the 4-array `[x_left, y_top, x_right, y_bottom]`.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Axis-aligned rectangle in pixel coordinates.
///
/// Invariant: `x_left <= x_right` and `y_top <= y_bottom`. Zero-area boxes are
/// valid (they arise from abutting intersections) and compare as IoU 0 against
/// everything.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_left: f64,
    pub x_right: f64,
    pub y_top: f64,
    pub y_bottom: f64,
}

impl BBox {
    /// Build a box from edges given in serialization order (left, top, right, bottom).
    ///
    /// Panics in debug builds if the edges are crossed.
    pub fn new(x_left: f64, y_top: f64, x_right: f64, y_bottom: f64) -> Self {
        debug_assert!(x_left <= x_right && y_top <= y_bottom, "crossed box edges");
        BBox {
            x_left,
            x_right,
            y_top,
            y_bottom,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_right - self.x_left
    }

    pub fn height(&self) -> f64 {
        self.y_bottom - self.y_top
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// True when the box encloses no area.
    pub fn is_degenerate(&self) -> bool {
        self.area() == 0.0
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_left + self.x_right),
            0.5 * (self.y_top + self.y_bottom),
        )
    }

    /// Width over height; meaningful only for non-degenerate boxes.
    pub fn aspect(&self) -> f64 {
        self.width() / self.height()
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x_left <= other.x_left
            && other.x_right <= self.x_right
            && self.y_top <= other.y_top
            && other.y_bottom <= self.y_bottom
    }

    pub fn is_valid(&self) -> bool {
        self.x_left <= self.x_right
            && self.y_top <= self.y_bottom
            && self.x_left.is_finite()
            && self.x_right.is_finite()
            && self.y_top.is_finite()
            && self.y_bottom.is_finite()
    }
}

// Fixed wire order [l, t, r, b] in every file format.
impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        [self.x_left, self.y_top, self.x_right, self.y_bottom].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [l, t, r, b] = <[f64; 4]>::deserialize(deserializer)?;
        if l > r || t > b {
            return Err(D::Error::custom(format!(
                "crossed box edges [{l}, {t}, {r}, {b}]"
            )));
        }
        Ok(BBox {
            x_left: l,
            x_right: r,
            y_top: t,
            y_bottom: b,
        })
    }
}

/// Overlap area of two boxes; 0 when they are disjoint.
pub fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let w = a.x_right.min(b.x_right) - a.x_left.max(b.x_left);
    let h = a.y_bottom.min(b.y_bottom) - a.y_top.max(b.y_top);
    if w <= 0.0 || h <= 0.0 {
        0.0
    } else {
        w * h
    }
}

/// Intersection over union. Returns 0 when the union has zero area, so
/// degenerate boxes score 0 against everything.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Smallest box containing both inputs.
pub fn union_bbox(a: &BBox, b: &BBox) -> BBox {
    BBox {
        x_left: a.x_left.min(b.x_left),
        x_right: a.x_right.max(b.x_right),
        y_top: a.y_top.min(b.y_top),
        y_bottom: a.y_bottom.max(b.y_bottom),
    }
}

/// Coordinate-wise clipped intersection; `None` when the edges cross.
pub fn intersect(a: &BBox, b: &BBox) -> Option<BBox> {
    let l = a.x_left.max(b.x_left);
    let r = a.x_right.min(b.x_right);
    let t = a.y_top.max(b.y_top);
    let bo = a.y_bottom.min(b.y_bottom);
    if l > r || t > bo {
        None
    } else {
        Some(BBox {
            x_left: l,
            x_right: r,
            y_top: t,
            y_bottom: bo,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(l: f64, t: f64, r: f64, b: f64) -> BBox {
        BBox::new(l, t, r, b)
    }

    #[test]
    fn iou_identical_boxes() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn iou_disjoint_boxes() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        let b = bb(20.0, 0.0, 30.0, 10.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn iou_partial_overlap() {
        // inter = 50, union = 150
        let a = bb(0.0, 0.0, 10.0, 10.0);
        let b = bb(5.0, 0.0, 15.0, 10.0);
        let v = iou(&a, &b);
        assert!((v - 1.0 / 3.0).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn iou_degenerate_is_zero() {
        let line = bb(0.0, 0.0, 0.0, 10.0);
        let a = bb(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&line, &a), 0.0);
        assert_eq!(iou(&line, &line), 0.0);
    }

    #[test]
    fn union_bbox_worked_example() {
        let a = bb(0.0, 0.0, 40.0, 100.0);
        let b = bb(20.0, 30.0, 100.0, 70.0);
        assert_eq!(union_bbox(&a, &b), bb(0.0, 0.0, 100.0, 100.0));
    }

    #[test]
    fn union_bbox_idempotent_and_nested() {
        let a = bb(1.0, 2.0, 3.0, 4.0);
        assert_eq!(union_bbox(&a, &a), a);
        let outer = bb(0.0, 0.0, 10.0, 10.0);
        let inner = bb(2.0, 2.0, 5.0, 5.0);
        assert_eq!(union_bbox(&inner, &outer), outer);
    }

    #[test]
    fn intersect_worked_example() {
        let a = bb(0.0, 0.0, 40.0, 100.0);
        let b = bb(20.0, 30.0, 100.0, 70.0);
        assert_eq!(intersect(&a, &b), Some(bb(20.0, 30.0, 40.0, 70.0)));
        assert_eq!(intersect(&a, &a), Some(a));
        let far = bb(200.0, 0.0, 210.0, 10.0);
        assert_eq!(intersect(&a, &far), None);
    }

    #[test]
    fn serde_order_is_ltrb() {
        let a = bb(1.0, 2.0, 3.0, 4.0);
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(s, "[1.0,2.0,3.0,4.0]");
        let back: BBox = serde_json::from_str(&s).unwrap();
        assert_eq!(back, a);
        assert!(serde_json::from_str::<BBox>("[3.0,0.0,1.0,4.0]").is_err());
    }
}

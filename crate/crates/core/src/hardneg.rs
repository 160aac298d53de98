//! Geometric hard negatives around a two-patch foreground estimate.
//!
//! The core rectangle spanned by the two patches (max of lefts, min of
//! rights, max of tops, min of bottoms) is what the detector should fire on;
//! the four strips of the foreground left over on each side of the core are
//! near misses that make effective negatives. A strip covering more than half
//! the foreground is shrunk — by moving its one boundary that is interior to
//! the foreground — until it covers exactly half. A looser baseline collects
//! arbitrary candidate boxes that barely overlap the foreground.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{iou, BBox};

/// Which side of the core a strip lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StripKind {
    Left,
    Right,
    Top,
    Bottom,
}

/// One hard-negative strip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardNegative {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub kind: StripKind,
    pub shrunk: bool,
}

/// The foreground, the core both patches span, and the emitted strips
/// (zero-area strips dropped, order left/right/top/bottom).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardNegativeSet {
    pub foreground: BBox,
    pub core: BBox,
    pub strips: Vec<HardNegative>,
}

/// Build the four side strips of `fg` around the core of `b1` and `b2`,
/// shrinking any strip whose area exceeds `max_ratio` of the foreground area
/// to exactly that ratio.
pub fn generate_hard_negatives(
    b1: &BBox,
    b2: &BBox,
    fg: &BBox,
    max_ratio: f64,
) -> Result<HardNegativeSet> {
    if fg.is_degenerate() {
        return Err(Error::DegenerateBox(format!(
            "degenerate foreground: {:?}",
            fg
        )));
    }
    if !fg.contains(b1) || !fg.contains(b2) {
        return Err(Error::PatchOutsideForeground);
    }
    let xl = b1.x_left.max(b2.x_left);
    let xr = b1.x_right.min(b2.x_right);
    let yt = b1.y_top.max(b2.y_top);
    let yb = b1.y_bottom.min(b2.y_bottom);
    if xl > xr || yt > yb {
        return Err(Error::DisjointConfigurationPatches);
    }
    let core = BBox::new(xl, yt, xr, yb);
    let fg_area = fg.area();

    // (kind, strip, interior boundary adjusted on shrink)
    enum Interior {
        Right,  // left strip: its right edge moves left
        Left,   // right strip: its left edge moves right
        Bottom, // top strip: its bottom edge moves up
        Top,    // bottom strip: its top edge moves down
    }
    let raw = [
        (
            StripKind::Left,
            BBox::new(fg.x_left, fg.y_top, xl, fg.y_bottom),
            Interior::Right,
        ),
        (
            StripKind::Right,
            BBox::new(xr, fg.y_top, fg.x_right, fg.y_bottom),
            Interior::Left,
        ),
        (
            StripKind::Top,
            BBox::new(fg.x_left, fg.y_top, fg.x_right, yt),
            Interior::Bottom,
        ),
        (
            StripKind::Bottom,
            BBox::new(fg.x_left, yb, fg.x_right, fg.y_bottom),
            Interior::Top,
        ),
    ];

    let mut strips = Vec::new();
    for (kind, strip, interior) in raw {
        if strip.area() == 0.0 {
            continue;
        }
        let ratio = strip.area() / fg_area;
        if ratio <= max_ratio {
            strips.push(HardNegative {
                bbox: strip,
                kind,
                shrunk: false,
            });
            continue;
        }
        // Solve for the side length giving exactly max_ratio of fg_area,
        // then move only the interior boundary.
        let target = max_ratio * fg_area;
        let bbox = match interior {
            Interior::Right => {
                let w = target / strip.height();
                BBox::new(strip.x_left, strip.y_top, strip.x_left + w, strip.y_bottom)
            }
            Interior::Left => {
                let w = target / strip.height();
                BBox::new(strip.x_right - w, strip.y_top, strip.x_right, strip.y_bottom)
            }
            Interior::Bottom => {
                let h = target / strip.width();
                BBox::new(strip.x_left, strip.y_top, strip.x_right, strip.y_top + h)
            }
            Interior::Top => {
                let h = target / strip.width();
                BBox::new(strip.x_left, strip.y_bottom - h, strip.x_right, strip.y_bottom)
            }
        };
        strips.push(HardNegative {
            bbox,
            kind,
            shrunk: true,
        });
    }

    Ok(HardNegativeSet {
        foreground: fg.clone(),
        core,
        strips,
    })
}

/// Baseline negatives: candidates that barely overlap the foreground.
pub fn neighboring_negatives(fg: &BBox, candidates: &[BBox], max_iou: f64) -> Vec<BBox> {
    candidates
        .iter()
        .filter(|c| iou(c, fg) < max_iou)
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Box from x-interval and y-interval, the order used in the worked
    /// examples below.
    fn bx(xl: f64, xr: f64, yt: f64, yb: f64) -> BBox {
        BBox::new(xl, yt, xr, yb)
    }

    #[test]
    fn golden_two_patch_example() {
        let b1 = bx(0.0, 40.0, 0.0, 100.0);
        let b2 = bx(20.0, 100.0, 30.0, 70.0);
        let fg = bx(0.0, 100.0, 0.0, 100.0);
        let set = generate_hard_negatives(&b1, &b2, &fg, 0.5).unwrap();
        assert_eq!(set.core, bx(20.0, 40.0, 30.0, 70.0));
        assert_eq!(set.strips.len(), 4);

        let left = &set.strips[0];
        assert_eq!((left.kind, left.shrunk), (StripKind::Left, false));
        assert_eq!(left.bbox, bx(0.0, 20.0, 0.0, 100.0));

        let right = &set.strips[1];
        assert_eq!((right.kind, right.shrunk), (StripKind::Right, true));
        assert_eq!(right.bbox, bx(50.0, 100.0, 0.0, 100.0));
        assert_eq!(right.bbox.area() / fg.area(), 0.5);

        let top = &set.strips[2];
        assert_eq!((top.kind, top.shrunk), (StripKind::Top, false));
        assert_eq!(top.bbox, bx(0.0, 100.0, 0.0, 30.0));

        let bottom = &set.strips[3];
        assert_eq!((bottom.kind, bottom.shrunk), (StripKind::Bottom, false));
        assert_eq!(bottom.bbox, bx(0.0, 100.0, 70.0, 100.0));
    }

    #[test]
    fn degenerate_configuration_yields_no_strips() {
        let fg = bx(0.0, 100.0, 0.0, 100.0);
        let set = generate_hard_negatives(&fg, &fg, &fg, 0.5).unwrap();
        assert_eq!(set.core, fg);
        assert!(set.strips.is_empty());
    }

    #[test]
    fn abutting_patches_are_accepted() {
        let fg = bx(0.0, 100.0, 0.0, 100.0);
        let b1 = bx(0.0, 50.0, 0.0, 100.0);
        let b2 = bx(50.0, 100.0, 0.0, 100.0);
        let set = generate_hard_negatives(&b1, &b2, &fg, 0.5).unwrap();
        // core is the zero-width seam at x = 50
        assert_eq!(set.core, bx(50.0, 50.0, 0.0, 100.0));
        assert_eq!(set.strips.len(), 2);
        assert_eq!(set.strips[0].bbox, bx(0.0, 50.0, 0.0, 100.0));
        assert_eq!(set.strips[1].bbox, bx(50.0, 100.0, 0.0, 100.0));
        assert!(!set.strips[0].shrunk && !set.strips[1].shrunk);
    }

    #[test]
    fn disjoint_patches_error() {
        let fg = bx(0.0, 100.0, 0.0, 100.0);
        let b1 = bx(0.0, 30.0, 0.0, 100.0);
        let b2 = bx(60.0, 100.0, 0.0, 100.0);
        let err = generate_hard_negatives(&b1, &b2, &fg, 0.5).unwrap_err();
        assert!(matches!(err, Error::DisjointConfigurationPatches));
        assert_eq!(
            err.to_string(),
            "configuration patches must overlap or abut"
        );
    }

    #[test]
    fn degenerate_foreground_error() {
        let fg = bx(0.0, 0.0, 0.0, 100.0);
        assert!(matches!(
            generate_hard_negatives(&fg, &fg, &fg, 0.5),
            Err(Error::DegenerateBox(_))
        ));
    }

    #[test]
    fn patch_outside_foreground_error() {
        let fg = bx(0.0, 100.0, 0.0, 100.0);
        let b1 = bx(0.0, 120.0, 0.0, 100.0);
        assert!(matches!(
            generate_hard_negatives(&b1, &fg, &fg, 0.5),
            Err(Error::PatchOutsideForeground)
        ));
    }

    #[test]
    fn shrink_preserves_foreground_boundaries() {
        // Tall thin core near the left edge: the right strip dominates and
        // must shrink by moving its left edge only.
        let fg = bx(0.0, 200.0, 0.0, 100.0);
        let b1 = bx(0.0, 30.0, 0.0, 100.0);
        let b2 = bx(10.0, 40.0, 0.0, 100.0);
        let set = generate_hard_negatives(&b1, &b2, &fg, 0.5).unwrap();
        let right = set
            .strips
            .iter()
            .find(|s| s.kind == StripKind::Right)
            .unwrap();
        assert!(right.shrunk);
        assert_eq!(right.bbox.x_right, fg.x_right);
        assert_eq!(right.bbox.y_top, fg.y_top);
        assert_eq!(right.bbox.y_bottom, fg.y_bottom);
        assert_eq!(right.bbox.area() / fg.area(), 0.5);
    }

    #[test]
    fn vertical_strips_shrink_vertically() {
        // Core hugs the bottom; the top strip dominates.
        let fg = bx(0.0, 100.0, 0.0, 200.0);
        let b1 = bx(0.0, 100.0, 150.0, 200.0);
        let b2 = bx(0.0, 100.0, 160.0, 190.0);
        let set = generate_hard_negatives(&b1, &b2, &fg, 0.5).unwrap();
        let top = set
            .strips
            .iter()
            .find(|s| s.kind == StripKind::Top)
            .unwrap();
        assert!(top.shrunk);
        assert_eq!(top.bbox, bx(0.0, 100.0, 0.0, 100.0));
    }

    #[test]
    fn neighboring_filter_examples() {
        let fg = bx(0.0, 100.0, 0.0, 100.0);
        let identical = fg.clone();
        let disjoint = bx(500.0, 600.0, 0.0, 100.0);
        // Overlap 50×100 over union 15000 → exactly 1/3.
        let third = bx(50.0, 150.0, 0.0, 100.0);
        let kept = neighboring_negatives(&fg, &[identical, disjoint.clone(), third], 0.3);
        assert_eq!(kept, vec![disjoint]);
    }

    #[test]
    fn strip_serialization_uses_box_key() {
        let s = HardNegative {
            bbox: bx(0.0, 10.0, 0.0, 10.0),
            kind: StripKind::Left,
            shrunk: false,
        };
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(
            json,
            r#"{"box":[0.0,0.0,10.0,10.0],"kind":"left","shrunk":false}"#
        );
    }
}

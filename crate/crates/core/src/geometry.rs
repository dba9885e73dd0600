//! Axis-aligned boxes in absolute pixel coordinates and the overlap measures
//! built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in corner form `(x1, y1, x2, y2)`.
///
/// Coordinates are always finite and ordered (`x1 <= x2`, `y1 <= y2`).
/// Zero-area boxes are allowed since clipping produces them.
#[derive(Clone, Copy, PartialEq, Default)]
#[derive(Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Box2D {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl Box2D {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let invalid = |reason| Error::InvalidBox {
            x1,
            y1,
            x2,
            y2,
            reason,
        };
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(invalid("non-finite coordinate"));
        }
        if x1 > x2 || y1 > y2 {
            return Err(invalid("corners out of order"));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// From COCO `[x, y, w, h]`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if w < 0.0 || h < 0.0 {
            return Err(Error::InvalidBox {
                x1: x,
                y1: y,
                x2: x + w,
                y2: y + h,
                reason: "negative width or height",
            });
        }
        Self::new(x, y, x + w, y + h)
    }

    /// From center form normalized by the image size.
    pub fn from_cxcywh_normalized(
        cx: f64,
        cy: f64,
        w: f64,
        h: f64,
        image_w: f64,
        image_h: f64,
    ) -> Result<Self> {
        Self::new(
            (cx - w / 2.0) * image_w,
            (cy - h / 2.0) * image_h,
            (cx + w / 2.0) * image_w,
            (cy + h / 2.0) * image_h,
        )
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn x2(&self) -> f64 {
        self.x2
    }

    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn to_xyxy(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x1, self.y1, self.width(), self.height()]
    }

    /// Center form `(cx, cy, w, h)` normalized by the image size.
    pub fn to_cxcywh_normalized(&self, image_w: f64, image_h: f64) -> [f64; 4] {
        [
            (self.x1 + self.x2) / 2.0 / image_w,
            (self.y1 + self.y2) / 2.0 / image_h,
            self.width() / image_w,
            self.height() / image_h,
        ]
    }

    /// Area of the overlap with `other`, 0 when disjoint.
    pub fn intersection_area(&self, other: &Box2D) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    /// Smallest box enclosing both.
    pub fn enclosing(&self, other: &Box2D) -> Box2D {
        Box2D {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    pub fn contains(&self, other: &Box2D) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && other.x2 <= self.x2 && other.y2 <= self.y2
    }

    /// True when the box lies inside `[0, w] x [0, h]`.
    pub fn is_within(&self, w: f64, h: f64) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= w && self.y2 <= h
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Box2D {
        affine_remap_box(self, 1.0, 1.0, dx, dy)
    }
}

impl std::fmt::Debug for Box2D {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

impl TryFrom<[f64; 4]> for Box2D {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        Box2D::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Box2D> for [f64; 4] {
    fn from(b: Box2D) -> Self {
        b.to_xyxy()
    }
}

/// Intersection over union. Returns 0 when the union is empty.
pub fn iou(a: &Box2D, b: &Box2D) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Generalized IoU: `iou - |C \ (A u B)| / |C|` with `C` the enclosing box.
///
/// Degenerate inputs whose enclosing box has zero area give 0.
pub fn giou(a: &Box2D, b: &Box2D) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let hull = a.enclosing(b).area();
    if hull <= 0.0 {
        return 0.0;
    }
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    (iou - (hull - union) / hull).clamp(-1.0, 1.0)
}

/// Clamps every coordinate into `[0, w] x [0, h]`.
pub fn clip_box(b: &Box2D, w: f64, h: f64) -> Box2D {
    Box2D {
        x1: b.x1.clamp(0.0, w),
        y1: b.y1.clamp(0.0, h),
        x2: b.x2.clamp(0.0, w),
        y2: b.y2.clamp(0.0, h),
    }
}

/// Maps each corner through `(x * scale_x + dx, y * scale_y + dy)`.
///
/// Scales must be positive; a non-positive scale would reorder corners.
pub fn affine_remap_box(b: &Box2D, scale_x: f64, scale_y: f64, dx: f64, dy: f64) -> Box2D {
    debug_assert!(scale_x > 0.0 && scale_y > 0.0);
    Box2D {
        x1: b.x1 * scale_x + dx,
        y1: b.y1 * scale_y + dy,
        x2: b.x2 * scale_x + dx,
        y2: b.y2 * scale_y + dy,
    }
}

/// Horizontal mirror inside an image of width `w`.
pub fn hflip_box(b: &Box2D, w: f64) -> Box2D {
    Box2D {
        x1: w - b.x2,
        y1: b.y1,
        x2: w - b.x1,
        y2: b.y2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> Box2D {
        Box2D::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 30.0, 30.0)), 0.0);
        let v = iou(&a, &bx(5.0, 5.0, 15.0, 15.0));
        assert!((v - 25.0 / 175.0).abs() < 1e-12);
    }

    #[test]
    fn giou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(giou(&a, &a), 1.0);
        assert!(giou(&a, &bx(10.0, 0.0, 20.0, 10.0)).abs() < 1e-12);
        let v = giou(&a, &bx(5.0, 5.0, 15.0, 15.0));
        assert!((v - (1.0 / 7.0 - 50.0 / 225.0)).abs() < 1e-12);
        assert!((v + 0.079365).abs() < 1e-6);
    }

    #[test]
    fn zero_area_boxes_are_not_errors() {
        let z = bx(3.0, 3.0, 3.0, 3.0);
        assert_eq!(iou(&z, &z), 0.0);
        assert_eq!(giou(&z, &z), 0.0);
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&z, &a), 0.0);
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(Box2D::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(Box2D::new(0.0, 0.0, f64::INFINITY, 1.0).is_err());
        assert!(Box2D::new(2.0, 0.0, 1.0, 1.0).is_err());
        assert!(Box2D::from_xywh(0.0, 0.0, -1.0, 1.0).is_err());
        assert!(serde_json::from_str::<Box2D>("[5, 0, 1, 1]").is_err());
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_box(&bx(-5.0, -5.0, 5.0, 5.0), 10.0, 10.0), bx(0.0, 0.0, 5.0, 5.0));
        let full = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(clip_box(&full, 10.0, 10.0), full);
        assert_eq!(clip_box(&bx(8.0, 8.0, 20.0, 20.0), 10.0, 10.0), bx(8.0, 8.0, 10.0, 10.0));
        // fully outside collapses to a zero-area edge box
        let out = clip_box(&bx(12.0, 1.0, 15.0, 4.0), 10.0, 10.0);
        assert_eq!(out.area(), 0.0);
    }

    #[test]
    fn remap_examples() {
        let b = bx(10.0, 10.0, 20.0, 20.0);
        assert_eq!(affine_remap_box(&b, 1.0, 1.0, 0.0, 0.0), b);
        assert_eq!(
            affine_remap_box(&b, 0.5, 0.5, 100.0, 100.0),
            bx(105.0, 105.0, 110.0, 110.0)
        );
    }

    #[test]
    fn format_conversions() {
        let b = Box2D::from_xywh(10.0, 10.0, 20.0, 20.0).unwrap();
        assert_eq!(b, bx(10.0, 10.0, 30.0, 30.0));
        assert_eq!(b.to_xywh(), [10.0, 10.0, 20.0, 20.0]);
        let c = b.to_cxcywh_normalized(100.0, 50.0);
        let back = Box2D::from_cxcywh_normalized(c[0], c[1], c[2], c[3], 100.0, 50.0).unwrap();
        for (u, v) in back.to_xyxy().iter().zip(b.to_xyxy()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn hflip_is_involution() {
        let b = bx(0.0, 0.0, 1.0, 1.0);
        assert_eq!(hflip_box(&b, 2.0), bx(1.0, 0.0, 2.0, 1.0));
        assert_eq!(hflip_box(&hflip_box(&b, 2.0), 2.0), b);
    }

    fn arb_box() -> impl Strategy<Value = Box2D> {
        (0.0..200.0f64, 0.0..200.0f64, 0.0..100.0f64, 0.0..100.0f64)
            .prop_map(|(x, y, w, h)| Box2D::from_xywh(x, y, w, h).unwrap())
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let v = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, iou(&b, &a));
            if a.area() > 0.0 {
                prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn giou_bounded_by_iou(a in arb_box(), b in arb_box()) {
            let g = giou(&a, &b);
            prop_assert!((-1.0..=1.0).contains(&g));
            prop_assert!(g <= iou(&a, &b) + 1e-12);
            prop_assert!((g - giou(&b, &a)).abs() < 1e-12);
        }

        #[test]
        fn giou_equals_iou_under_containment(a in arb_box(), pad in 0.0..20.0f64) {
            let outer = Box2D::new(a.x1() - pad, a.y1() - pad, a.x2() + pad, a.y2() + pad).unwrap();
            if outer.area() > 0.0 {
                prop_assert!((giou(&a, &outer) - iou(&a, &outer)).abs() < 1e-12);
            }
        }

        #[test]
        fn giou_translation_invariant(a in arb_box(), b in arb_box(), tx in -50.0..50.0f64, ty in -50.0..50.0f64) {
            let d = giou(&a, &b) - giou(&a.translate(tx, ty), &b.translate(tx, ty));
            prop_assert!(d.abs() < 1e-9);
        }

        #[test]
        fn remap_commutes_with_union_and_containment(
            a in arb_box(), b in arb_box(),
            sx in 0.1..4.0f64, sy in 0.1..4.0f64, dx in -100.0..100.0f64, dy in -100.0..100.0f64,
        ) {
            let m = |x: &Box2D| affine_remap_box(x, sx, sy, dx, dy);
            let lhs = m(&a.enclosing(&b)).to_xyxy();
            let rhs = m(&a).enclosing(&m(&b)).to_xyxy();
            for (u, v) in lhs.iter().zip(rhs) {
                prop_assert!((u - v).abs() < 1e-9);
            }
            let hull = a.enclosing(&b);
            prop_assert!(m(&hull).contains(&m(&a)));
        }

        #[test]
        fn remap_composition(
            a in arb_box(),
            s1 in 0.1..3.0f64, d1 in -10.0..10.0f64, s2 in 0.1..3.0f64, d2 in -10.0..10.0f64,
        ) {
            let two = affine_remap_box(&affine_remap_box(&a, s1, s1, d1, d1), s2, s2, d2, d2);
            let one = affine_remap_box(&a, s1 * s2, s1 * s2, d1 * s2 + d2, d1 * s2 + d2);
            for (u, v) in two.to_xyxy().iter().zip(one.to_xyxy()) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }
}

//! Axis-aligned image-plane boxes.

use serde::{Deserialize, Serialize};

/// Box in pixel coordinates, stored as center and size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox { cx, cy, w, h }
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox {
            cx: 0.5 * (x1 + x2),
            cy: 0.5 * (y1 + y2),
            w: x2 - x1,
            h: y2 - y1,
        }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn x1(&self) -> f64 {
        self.cx - 0.5 * self.w
    }

    pub fn y1(&self) -> f64 {
        self.cy - 0.5 * self.h
    }

    pub fn x2(&self) -> f64 {
        self.cx + 0.5 * self.w
    }

    pub fn y2(&self) -> f64 {
        self.cy + 0.5 * self.h
    }

    /// Clips the box to a `width` x `height` image. Returns `None` when less
    /// than one pixel remains along either axis.
    pub fn clip(&self, width: f64, height: f64) -> Option<BBox> {
        let x1 = self.x1().max(0.0);
        let y1 = self.y1().max(0.0);
        let x2 = self.x2().min(width);
        let y2 = self.y2().min(height);
        if x2 - x1 < 1.0 || y2 - y1 < 1.0 {
            return None;
        }
        Some(BBox::from_corners(x1, y1, x2, y2))
    }

    pub fn center_distance(&self, other: &BBox) -> f64 {
        (self.cx - other.cx).hypot(self.cy - other.cy)
    }
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2().min(b.x2()) - a.x1().max(b.x1())).max(0.0);
    let ih = (a.y2().min(b.y2()) - a.y1().max(b.y1())).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_boxes() {
        let a = BBox::new(10.0, 10.0, 4.0, 6.0);
        assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn disjoint_boxes() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        let b = BBox::new(10.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn half_offset_unit_squares() {
        // overlap 0.5, union 2 - 0.5
        let a = BBox::from_corners(0.0, 0.0, 1.0, 1.0);
        let b = BBox::from_corners(0.5, 0.0, 1.5, 1.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn clip_drops_offscreen() {
        let b = BBox::new(-50.0, 10.0, 20.0, 20.0);
        assert!(b.clip(100.0, 100.0).is_none());
        let c = BBox::new(5.0, 5.0, 20.0, 20.0).clip(100.0, 100.0).unwrap();
        assert_eq!((c.x1(), c.y1(), c.x2(), c.y2()), (0.0, 0.0, 15.0, 15.0));
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..500.0f64, 0.0..500.0f64, 1.0..200.0f64, 1.0..200.0f64)
            .prop_map(|(cx, cy, w, h)| BBox::new(cx, cy, w, h))
    }

    proptest! {
        #[test]
        fn iou_bounded_and_symmetric(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - iou(&b, &a)).abs() < 1e-12);
        }
    }
}

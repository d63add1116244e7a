//! Integer pixel geometry shared by every layer of the stack.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point {
    pub x: i32,
    pub y: i32,
}

impl Point {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }
}

/// Axis-aligned rectangle `(x, y, w, h)`.
///
/// Point membership is half-open: `x <= px < x + w`, so two boxes that
/// share an edge never both claim the same pixel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rect {
    pub x: i32,
    pub y: i32,
    pub w: i32,
    pub h: i32,
}

impl Rect {
    pub const fn new(x: i32, y: i32, w: i32, h: i32) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> i32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> i32 {
        self.y + self.h
    }

    pub fn area(&self) -> i64 {
        i64::from(self.w.max(0)) * i64::from(self.h.max(0))
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0 && self.h > 0
    }

    /// Center in pixel coordinates (rounded down).
    pub fn center(&self) -> Point {
        Point::new(self.x + self.w / 2, self.y + self.h / 2)
    }

    /// Center in continuous coordinates.
    pub fn center_f(&self) -> (f64, f64) {
        (
            f64::from(self.x) + f64::from(self.w) / 2.0,
            f64::from(self.y) + f64::from(self.h) / 2.0,
        )
    }

    pub fn contains_point(&self, p: Point) -> bool {
        p.x >= self.x && p.x < self.right() && p.y >= self.y && p.y < self.bottom()
    }

    /// `other` lies fully inside `self`.
    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.contains_rect_within(other, 0)
    }

    /// `other` lies inside `self` grown by `eps` on every side.
    pub fn contains_rect_within(&self, other: &Rect, eps: i32) -> bool {
        other.x >= self.x - eps
            && other.y >= self.y - eps
            && other.right() <= self.right() + eps
            && other.bottom() <= self.bottom() + eps
    }

    pub fn translated(&self, dx: i32, dy: i32) -> Rect {
        Rect::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    pub fn expanded(&self, by: i32) -> Rect {
        Rect::new(self.x - by, self.y - by, self.w + 2 * by, self.h + 2 * by)
    }

    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        let x1 = self.x.max(other.x);
        let y1 = self.y.max(other.y);
        let x2 = self.right().min(other.right());
        let y2 = self.bottom().min(other.bottom());
        (x2 > x1 && y2 > y1).then(|| Rect::new(x1, y1, x2 - x1, y2 - y1))
    }

    pub fn union(&self, other: &Rect) -> Rect {
        let x1 = self.x.min(other.x);
        let y1 = self.y.min(other.y);
        let x2 = self.right().max(other.right());
        let y2 = self.bottom().max(other.bottom());
        Rect::new(x1, y1, x2 - x1, y2 - y1)
    }

    pub fn iou(&self, other: &Rect) -> f64 {
        let inter = self.intersection(other).map_or(0, |r| r.area());
        if inter == 0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        inter as f64 / union as f64
    }

    /// Overlap of the vertical extents divided by the shorter height.
    pub fn vertical_overlap_ratio(&self, other: &Rect) -> f64 {
        let top = self.y.max(other.y);
        let bottom = self.bottom().min(other.bottom());
        if bottom <= top {
            return 0.0;
        }
        f64::from(bottom - top) / f64::from(self.h.min(other.h).max(1))
    }

    /// IoU of the two horizontal intervals.
    pub fn x_interval_iou(&self, other: &Rect) -> f64 {
        let lo = self.x.max(other.x);
        let hi = self.right().min(other.right());
        if hi <= lo {
            return 0.0;
        }
        let span = self.right().max(other.right()) - self.x.min(other.x);
        f64::from(hi - lo) / f64::from(span)
    }

    pub fn diagonal(&self) -> f64 {
        f64::from(self.w).hypot(f64::from(self.h))
    }

    pub fn center_distance(&self, other: &Rect) -> f64 {
        let (ax, ay) = self.center_f();
        let (bx, by) = other.center_f();
        (ax - bx).hypot(ay - by)
    }
}

/// Tight bounding rectangle of a non-empty set of rectangles.
pub fn bounding(rects: impl IntoIterator<Item = Rect>) -> Option<Rect> {
    rects.into_iter().reduce(|a, b| a.union(&b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_open_membership() {
        let r = Rect::new(160, 200, 100, 40);
        assert!(r.contains_point(Point::new(160, 200)));
        assert!(!r.contains_point(Point::new(260, 220)));
        assert!(!r.contains_point(Point::new(200, 240)));
    }

    #[test]
    fn iou_basics() {
        let a = Rect::new(0, 0, 10, 10);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&Rect::new(10, 0, 10, 10)), 0.0);
        // 5x10 overlap, union 150
        assert!((a.iou(&Rect::new(5, 0, 10, 10)) - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn containment_with_tolerance() {
        let a = Rect::new(10, 10, 100, 100);
        assert!(!a.contains_rect(&Rect::new(8, 10, 20, 20)));
        assert!(a.contains_rect_within(&Rect::new(8, 10, 20, 20), 3));
    }

    #[test]
    fn overlap_ratios() {
        let a = Rect::new(0, 0, 10, 40);
        let b = Rect::new(50, 20, 10, 20);
        assert_eq!(a.vertical_overlap_ratio(&b), 1.0);
        assert_eq!(a.x_interval_iou(&b), 0.0);
        assert_eq!(a.x_interval_iou(&Rect::new(0, 100, 10, 5)), 1.0);
    }
}

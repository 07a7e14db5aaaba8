//! Box and affine-map arithmetic.
//!
//! Boxes are real-valued and cover the half-open region `[x, x+w) × [y, y+h)`
//! with the origin at the top-left and `y` growing downward. An integer box
//! `(x, y, w, h)` therefore covers exactly `w` pixel columns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MIN_CLAMPED_SIDE: f64 = 0.5;

/// Axis-aligned target box in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BoundingBox { x, y, w, h };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::InvalidBox(format!("({x}, {y}, {w}, {h})")))
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) && self.w > 0.0 && self.h > 0.0
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        [
            (self.x, self.y),
            (self.right(), self.y),
            (self.x, self.bottom()),
            (self.right(), self.bottom()),
        ]
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        BoundingBox { x: self.x + dx, y: self.y + dy, ..*self }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    /// True when `other` lies inside `self` up to `tol` pixels per edge.
    pub fn contains(&self, other: &BoundingBox, tol: f64) -> bool {
        other.x >= self.x - tol
            && other.y >= self.y - tol
            && other.right() <= self.right() + tol
            && other.bottom() <= self.bottom() + tol
    }

    /// Intersection with another box, `None` when the interiors are disjoint.
    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x1 > x0 && y1 > y0 {
            Some(BoundingBox { x: x0, y: y0, w: x1 - x0, h: y1 - y0 })
        } else {
            None
        }
    }

    /// Smallest box enclosing all points.
    pub fn enclosing(points: &[(f64, f64)]) -> Result<Self> {
        let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
        let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(px, py) in points {
            x0 = x0.min(px);
            y0 = y0.min(py);
            x1 = x1.max(px);
            y1 = y1.max(py);
        }
        Self::new(x0, y0, x1 - x0, y1 - y0)
    }
}

/// Intersection over union on real intervals.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    // areas from edge differences so identical boxes give exactly 1
    let edge_area = |b: &BoundingBox| (b.right() - b.x) * (b.bottom() - b.y);
    let inter = a.intersection(b).map_or(0.0, |i| edge_area(&i));
    let union = edge_area(a) + edge_area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Euclidean distance between box centers.
pub fn center_error(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

/// Intersects `b` with the frame rectangle. Returns `None` when the result is
/// empty or thinner than half a pixel.
pub fn clamp_box(b: &BoundingBox, frame_w: f64, frame_h: f64) -> Option<BoundingBox> {
    let frame = BoundingBox { x: 0.0, y: 0.0, w: frame_w, h: frame_h };
    b.intersection(&frame)
        .filter(|c| c.w > MIN_CLAMPED_SIDE && c.h > MIN_CLAMPED_SIDE)
}

/// 2×3 affine map `(x, y) → (a11·x + a12·y + tx, a21·x + a22·y + ty)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub a11: f64,
    pub a12: f64,
    pub tx: f64,
    pub a21: f64,
    pub a22: f64,
    pub ty: f64,
}

impl Default for AffineMap {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineMap {
    pub const fn new(a11: f64, a12: f64, tx: f64, a21: f64, a22: f64, ty: f64) -> Self {
        AffineMap { a11, a12, tx, a21, a22, ty }
    }

    pub const fn identity() -> Self {
        Self::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0)
    }

    pub const fn translation(dx: f64, dy: f64) -> Self {
        Self::new(1.0, 0.0, dx, 0.0, 1.0, dy)
    }

    pub const fn scale(sx: f64, sy: f64) -> Self {
        Self::new(sx, 0.0, 0.0, 0.0, sy, 0.0)
    }

    /// `x' = x + mx·y`, `y' = my·x + y`.
    pub const fn shear(mx: f64, my: f64) -> Self {
        Self::new(1.0, mx, 0.0, my, 1.0, 0.0)
    }

    /// Mirror about the vertical line `x = width / 2` in edge coordinates.
    pub const fn flip_horizontal(width: f64) -> Self {
        Self::new(-1.0, 0.0, width, 0.0, 1.0, 0.0)
    }

    pub fn determinant(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    pub fn is_invertible(&self) -> bool {
        let det = self.determinant();
        det.is_finite() && det.abs() > 1e-12
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a11 * x + self.a12 * y + self.tx,
            self.a21 * x + self.a22 * y + self.ty,
        )
    }

    /// The map that applies `self` first and then `next`.
    pub fn then(&self, next: &AffineMap) -> AffineMap {
        AffineMap {
            a11: next.a11 * self.a11 + next.a12 * self.a21,
            a12: next.a11 * self.a12 + next.a12 * self.a22,
            tx: next.a11 * self.tx + next.a12 * self.ty + next.tx,
            a21: next.a21 * self.a11 + next.a22 * self.a21,
            a22: next.a21 * self.a12 + next.a22 * self.a22,
            ty: next.a21 * self.tx + next.a22 * self.ty + next.ty,
        }
    }

    pub fn inverse(&self) -> Result<AffineMap> {
        let det = self.determinant();
        if !self.is_invertible() {
            return Err(Error::SingularMap(det));
        }
        let a11 = self.a22 / det;
        let a12 = -self.a12 / det;
        let a21 = -self.a21 / det;
        let a22 = self.a11 / det;
        Ok(AffineMap {
            a11,
            a12,
            tx: -(a11 * self.tx + a12 * self.ty),
            a21,
            a22,
            ty: -(a21 * self.tx + a22 * self.ty),
        })
    }

    /// Converts a map on continuous edge coordinates into the equivalent map
    /// on pixel indices, where pixel `i` has its center at `i + 0.5`.
    pub fn to_pixel_index(&self) -> AffineMap {
        AffineMap::translation(0.5, 0.5)
            .then(self)
            .then(&AffineMap::translation(-0.5, -0.5))
    }
}

/// Axis-aligned box of the four transformed corners of `b`.
pub fn transform_box(m: &AffineMap, b: &BoundingBox) -> Result<BoundingBox> {
    transform_box_chain(std::slice::from_ref(m), b)
}

/// Pushes the corners of `b` through every map in order and takes a single
/// enclosing box at the end.
pub fn transform_box_chain(maps: &[AffineMap], b: &BoundingBox) -> Result<BoundingBox> {
    let mut corners = b.corners();
    for m in maps {
        if !m.is_invertible() {
            return Err(Error::SingularMap(m.determinant()));
        }
        for c in corners.iter_mut() {
            *c = m.apply(c.0, c.1);
        }
    }
    BoundingBox::enclosing(&corners)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    /// Counts grid cells at `step` resolution whose centers fall in each box.
    fn raster_iou(a: &BoundingBox, b: &BoundingBox, step: f64) -> f64 {
        let x0 = a.x.min(b.x);
        let y0 = a.y.min(b.y);
        let x1 = a.right().max(b.right());
        let y1 = a.bottom().max(b.bottom());
        let nx = ((x1 - x0) / step).ceil() as usize;
        let ny = ((y1 - y0) / step).ceil() as usize;
        let inside = |bx: &BoundingBox, px: f64, py: f64| {
            px >= bx.x && px < bx.right() && py >= bx.y && py < bx.bottom()
        };
        let (mut inter, mut union) = (0usize, 0usize);
        for j in 0..ny {
            let py = y0 + (j as f64 + 0.5) * step;
            for i in 0..nx {
                let px = x0 + (i as f64 + 0.5) * step;
                let (ia, ib) = (inside(a, px, py), inside(b, px, py));
                inter += (ia && ib) as usize;
                union += (ia || ib) as usize;
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&bb(0., 0., 10., 10.), &bb(0., 0., 10., 10.)), 1.0);
        assert_eq!(iou(&bb(0., 0., 10., 10.), &bb(20., 20., 5., 5.)), 0.0);
        let a = bb(0., 0., 10., 10.);
        let b = bb(5., 0., 10., 10.);
        let oracle = raster_iou(&a, &b, 0.01);
        assert_abs_diff_eq!(oracle, 1.0 / 3.0, epsilon = 1e-3);
        assert_abs_diff_eq!(iou(&a, &b), oracle, epsilon = 1e-3);
    }

    #[test]
    fn transform_box_examples() {
        let b = bb(5., 5., 20., 20.);
        assert_eq!(transform_box(&AffineMap::identity(), &b).unwrap(), b);
        assert_eq!(
            transform_box(&AffineMap::translation(100., 50.), &b).unwrap(),
            bb(105., 55., 20., 20.)
        );
        // corners (0,0) (20,0) (0,10) (20,10) map to x' = x + 0.5y: 0, 20, 5, 25
        let sheared = transform_box(&AffineMap::shear(0.5, 0.0), &bb(0., 0., 20., 10.)).unwrap();
        assert_abs_diff_eq!(sheared.x, 0.0);
        assert_abs_diff_eq!(sheared.w, 25.0);
        assert_abs_diff_eq!(sheared.h, 10.0);
        assert!(matches!(
            transform_box(&AffineMap::scale(0.0, 1.0), &b),
            Err(Error::SingularMap(_))
        ));
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_box(&bb(10., 10., 20., 20.), 100., 100.), Some(bb(10., 10., 20., 20.)));
        assert_eq!(clamp_box(&bb(-5., -5., 20., 20.), 100., 100.), Some(bb(0., 0., 15., 15.)));
        assert_eq!(clamp_box(&bb(200., 200., 10., 10.), 100., 100.), None);
        assert_eq!(clamp_box(&bb(99.6, 10., 10., 10.), 100., 100.), None);
    }

    #[test]
    fn center_error_examples() {
        let a = bb(0., 0., 10., 10.);
        assert_eq!(center_error(&a, &a), 0.0);
        assert_abs_diff_eq!(center_error(&bb(0., 0., 10., 10.), &bb(3., 4., 10., 10.)), 5.0);
        assert_abs_diff_eq!(center_error(&bb(-5., -5., 10., 10.), &bb(-5., 15., 10., 10.)), 20.0);
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BoundingBox::new(0., 0., 0., 5.).is_err());
        assert!(BoundingBox::new(0., 0., 5., -1.).is_err());
        assert!(BoundingBox::new(f64::NAN, 0., 5., 5.).is_err());
    }

    #[test]
    fn inverse_and_pixel_index_convention() {
        let m = AffineMap::shear(0.2, -0.1).then(&AffineMap::scale(1.3, 0.8));
        let inv = m.inverse().unwrap();
        let (x, y) = inv.apply(m.apply(3.0, -7.0).0, m.apply(3.0, -7.0).1);
        assert_abs_diff_eq!(x, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y, -7.0, epsilon = 1e-12);
        // a flip of a 10-wide image maps pixel 0 onto pixel 9
        let flip = AffineMap::flip_horizontal(10.0).to_pixel_index();
        assert_abs_diff_eq!(flip.apply(0.0, 4.0).0, 9.0);
        assert_abs_diff_eq!(flip.apply(0.0, 4.0).1, 4.0);
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.5..40.0f64, 0.5..40.0f64)
            .prop_map(|(x, y, w, h)| bb(x, y, w, h))
    }

    fn arb_map() -> impl Strategy<Value = AffineMap> {
        (0.5..1.5f64, -0.3..0.3f64, -0.3..0.3f64, 0.5..1.5f64, -20.0..20.0f64, -20.0..20.0f64)
            .prop_map(|(a, b, c, d, tx, ty)| AffineMap::new(a, b, tx, c, d, ty))
    }

    proptest! {
        #[test]
        fn iou_properties(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - iou(&b, &a)).abs() < 1e-12);
            prop_assert_eq!(iou(&a, &a), 1.0);
            prop_assert_eq!(ab == 0.0, a.intersection(&b).is_none());
            if ab == 1.0 {
                prop_assert!((a.x - b.x).abs() < 1e-9 && (a.w - b.w).abs() < 1e-9);
            }
        }

        #[test]
        fn chained_corners_are_tighter_than_nested_aabb(
            b in arb_box(), m1 in arb_map(), m2 in arb_map(), m3 in arb_map()
        ) {
            let chained = transform_box_chain(&[m1, m2, m3], &b).unwrap();
            let nested = transform_box(&m3, &transform_box(&m2, &transform_box(&m1, &b).unwrap()).unwrap()).unwrap();
            prop_assert!(nested.contains(&chained, 1e-9));
            prop_assert!(chained.area() <= nested.area() + 1e-9);
            let composed = transform_box(&m1.then(&m2).then(&m3), &b).unwrap();
            prop_assert!((composed.x - chained.x).abs() < 1e-9 && (composed.w - chained.w).abs() < 1e-9);
        }

        #[test]
        fn clamp_is_contained(b in arb_box(), fw in 1.0..60.0f64, fh in 1.0..60.0f64) {
            if let Some(c) = clamp_box(&b, fw, fh) {
                let frame = bb(0.0, 0.0, fw, fh);
                prop_assert!(frame.contains(&c, 1e-9));
                prop_assert!(b.contains(&c, 1e-9));
            }
        }
    }
}

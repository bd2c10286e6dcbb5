//! Impurity geometry: bounding rectangles, the pseudo-semi-metric distance
//! between them, and smallest enclosing circles.
//!
//! The rectangle distance is symmetric and non-negative but deliberately not
//! a metric: two distinct intersecting rectangles have distance 0, and the
//! triangle inequality can fail (see the witness tests below).

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::ingest::BinaryImage;
use crate::Result;

/// A 2D point in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Axis-aligned (straight) bounding rectangle of an impurity.
///
/// Coordinates are inclusive pixel extents: a single pixel at (3, 4) has
/// `min_x == max_x == 3` and `min_y == max_y == 4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingRect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BoundingRect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self> {
        if !(min_x <= max_x && min_y <= max_y) {
            return Err(Error::invalid(format!(
                "degenerate rectangle ({min_x},{min_y})-({max_x},{max_y})"
            )));
        }
        Ok(Self {
            min_x,
            min_y,
            max_x,
            max_y,
        })
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    /// True when the rectangles overlap or touch along an edge or corner.
    pub fn intersects(&self, other: &BoundingRect) -> bool {
        self.min_x <= other.max_x
            && other.min_x <= self.max_x
            && self.min_y <= other.max_y
            && other.min_y <= self.max_y
    }
}

/// Arithmetic midpoint of the rectangle.
pub fn rect_center(r: &BoundingRect) -> Point {
    Point::new((r.min_x + r.max_x) / 2.0, (r.min_y + r.max_y) / 2.0)
}

/// Euclidean length of the rectangle's diagonal.
pub fn rect_diagonal(r: &BoundingRect) -> f64 {
    let w = r.width();
    let h = r.height();
    (w * w + h * h).sqrt()
}

/// Distance between two bounding rectangles.
///
/// 0 when the rectangles intersect or touch; otherwise the shortest
/// Euclidean distance between their boundaries. That is the gap along one
/// axis when the projections overlap on the other axis, and the
/// corner-to-corner distance when they are disjoint on both axes.
pub fn rect_distance(a: &BoundingRect, b: &BoundingRect) -> f64 {
    let dx = (a.min_x - b.max_x).max(b.min_x - a.max_x).max(0.0);
    let dy = (a.min_y - b.max_y).max(b.min_y - a.max_y).max(0.0);
    (dx * dx + dy * dy).sqrt()
}

/// One labeled inclusion on a scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Impurity {
    /// Dense id within the scan, assigned in raster-scan discovery order.
    pub id: usize,
    /// Ordered outer boundary, pixel centers.
    pub contour: Vec<Point>,
    /// Component pixel count.
    pub area: u64,
    /// Tight axis-aligned extent.
    pub rect: BoundingRect,
    /// Normalized 100x100 shape image, derived on demand (not persisted).
    pub shape_image: Option<BinaryImage>,
}

impl Impurity {
    pub fn area_f64(&self) -> f64 {
        self.area as f64
    }
}

/// Smallest circle covering a point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnclosingCircle {
    pub center: Point,
    pub radius: f64,
}

impl EnclosingCircle {
    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.radius * self.radius
    }

    fn contains(&self, p: Point, eps: f64) -> bool {
        self.center.distance(p) <= self.radius + eps
    }
}

const CIRCLE_EPS: f64 = 1e-10;

/// Smallest enclosing circle of `points` (Welzl's move-to-front algorithm,
/// expected linear time). The shuffle is seeded so results are reproducible.
///
/// Errors on an empty point list.
pub fn smallest_enclosing_circle(points: &[Point]) -> Result<EnclosingCircle> {
    if points.is_empty() {
        return Err(Error::invalid("enclosing circle of an empty point set"));
    }
    let mut pts = points.to_vec();
    deterministic_shuffle(&mut pts);

    let mut circle = EnclosingCircle {
        center: pts[0],
        radius: 0.0,
    };
    for i in 1..pts.len() {
        if !circle.contains(pts[i], CIRCLE_EPS) {
            circle = circle_one_boundary(&pts[..=i], pts[i]);
        }
    }
    Ok(circle)
}

// Fisher-Yates driven by a fixed-key SplitMix64 stream; identical inputs
// always produce the identical circle.
fn deterministic_shuffle(pts: &mut [Point]) {
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut next = || {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    for i in (1..pts.len()).rev() {
        let j = (next() % (i as u64 + 1)) as usize;
        pts.swap(i, j);
    }
}

fn circle_one_boundary(pts: &[Point], p: Point) -> EnclosingCircle {
    let mut circle = EnclosingCircle {
        center: p,
        radius: 0.0,
    };
    for i in 0..pts.len() {
        let q = pts[i];
        if !circle.contains(q, CIRCLE_EPS) {
            circle = if circle.radius == 0.0 {
                circle_from_diameter(p, q)
            } else {
                circle_two_boundary(&pts[..=i], p, q)
            };
        }
    }
    circle
}

fn circle_two_boundary(pts: &[Point], p: Point, q: Point) -> EnclosingCircle {
    let diam = circle_from_diameter(p, q);
    let mut left: Option<EnclosingCircle> = None;
    let mut right: Option<EnclosingCircle> = None;

    let px = q.x - p.x;
    let py = q.y - p.y;
    for &r in pts {
        if diam.contains(r, CIRCLE_EPS) {
            continue;
        }
        let cross = px * (r.y - p.y) - py * (r.x - p.x);
        let Some(c) = circumcircle(p, q, r) else {
            continue;
        };
        let d = px * (c.center.y - p.y) - py * (c.center.x - p.x);
        if cross > 0.0 && left.is_none_or(|l| d > px * (l.center.y - p.y) - py * (l.center.x - p.x))
        {
            left = Some(c);
        } else if cross < 0.0
            && right.is_none_or(|r2| d < px * (r2.center.y - p.y) - py * (r2.center.x - p.x))
        {
            right = Some(c);
        }
    }
    match (left, right) {
        (None, None) => diam,
        (Some(l), None) => l,
        (None, Some(r)) => r,
        (Some(l), Some(r)) => {
            if l.radius <= r.radius {
                l
            } else {
                r
            }
        }
    }
}

fn circle_from_diameter(a: Point, b: Point) -> EnclosingCircle {
    let center = Point::new((a.x + b.x) / 2.0, (a.y + b.y) / 2.0);
    let radius = center.distance(a).max(center.distance(b));
    EnclosingCircle { center, radius }
}

fn circumcircle(a: Point, b: Point, c: Point) -> Option<EnclosingCircle> {
    // Translate towards the centroid for numerical stability.
    let ox = (a.x.min(b.x).min(c.x) + a.x.max(b.x).max(c.x)) / 2.0;
    let oy = (a.y.min(b.y).min(c.y) + a.y.max(b.y).max(c.y)) / 2.0;
    let (ax, ay) = (a.x - ox, a.y - oy);
    let (bx, by) = (b.x - ox, b.y - oy);
    let (cx, cy) = (c.x - ox, c.y - oy);
    let d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by));
    if d == 0.0 {
        return None;
    }
    let x = ((ax * ax + ay * ay) * (by - cy)
        + (bx * bx + by * by) * (cy - ay)
        + (cx * cx + cy * cy) * (ay - by))
        / d;
    let y = ((ax * ax + ay * ay) * (cx - bx)
        + (bx * bx + by * by) * (ax - cx)
        + (cx * cx + cy * cy) * (bx - ax))
        / d;
    let center = Point::new(ox + x, oy + y);
    let radius = center
        .distance(a)
        .max(center.distance(b))
        .max(center.distance(c));
    Some(EnclosingCircle { center, radius })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> BoundingRect {
        BoundingRect::new(min_x, min_y, max_x, max_y).unwrap()
    }

    #[test]
    fn intersecting_rects_have_zero_distance() {
        let a = rect(0.0, 0.0, 4.0, 3.0);
        let b = rect(2.0, 1.0, 6.0, 5.0);
        assert_eq!(rect_distance(&a, &b), 0.0);
    }

    #[test]
    fn touching_rects_have_zero_distance() {
        let a = rect(0.0, 0.0, 1.0, 1.0);
        let edge = rect(1.0, 0.0, 2.0, 1.0);
        let corner = rect(1.0, 1.0, 2.0, 2.0);
        assert_eq!(rect_distance(&a, &edge), 0.0);
        assert_eq!(rect_distance(&a, &corner), 0.0);
        assert!(a.intersects(&edge) && a.intersects(&corner));
    }

    #[test]
    fn axis_gap_distance() {
        let a = rect(0.0, 0.0, 1.0, 1.0);
        let b = rect(3.0, 0.0, 4.0, 1.0);
        assert_eq!(rect_distance(&a, &b), 2.0);
    }

    #[test]
    fn corner_to_corner_distance() {
        let a = rect(0.0, 0.0, 1.0, 1.0);
        let b = rect(3.0, 3.0, 4.0, 4.0);
        assert!((rect_distance(&a, &b) - 8.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn distance_is_symmetric_and_nonnegative() {
        let a = rect(0.5, -2.0, 3.5, 1.0);
        let b = rect(7.0, 4.0, 9.0, 9.0);
        assert_eq!(rect_distance(&a, &b), rect_distance(&b, &a));
        assert!(rect_distance(&a, &b) >= 0.0);
    }

    // Witness that the triangle inequality fails: a long rectangle b touches
    // both a and c, so d(a,b) = d(b,c) = 0 while d(a,c) > 0.
    #[test]
    fn triangle_inequality_counterexample() {
        let a = rect(0.0, 0.0, 1.0, 1.0);
        let b = rect(0.0, 2.0, 10.0, 3.0);
        let c = rect(9.0, 0.0, 10.0, 1.0);
        let dab = rect_distance(&a, &b);
        let dbc = rect_distance(&b, &c);
        let dac = rect_distance(&a, &c);
        assert!(dac > dab + dbc);
    }

    // Witness that d(a, b) = 0 does not imply a = b.
    #[test]
    fn zero_distance_distinct_pair() {
        let a = rect(0.0, 0.0, 4.0, 4.0);
        let b = rect(1.0, 1.0, 2.0, 2.0);
        assert_ne!(a, b);
        assert_eq!(rect_distance(&a, &b), 0.0);
    }

    #[test]
    fn center_and_diagonal() {
        let r = rect(0.0, 0.0, 3.0, 4.0);
        assert_eq!(rect_center(&r), Point::new(1.5, 2.0));
        assert_eq!(rect_diagonal(&r), 5.0);
        let degenerate = rect(2.0, 2.0, 2.0, 2.0);
        assert_eq!(rect_diagonal(&degenerate), 0.0);
        let unit = rect(0.0, 0.0, 1.0, 1.0);
        assert!((rect_diagonal(&unit) - 2.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn circle_of_single_point() {
        let c = smallest_enclosing_circle(&[Point::new(2.0, 3.0)]).unwrap();
        assert_eq!(c.center, Point::new(2.0, 3.0));
        assert_eq!(c.radius, 0.0);
    }

    #[test]
    fn circle_of_two_points() {
        let c =
            smallest_enclosing_circle(&[Point::new(0.0, 0.0), Point::new(6.0, 0.0)]).unwrap();
        assert!((c.radius - 3.0).abs() < 1e-12);
        assert!((c.center.x - 3.0).abs() < 1e-12 && c.center.y.abs() < 1e-12);
    }

    #[test]
    fn circle_of_equilateral_triangle() {
        // Circumradius of an equilateral triangle with side 1 is 1/sqrt(3).
        let h = 3.0_f64.sqrt() / 2.0;
        let pts = [
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.5, h),
        ];
        let c = smallest_enclosing_circle(&pts).unwrap();
        assert!((c.radius - 1.0 / 3.0_f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn circle_covers_all_points() {
        let pts: Vec<Point> = (0..50)
            .map(|i| {
                let t = i as f64 * 0.7;
                Point::new(t.sin() * (i as f64), t.cos() * 13.0)
            })
            .collect();
        let c = smallest_enclosing_circle(&pts).unwrap();
        for p in &pts {
            assert!(c.center.distance(*p) <= c.radius + 1e-9);
        }
        // Minimality witness: shrinking the radius uncovers at least one point.
        let shrunk = c.radius - 1e-6;
        assert!(pts.iter().any(|p| c.center.distance(*p) > shrunk));
    }

    #[test]
    fn empty_point_set_is_an_error() {
        assert!(smallest_enclosing_circle(&[]).is_err());
    }

    #[test]
    fn degenerate_rect_rejected() {
        assert!(BoundingRect::new(1.0, 0.0, 0.0, 0.0).is_err());
    }
}

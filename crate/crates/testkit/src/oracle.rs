//! Brute-force reference implementations. Each oracle takes an
//! independent algorithmic route from the code it checks: rectangle
//! distance via boundary sampling against edge segments, enclosing circles
//! via exhaustive support enumeration, spatial scores via an explicit full
//! distance matrix, and morphology via direct window scans.

use metscan_core::geometry::{
    rect_distance, BoundingRect, EnclosingCircle, Impurity, Point,
};
use metscan_core::ingest::Scan;
use metscan_core::spatial::SpatialParams;

/// Samples per rectangle edge in the boundary-distance oracle. Corners are
/// always included, which is what makes the oracle exact for axis-aligned
/// rectangles; the dense samples are belt and braces.
const EDGE_SAMPLES: usize = 64;

fn corners(r: &BoundingRect) -> [Point; 4] {
    [
        Point::new(r.min_x, r.min_y),
        Point::new(r.max_x, r.min_y),
        Point::new(r.max_x, r.max_y),
        Point::new(r.min_x, r.max_y),
    ]
}

fn edges(r: &BoundingRect) -> [(Point, Point); 4] {
    let c = corners(r);
    [(c[0], c[1]), (c[1], c[2]), (c[2], c[3]), (c[3], c[0])]
}

fn boundary_samples(r: &BoundingRect) -> Vec<Point> {
    let mut pts = corners(r).to_vec();
    for (a, b) in edges(r) {
        for i in 1..EDGE_SAMPLES {
            let t = i as f64 / EDGE_SAMPLES as f64;
            pts.push(Point::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t));
        }
    }
    pts
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (vx, vy) = (b.x - a.x, b.y - a.y);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * vx + (p.y - a.y) * vy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.x + t * vx, a.y + t * vy);
    ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt()
}

/// Interval-logic intersection test (touching counts as intersecting).
pub fn rects_intersect_oracle(a: &BoundingRect, b: &BoundingRect) -> bool {
    !(a.max_x < b.min_x || b.max_x < a.min_x || a.max_y < b.min_y || b.max_y < a.min_y)
}

/// Boundary-sampling distance oracle: 0 on intersection, otherwise the
/// minimum distance from sampled boundary points of one rectangle to the
/// edge segments of the other, both ways around.
pub fn rect_distance_oracle(a: &BoundingRect, b: &BoundingRect) -> f64 {
    if rects_intersect_oracle(a, b) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for p in boundary_samples(a) {
        for (s, e) in edges(b) {
            best = best.min(point_segment_distance(p, s, e));
        }
    }
    for p in boundary_samples(b) {
        for (s, e) in edges(a) {
            best = best.min(point_segment_distance(p, s, e));
        }
    }
    best
}

/// Exhaustive smallest-enclosing-circle oracle: tries every circle
/// determined by a 2-point diameter or 3-point circumcircle and keeps the
/// smallest that covers all points. O(n^4), refused above 40 points.
pub fn oracle_enclosing_circle(points: &[Point]) -> EnclosingCircle {
    assert!(
        (1..=40).contains(&points.len()),
        "oracle is O(n^4); it accepts 1..=40 points, got {}",
        points.len()
    );
    const EPS: f64 = 1e-9;
    let covers = |c: &EnclosingCircle| points.iter().all(|p| c.center.distance(*p) <= c.radius + EPS);

    let mut best = EnclosingCircle {
        center: points[0],
        radius: f64::INFINITY,
    };
    if points.len() == 1 {
        return EnclosingCircle {
            center: points[0],
            radius: 0.0,
        };
    }
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let center = Point::new(
                (points[i].x + points[j].x) / 2.0,
                (points[i].y + points[j].y) / 2.0,
            );
            let c = EnclosingCircle {
                center,
                radius: center.distance(points[i]).max(center.distance(points[j])),
            };
            if c.radius < best.radius && covers(&c) {
                best = c;
            }
            for k in j + 1..points.len() {
                if let Some(c) = circumcircle(points[i], points[j], points[k]) {
                    if c.radius < best.radius && covers(&c) {
                        best = c;
                    }
                }
            }
        }
    }
    best
}

fn circumcircle(a: Point, b: Point, c: Point) -> Option<EnclosingCircle> {
    let d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
    if d == 0.0 {
        return None;
    }
    let a2 = a.x * a.x + a.y * a.y;
    let b2 = b.x * b.x + b.y * b.y;
    let c2 = c.x * c.x + c.y * c.y;
    let ux = (a2 * (b.y - c.y) + b2 * (c.y - a.y) + c2 * (a.y - b.y)) / d;
    let uy = (a2 * (c.x - b.x) + b2 * (a.x - c.x) + c2 * (b.x - a.x)) / d;
    let center = Point::new(ux, uy);
    let radius = center
        .distance(a)
        .max(center.distance(b))
        .max(center.distance(c));
    Some(EnclosingCircle { center, radius })
}

/// Naive weighted-kth-NN reference: materializes the full weighted distance
/// matrix, sorts each row explicitly, applies the identical clamp and
/// degenerate min-max rules. Shares `rect_distance` (verified separately by
/// the boundary oracle) so agreement with the implementation is bitwise.
pub fn oracle_spatial_scores(scan: &Scan, params: &SpatialParams) -> Result<Vec<f64>, String> {
    let imps: &[Impurity] = &scan.impurities;
    let n = imps.len();
    if n < 2 {
        return Err(format!("scan {} has fewer than 2 impurities", scan.scan_id));
    }
    if params.k == 0 {
        return Err("k must be at least 1".into());
    }
    let by_id: Vec<&Impurity> = {
        let mut v: Vec<&Impurity> = imps.iter().collect();
        v.sort_by_key(|imp| imp.id);
        v
    };
    let mut matrix = vec![vec![f64::NAN; n]; n];
    for i in 0..n {
        for o in 0..n {
            if i != o {
                let ratio = by_id[i].area_f64() / by_id[o].area_f64();
                matrix[i][o] =
                    ratio.powf(params.c1) * rect_distance(&by_id[i].rect, &by_id[o].rect);
            }
        }
    }
    let k = params.k.min(n - 1);
    let mut raw = vec![0.0; n];
    for i in 0..n {
        let mut row: Vec<(f64, usize)> = (0..n)
            .filter(|&o| o != i)
            .map(|o| (matrix[i][o], o))
            .collect();
        row.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        raw[i] = by_id[i].area_f64() * row[k - 1].0.powf(params.c2);
    }
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        for v in &mut raw {
            *v = (*v - min) / (max - min);
        }
    } else {
        raw.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(raw)
}

/// Direct-definition binary erosion: a pixel survives when the whole
/// square window lies inside the foreground (outside counts as background).
pub fn erode_naive(src: &[u8], width: usize, kernel: usize) -> Vec<u8> {
    window_scan(src, width, kernel, true)
}

/// Direct-definition binary dilation.
pub fn dilate_naive(src: &[u8], width: usize, kernel: usize) -> Vec<u8> {
    window_scan(src, width, kernel, false)
}

fn window_scan(src: &[u8], width: usize, kernel: usize, all: bool) -> Vec<u8> {
    assert!(kernel % 2 == 1, "kernel must be odd");
    let height = src.len() / width;
    let r = (kernel / 2) as i64;
    let mut out = vec![0u8; src.len()];
    for y in 0..height as i64 {
        for x in 0..width as i64 {
            let mut acc = all;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x + dx, y + dy);
                    let v = if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        0u8
                    } else {
                        src[ny as usize * width + nx as usize]
                    };
                    if all {
                        acc &= v == 1;
                    } else {
                        acc |= v == 1;
                    }
                }
            }
            out[y as usize * width + x as usize] = u8::from(acc);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> BoundingRect {
        BoundingRect::new(min_x, min_y, max_x, max_y).unwrap()
    }

    #[test]
    fn boundary_oracle_known_cases() {
        let a = rect(0.0, 0.0, 1.0, 1.0);
        assert_eq!(rect_distance_oracle(&a, &rect(3.0, 0.0, 4.0, 1.0)), 2.0);
        let corner = rect_distance_oracle(&a, &rect(3.0, 3.0, 4.0, 4.0));
        assert!((corner - 8.0f64.sqrt()).abs() < 1e-12);
        assert_eq!(rect_distance_oracle(&a, &rect(0.5, 0.5, 2.0, 2.0)), 0.0);
    }

    #[test]
    fn circle_oracle_collinear_triple() {
        let pts = [
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(5.0, 0.0),
        ];
        let c = oracle_enclosing_circle(&pts);
        assert!((c.radius - 2.5).abs() < 1e-12);
        assert!((c.center.x - 2.5).abs() < 1e-12);
    }

    #[test]
    fn circle_oracle_equilateral() {
        let h = 3.0f64.sqrt() / 2.0;
        let pts = [
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.5, h),
        ];
        let c = oracle_enclosing_circle(&pts);
        assert!((c.radius - 1.0 / 3.0f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    #[should_panic(expected = "O(n^4)")]
    fn circle_oracle_refuses_large_inputs() {
        let pts: Vec<Point> = (0..41).map(|i| Point::new(i as f64, 0.0)).collect();
        oracle_enclosing_circle(&pts);
    }

    #[test]
    fn naive_morphology_tiny_cases() {
        // A 3x3 block in a 5x5 frame erodes to its center pixel.
        let mut img = vec![0u8; 25];
        for y in 1..4 {
            for x in 1..4 {
                img[y * 5 + x] = 1;
            }
        }
        let eroded = erode_naive(&img, 5, 3);
        let lit: Vec<usize> = (0..25).filter(|&i| eroded[i] == 1).collect();
        assert_eq!(lit, vec![12]);
        let dilated = dilate_naive(&eroded, 5, 3);
        assert_eq!(dilated, img);
    }
}

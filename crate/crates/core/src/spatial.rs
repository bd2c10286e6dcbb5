//! Spatial anomaly: scores each impurity by how distant and big it is
//! compared to its neighbourhood, using a weighted k-th-nearest-neighbour
//! rule over the bounding-rectangle distance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geometry::{rect_distance, Impurity};
use crate::ingest::Scan;
use crate::score::{min_max_normalize, ScoreSet};
use crate::Result;

/// Parameters of the weighted k-th-NN score.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialParams {
    /// Neighbour rank the score is taken from (1-indexed).
    pub k: usize,
    /// Exponent of the area ratio inside the weighted distance.
    pub c1: f64,
    /// Exponent applied to the k-th weighted distance.
    pub c2: f64,
}

impl Default for SpatialParams {
    fn default() -> Self {
        Self {
            k: 50,
            c1: 4.0,
            c2: 2.0,
        }
    }
}

/// Weighted distance from impurity `i` to impurity `o`:
/// `(Area(i)/Area(o))^c1 * rect_distance(i, o)`. Asymmetric by design.
pub fn weighted_dist(i: &Impurity, o: &Impurity, c1: f64) -> Result<f64> {
    if o.area == 0 {
        return Err(Error::invalid(format!(
            "impurity {} has zero area",
            o.id
        )));
    }
    Ok(weighted_dist_unchecked(i, o, c1))
}

#[inline]
fn weighted_dist_unchecked(i: &Impurity, o: &Impurity, c1: f64) -> f64 {
    (i.area_f64() / o.area_f64()).powf(c1) * rect_distance(&i.rect, &o.rect)
}

/// Raw (un-normalized) spatial scores, indexed by impurity id.
///
/// For each impurity the weighted distances to all others are sorted
/// ascending (ties broken by neighbour id), the k-th smallest is raised to
/// `c2` and multiplied by the impurity's own area. `k` is clamped to `n-1`
/// on small scans.
pub fn spatial_scores_raw(scan: &Scan, params: &SpatialParams) -> Result<Vec<f64>> {
    let n = scan.impurities.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "scan {}: spatial scoring needs at least 2 impurities, found {n}",
            scan.scan_id
        )));
    }
    if params.k == 0 {
        return Err(Error::invalid("spatial k must be at least 1"));
    }
    if let Some(bad) = scan.impurities.iter().find(|imp| imp.area == 0) {
        return Err(Error::invalid(format!(
            "scan {}: impurity {} has zero area",
            scan.scan_id, bad.id
        )));
    }
    let k = if params.k > n - 1 {
        log::warn!(
            "scan {}: k={} exceeds n-1={}, clamping",
            scan.scan_id,
            params.k,
            n - 1
        );
        n - 1
    } else {
        params.k
    };

    // Embarrassingly parallel per impurity; results are written back in id
    // order so the output is identical to sequential execution.
    let scored: Vec<(usize, f64)> = scan
        .impurities
        .par_iter()
        .map(|i| {
            let mut l: Vec<(f64, usize)> = scan
                .impurities
                .iter()
                .filter(|o| o.id != i.id)
                .map(|o| (weighted_dist_unchecked(i, o, params.c1), o.id))
                .collect();
            l.sort_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .expect("weighted distances are finite")
                    .then(a.1.cmp(&b.1))
            });
            let kth = l[k - 1].0;
            (i.id, i.area_f64() * kth.powf(params.c2))
        })
        .collect();

    let mut out = vec![0.0; n];
    for (id, v) in scored {
        out[id] = v;
    }
    Ok(out)
}

/// Per-scan normalized spatial scores.
pub fn spatial_scores(scan: &Scan, params: &SpatialParams) -> Result<ScoreSet> {
    let mut raw = spatial_scores_raw(scan, params)?;
    min_max_normalize(&mut raw);
    let mut set = ScoreSet::new(scan.scan_id.clone());
    set.spatial = Some(raw);
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingRect;

    pub(crate) fn unit_square_at(id: usize, x: f64) -> Impurity {
        Impurity {
            id,
            contour: vec![],
            area: 1,
            rect: BoundingRect::new(x, 0.0, x + 1.0, 1.0).unwrap(),
            shape_image: None,
        }
    }

    fn scan_of(impurities: Vec<Impurity>) -> Scan {
        Scan {
            scan_id: "t".into(),
            width: 1000,
            height: 1000,
            impurities,
        }
    }

    #[test]
    fn weighted_dist_identity_ratio() {
        let a = unit_square_at(0, 0.0);
        let b = unit_square_at(1, 10.0);
        // Equal areas: the ratio term is 1, distance passes through.
        assert_eq!(weighted_dist(&a, &b, 4.0).unwrap(), 9.0);
    }

    #[test]
    fn weighted_dist_direct_substitution() {
        let mut a = unit_square_at(0, 0.0);
        a.area = 4;
        let mut b = unit_square_at(1, 3.0);
        b.area = 1;
        // distance 2, ratio 4^4 = 256 -> 512.
        assert_eq!(weighted_dist(&a, &b, 4.0).unwrap(), 512.0);
    }

    #[test]
    fn weighted_dist_zero_for_intersecting() {
        let mut a = unit_square_at(0, 0.0);
        a.area = 17;
        let b = unit_square_at(1, 0.5);
        assert_eq!(weighted_dist(&a, &b, 4.0).unwrap(), 0.0);
    }

    #[test]
    fn zero_area_neighbour_is_an_error() {
        let a = unit_square_at(0, 0.0);
        let mut b = unit_square_at(1, 3.0);
        b.area = 0;
        assert!(weighted_dist(&a, &b, 4.0).is_err());
    }

    #[test]
    fn equidistant_line_degenerates_to_zero() {
        // Three identical unit squares at x = 0, 10, 20 with k=1: every
        // nearest weighted distance is 9, raw scores all 1*81, min-max
        // collapses to zero.
        let scan = scan_of(vec![
            unit_square_at(0, 0.0),
            unit_square_at(1, 10.0),
            unit_square_at(2, 20.0),
        ]);
        let params = SpatialParams {
            k: 1,
            ..SpatialParams::default()
        };
        let raw = spatial_scores_raw(&scan, &params).unwrap();
        assert_eq!(raw, vec![81.0, 81.0, 81.0]);
        let set = spatial_scores(&scan, &params).unwrap();
        assert_eq!(set.spatial.unwrap(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn far_square_scores_highest() {
        let scan = scan_of(vec![
            unit_square_at(0, 0.0),
            unit_square_at(1, 3.0),
            unit_square_at(2, 500.0),
        ]);
        let params = SpatialParams {
            k: 1,
            ..SpatialParams::default()
        };
        let scores = spatial_scores(&scan, &params).unwrap().spatial.unwrap();
        assert_eq!(scores[2], 1.0);
        assert_eq!(scores[0], 0.0);
        assert_eq!(scores[1], 0.0);
    }

    #[test]
    fn oversized_k_clamps_to_n_minus_1() {
        let impurities: Vec<Impurity> =
            (0..10).map(|i| unit_square_at(i, 7.0 * i as f64)).collect();
        let scan = scan_of(impurities);
        let clamped = spatial_scores(
            &scan,
            &SpatialParams {
                k: 50,
                ..SpatialParams::default()
            },
        )
        .unwrap();
        let explicit = spatial_scores(
            &scan,
            &SpatialParams {
                k: 9,
                ..SpatialParams::default()
            },
        )
        .unwrap();
        assert_eq!(clamped, explicit);
    }

    #[test]
    fn fewer_than_two_impurities_is_an_error() {
        let scan = scan_of(vec![unit_square_at(0, 0.0)]);
        let err = spatial_scores(&scan, &SpatialParams::default()).unwrap_err();
        assert!(err.to_string().contains("scan t"));
    }

    #[test]
    fn enumeration_order_does_not_change_scores() {
        let impurities = vec![
            unit_square_at(0, 0.0),
            unit_square_at(1, 4.0),
            unit_square_at(2, 11.0),
            unit_square_at(3, 30.0),
        ];
        let mut shuffled = impurities.clone();
        shuffled.reverse();
        let params = SpatialParams {
            k: 2,
            ..SpatialParams::default()
        };
        let a = spatial_scores_raw(&scan_of(impurities), &params).unwrap();
        let b = spatial_scores_raw(&scan_of(shuffled), &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn raw_score_scale_covariance() {
        // Scaling geometry by s multiplies distances by s and areas by s^2,
        // so raw scores scale by s^(2+c2); the ranking is unchanged.
        let base = vec![
            unit_square_at(0, 0.0),
            unit_square_at(1, 5.0),
            unit_square_at(2, 17.0),
            unit_square_at(3, 23.0),
        ];
        let s = 2.0;
        let scaled: Vec<Impurity> = base
            .iter()
            .map(|imp| Impurity {
                id: imp.id,
                contour: vec![],
                area: imp.area * 4, // s^2
                rect: BoundingRect::new(
                    imp.rect.min_x * s,
                    imp.rect.min_y * s,
                    imp.rect.max_x * s,
                    imp.rect.max_y * s,
                )
                .unwrap(),
                shape_image: None,
            })
            .collect();
        let params = SpatialParams {
            k: 1,
            ..SpatialParams::default()
        };
        let raw = spatial_scores_raw(&scan_of(base), &params).unwrap();
        let raw_scaled = spatial_scores_raw(&scan_of(scaled), &params).unwrap();
        let factor = s.powf(2.0 + params.c2);
        for (a, b) in raw.iter().zip(&raw_scaled) {
            assert!((b - a * factor).abs() <= 1e-9 * b.abs().max(1.0));
        }
        let order = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&p, &q| v[p].partial_cmp(&v[q]).unwrap().then(p.cmp(&q)));
            idx
        };
        assert_eq!(order(&raw), order(&raw_scaled));
    }
}

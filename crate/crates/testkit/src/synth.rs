//! Deterministic synthetic scans and shape corpora: disks and ellipses as
//! the normal population, crosses and rods as anomalous shapes, optional
//! spatial outliers and a dense anomalous region. Shapes never overlap by
//! construction, so every drawn shape is one connected component.

use metscan_core::ingest::{BinaryImage, SHAPE_IMAGE_SIZE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Disk,
    Ellipse,
    Cross,
    Rod,
}

impl ShapeKind {
    pub fn is_anomalous(self) -> bool {
        matches!(self, ShapeKind::Cross | ShapeKind::Rod)
    }
}

/// Ground truth for one placed shape.
#[derive(Debug, Clone, Copy)]
pub struct PlacedShape {
    pub kind: ShapeKind,
    pub cx: f64,
    pub cy: f64,
    /// Half side of the shape's bounding box.
    pub half: u32,
    /// True when the shape was placed as a spatial outlier.
    pub far: bool,
    /// True when the shape belongs to the dense anomalous region.
    pub dense: bool,
}

/// A tight pack of large anomalous shapes, the "defect" a scan may carry.
#[derive(Debug, Clone, Copy)]
pub struct DenseRegion {
    /// Region center as a fraction of the canvas.
    pub cx_frac: f64,
    pub cy_frac: f64,
    pub count: usize,
    pub half: u32,
}

/// Generation recipe for one synthetic scan.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub width: u32,
    pub height: u32,
    pub disks: usize,
    pub ellipses: usize,
    pub crosses: usize,
    pub rods: usize,
    /// Disks placed in a reserved band far from the main population.
    pub far_disks: usize,
    pub dense_region: Option<DenseRegion>,
    pub min_half: u32,
    pub max_half: u32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            width: 600,
            height: 400,
            disks: 20,
            ellipses: 10,
            crosses: 3,
            rods: 3,
            far_disks: 0,
            dense_region: None,
            min_half: 4,
            max_half: 10,
            seed: 1,
        }
    }
}

const GAP: i64 = 4;
const MARGIN: i64 = 3;
const MAX_ATTEMPTS: usize = 2000;

struct Placer {
    width: i64,
    height: i64,
    boxes: Vec<(i64, i64, i64, i64)>,
}

impl Placer {
    fn try_claim(&mut self, cx: i64, cy: i64, half: i64) -> bool {
        let (x0, y0, x1, y1) = (cx - half, cy - half, cx + half, cy + half);
        if x0 < MARGIN || y0 < MARGIN || x1 >= self.width - MARGIN || y1 >= self.height - MARGIN {
            return false;
        }
        for &(bx0, by0, bx1, by1) in &self.boxes {
            if x0 - GAP <= bx1 && bx0 - GAP <= x1 && y0 - GAP <= by1 && by0 - GAP <= y1 {
                return false;
            }
        }
        self.boxes.push((x0, y0, x1, y1));
        true
    }
}

fn draw(mask: &mut BinaryImage, kind: ShapeKind, cx: i64, cy: i64, half: i64, variant: u32) {
    let t = (half / 5).max(1) as f64;
    for y in (cy - half)..=(cy + half) {
        for x in (cx - half)..=(cx + half) {
            let dx = (x - cx) as f64;
            let dy = (y - cy) as f64;
            let h = half as f64;
            let lit = match kind {
                ShapeKind::Disk => (dx * dx + dy * dy).sqrt() <= h,
                ShapeKind::Ellipse => {
                    let (a, b) = if variant % 2 == 0 {
                        (h, h * 0.55)
                    } else {
                        (h * 0.55, h)
                    };
                    (dx / a) * (dx / a) + (dy / b) * (dy / b) <= 1.0
                }
                ShapeKind::Cross => (dx - dy).abs() <= t || (dx + dy).abs() <= t,
                ShapeKind::Rod => match variant % 3 {
                    0 => dy.abs() <= t,
                    1 => dx.abs() <= t,
                    _ => (dx - dy).abs() <= t,
                },
            };
            if lit {
                mask.set(x as u32, y as u32, 1);
            }
        }
    }
}

/// Generates the mask plus per-shape ground truth. Deterministic for a
/// given spec. Fails when the canvas cannot hold the requested shapes.
pub fn generate_synthetic_scan(spec: &SynthSpec) -> Result<(BinaryImage, Vec<PlacedShape>), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut mask = BinaryImage::new(spec.width, spec.height);
    let mut placer = Placer {
        width: spec.width as i64,
        height: spec.height as i64,
        boxes: Vec::new(),
    };
    let mut truth = Vec::new();

    // The main population lives in the left part of the canvas whenever a
    // far band is reserved on the right.
    let main_max_x = if spec.far_disks > 0 {
        (spec.width as f64 * 0.58) as i64
    } else {
        spec.width as i64
    };

    // Dense region first: a jittered grid of big anomalous shapes.
    if let Some(dense) = spec.dense_region {
        let cx = (spec.width as f64 * dense.cx_frac) as i64;
        let cy = (spec.height as f64 * dense.cy_frac) as i64;
        let step = 2 * dense.half as i64 + GAP + 2;
        let side = (dense.count as f64).sqrt().ceil() as i64;
        let mut placed = 0;
        'grid: for gy in 0..side {
            for gx in 0..side {
                if placed == dense.count {
                    break 'grid;
                }
                let jx = rng.gen_range(-2..=2);
                let jy = rng.gen_range(-2..=2);
                let px = cx + (gx - side / 2) * step + jx;
                let py = cy + (gy - side / 2) * step + jy;
                if !placer.try_claim(px, py, dense.half as i64) {
                    return Err(format!(
                        "dense region does not fit at ({px},{py}) half {}",
                        dense.half
                    ));
                }
                draw(&mut mask, ShapeKind::Cross, px, py, dense.half as i64, placed as u32);
                truth.push(PlacedShape {
                    kind: ShapeKind::Cross,
                    cx: px as f64,
                    cy: py as f64,
                    half: dense.half,
                    far: false,
                    dense: true,
                });
                placed += 1;
            }
        }
    }

    let scatter = |count: usize,
                       kind: ShapeKind,
                       x_range: (i64, i64),
                       rng: &mut ChaCha8Rng,
                       placer: &mut Placer,
                       mask: &mut BinaryImage,
                       truth: &mut Vec<PlacedShape>,
                       far: bool|
     -> Result<(), String> {
        for n in 0..count {
            let half = rng.gen_range(spec.min_half..=spec.max_half) as i64;
            let mut attempts = 0;
            loop {
                attempts += 1;
                if attempts > MAX_ATTEMPTS {
                    return Err(format!(
                        "could not place {kind:?} #{n}: canvas too small for the spec"
                    ));
                }
                let lo = x_range.0 + half + MARGIN;
                let hi = x_range.1 - half - MARGIN;
                if lo >= hi {
                    return Err("placement band narrower than the shape".into());
                }
                let cx = rng.gen_range(lo..hi);
                let cy = rng.gen_range(half + MARGIN..spec.height as i64 - half - MARGIN);
                if placer.try_claim(cx, cy, half) {
                    draw(mask, kind, cx, cy, half, n as u32);
                    truth.push(PlacedShape {
                        kind,
                        cx: cx as f64,
                        cy: cy as f64,
                        half: half as u32,
                        far,
                        dense: false,
                    });
                    break;
                }
            }
        }
        Ok(())
    };

    scatter(spec.disks, ShapeKind::Disk, (0, main_max_x), &mut rng, &mut placer, &mut mask, &mut truth, false)?;
    scatter(spec.ellipses, ShapeKind::Ellipse, (0, main_max_x), &mut rng, &mut placer, &mut mask, &mut truth, false)?;
    scatter(spec.crosses, ShapeKind::Cross, (0, main_max_x), &mut rng, &mut placer, &mut mask, &mut truth, false)?;
    scatter(spec.rods, ShapeKind::Rod, (0, main_max_x), &mut rng, &mut placer, &mut mask, &mut truth, false)?;
    if spec.far_disks > 0 {
        let band = ((spec.width as f64 * 0.82) as i64, spec.width as i64);
        scatter(spec.far_disks, ShapeKind::Disk, band, &mut rng, &mut placer, &mut mask, &mut truth, true)?;
    }

    Ok((mask, truth))
}

/// A corpus of normalized-style 100x100 shape images: disks and ellipses
/// (normal) versus crosses and rods (anomalous), the dichotomy the shape
/// model has to separate.
pub struct ShapeCorpus {
    pub normal: Vec<BinaryImage>,
    pub anomalous: Vec<BinaryImage>,
}

pub fn generate_shape_corpus(n_normal: usize, n_anomalous: usize, seed: u64) -> ShapeCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = SHAPE_IMAGE_SIZE as i64;
    let c = (size - 1) as f64 / 2.0;

    let image_with = |lit: &dyn Fn(f64, f64) -> bool| {
        let mut img = BinaryImage::new(size as u32, size as u32);
        for y in 0..size {
            for x in 0..size {
                if lit(x as f64 - c, y as f64 - c) {
                    img.set(x as u32, y as u32, 1);
                }
            }
        }
        img
    };

    let mut normal = Vec::with_capacity(n_normal);
    for i in 0..n_normal {
        if i % 2 == 0 {
            let r = rng.gen_range(44.0..49.5);
            normal.push(image_with(&|dx, dy| (dx * dx + dy * dy).sqrt() <= r));
        } else {
            let b = rng.gen_range(28.0..49.0);
            let horizontal = rng.gen_bool(0.5);
            normal.push(image_with(&|dx, dy| {
                let (a2, b2) = if horizontal {
                    (49.5f64 * 49.5, b * b)
                } else {
                    (b * b, 49.5f64 * 49.5)
                };
                dx * dx / a2 + dy * dy / b2 <= 1.0
            }));
        }
    }

    let mut anomalous = Vec::with_capacity(n_anomalous);
    for i in 0..n_anomalous {
        if i % 2 == 0 {
            let t = rng.gen_range(4.0..8.0);
            anomalous.push(image_with(&|dx, dy| {
                (dx - dy).abs() <= t || (dx + dy).abs() <= t
            }));
        } else {
            let t = rng.gen_range(4.0..7.0);
            let orient = rng.gen_range(0..3);
            anomalous.push(image_with(&|dx, dy| match orient {
                0 => dy.abs() <= t,
                1 => dx.abs() <= t,
                _ => (dx - dy).abs() <= t,
            }));
        }
    }

    ShapeCorpus { normal, anomalous }
}

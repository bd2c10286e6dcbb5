//! Mask ingestion: loads expert-tagged mask images, extracts impurities as
//! connected components with traced contours, and derives the normalized
//! 100x100 shape images consumed by the shape measure.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geometry::{BoundingRect, Impurity, Point};
use crate::Result;

/// Side length of normalized shape images.
pub const SHAPE_IMAGE_SIZE: usize = 100;

/// A binary raster: 1 = impurity, 0 = background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    pub width: u32,
    pub height: u32,
    pixels: Vec<u8>,
}

impl BinaryImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; (width as usize) * (height as usize)],
        }
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != (width as usize) * (height as usize) {
            return Err(Error::invalid("pixel buffer does not match dimensions"));
        }
        if pixels.iter().any(|&p| p > 1) {
            return Err(Error::invalid("binary image pixels must be 0 or 1"));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        self.pixels[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn count_ones(&self) -> u64 {
        self.pixels.iter().map(|&p| p as u64).sum()
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }
}

/// Whether tags are bright on a dark background or dark on a bright one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskPolarity {
    /// Pixels with intensity >= threshold are impurities.
    #[default]
    LightOnDark,
    /// Pixels with intensity < threshold are impurities.
    DarkOnLight,
}

/// Pixel connectivity for component extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Connectivity {
    Four,
    /// Diagonal neighbours belong to the same component. Metallographic
    /// blobs touch diagonally, so this is the default.
    #[default]
    Eight,
}

/// One metallographic image's impurity collection.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub scan_id: String,
    pub width: u32,
    pub height: u32,
    pub impurities: Vec<Impurity>,
}

impl Scan {
    /// Derives and caches the normalized shape image of every impurity.
    pub fn ensure_shape_images(&mut self) {
        for imp in &mut self.impurities {
            if imp.shape_image.is_none() {
                imp.shape_image = Some(normalize_shape_image(imp));
            }
        }
    }

    pub fn image_diagonal(&self) -> f64 {
        let w = self.width as f64;
        let h = self.height as f64;
        (w * w + h * h).sqrt()
    }
}

/// Loads a raster mask and binarizes it.
///
/// Color images are converted to grayscale by the mean of the channels.
/// With [`MaskPolarity::LightOnDark`], intensity >= `binarize_threshold`
/// maps to 1.
pub fn load_mask(
    path: impl AsRef<Path>,
    binarize_threshold: u8,
    polarity: MaskPolarity,
) -> Result<BinaryImage> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let img = image::open(path).map_err(|e| Error::Decode {
        path: display.clone(),
        reason: e.to_string(),
    })?;
    let rgb = img.into_rgb8();
    let (width, height) = rgb.dimensions();
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!("zero-area image: {display}")));
    }
    let mut out = BinaryImage::new(width, height);
    for (x, y, p) in rgb.enumerate_pixels() {
        let mean = (p.0[0] as u16 + p.0[1] as u16 + p.0[2] as u16) as f32 / 3.0;
        let lit = match polarity {
            MaskPolarity::LightOnDark => mean >= binarize_threshold as f32,
            MaskPolarity::DarkOnLight => mean < binarize_threshold as f32,
        };
        if lit {
            out.set(x, y, 1);
        }
    }
    Ok(out)
}

/// Writes a mask as a lossless 8-bit grayscale PNG (impurity = 255).
pub fn save_mask_png(mask: &BinaryImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut img = image::GrayImage::new(mask.width, mask.height);
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) == 1 {
                img.put_pixel(x, y, image::Luma([255]));
            }
        }
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Decode {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
}

/// Fallback for outline-only expert tags: fills background regions that
/// cannot reach the image border (4-connectivity), turning ring tags into
/// solid regions.
pub fn fill_holes(mask: &BinaryImage) -> BinaryImage {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let mut reached = vec![false; w * h];
    let mut queue: VecDeque<(usize, usize)> = VecDeque::new();
    let seed = |x: usize, y: usize, queue: &mut VecDeque<(usize, usize)>, reached: &mut Vec<bool>| {
        if mask.pixels[y * w + x] == 0 && !reached[y * w + x] {
            reached[y * w + x] = true;
            queue.push_back((x, y));
        }
    };
    for x in 0..w {
        seed(x, 0, &mut queue, &mut reached);
        seed(x, h - 1, &mut queue, &mut reached);
    }
    for y in 0..h {
        seed(0, y, &mut queue, &mut reached);
        seed(w - 1, y, &mut queue, &mut reached);
    }
    while let Some((x, y)) = queue.pop_front() {
        let mut visit = |nx: usize, ny: usize, queue: &mut VecDeque<(usize, usize)>| {
            if mask.pixels[ny * w + nx] == 0 && !reached[ny * w + nx] {
                reached[ny * w + nx] = true;
                queue.push_back((nx, ny));
            }
        };
        if x > 0 {
            visit(x - 1, y, &mut queue);
        }
        if x + 1 < w {
            visit(x + 1, y, &mut queue);
        }
        if y > 0 {
            visit(x, y - 1, &mut queue);
        }
        if y + 1 < h {
            visit(x, y + 1, &mut queue);
        }
    }
    let mut out = mask.clone();
    for idx in 0..w * h {
        if mask.pixels[idx] == 0 && !reached[idx] {
            out.pixels[idx] = 1;
        }
    }
    out
}

// Moore neighbourhood, clockwise in image coordinates (y grows downward).
const DIRS: [(i64, i64); 8] = [
    (1, 0),   // E
    (1, 1),   // SE
    (0, 1),   // S
    (-1, 1),  // SW
    (-1, 0),  // W
    (-1, -1), // NW
    (0, -1),  // N
    (1, -1),  // NE
];

/// Extracts one [`Impurity`] per connected component of the mask.
///
/// Ids are assigned in raster-scan order of component discovery, which makes
/// every downstream tie-break reproducible. An empty mask yields an empty
/// scan.
pub fn extract_impurities(mask: &BinaryImage, scan_id: &str, conn: Connectivity) -> Scan {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut labels: Vec<u32> = vec![0; (w * h) as usize]; // 0 = unlabeled
    let neighbours: &[(i64, i64)] = match conn {
        Connectivity::Four => &[(1, 0), (0, 1), (-1, 0), (0, -1)],
        Connectivity::Eight => &DIRS,
    };

    let mut impurities = Vec::new();
    let mut next_label: u32 = 0;
    for y in 0..h {
        for x in 0..w {
            let idx = (y * w + x) as usize;
            if mask.pixels[idx] == 0 || labels[idx] != 0 {
                continue;
            }
            next_label += 1;
            let label = next_label;
            let mut queue = VecDeque::new();
            queue.push_back((x, y));
            labels[idx] = label;
            let (mut min_x, mut min_y, mut max_x, mut max_y) = (x, y, x, y);
            let mut area: u64 = 0;
            while let Some((cx, cy)) = queue.pop_front() {
                area += 1;
                min_x = min_x.min(cx);
                max_x = max_x.max(cx);
                min_y = min_y.min(cy);
                max_y = max_y.max(cy);
                for &(dx, dy) in neighbours {
                    let (nx, ny) = (cx + dx, cy + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let nidx = (ny * w + nx) as usize;
                    if mask.pixels[nidx] == 1 && labels[nidx] == 0 {
                        labels[nidx] = label;
                        queue.push_back((nx, ny));
                    }
                }
            }
            let contour = trace_contour(&labels, w, h, label, (x, y));
            let rect = BoundingRect::new(min_x as f64, min_y as f64, max_x as f64, max_y as f64)
                .expect("component extent is well ordered");
            impurities.push(Impurity {
                id: (label - 1) as usize,
                contour,
                area,
                rect,
                shape_image: None,
            });
        }
    }
    Scan {
        scan_id: scan_id.to_string(),
        width: mask.width,
        height: mask.height,
        impurities,
    }
}

/// Moore-neighbour contour tracing, clockwise, starting from the component's
/// raster-first pixel. Thin structures legitimately revisit pixels (the walk
/// passes both sides); the closing duplicate of the start pixel is trimmed.
fn trace_contour(labels: &[u32], w: i64, h: i64, label: u32, start: (i64, i64)) -> Vec<Point> {
    let at = |x: i64, y: i64| -> bool {
        x >= 0 && y >= 0 && x < w && y < h && labels[(y * w + x) as usize] == label
    };
    let mut contour = vec![Point::new(start.0 as f64, start.1 as f64)];

    // The start pixel is raster-first, so its W neighbour is background;
    // begin the clockwise scan just after W.
    let first = (1..=8).find_map(|k| {
        let d = (4 + k) % 8;
        let (dx, dy) = DIRS[d];
        at(start.0 + dx, start.1 + dy).then_some(d)
    });
    let Some(first_dir) = first else {
        return contour; // isolated pixel
    };

    let step =
        |cur: (i64, i64), backtrack_dir: usize| -> (usize, (i64, i64)) {
            for k in 1..=8 {
                let d = (backtrack_dir + k) % 8;
                let (dx, dy) = DIRS[d];
                let q = (cur.0 + dx, cur.1 + dy);
                if at(q.0, q.1) {
                    return (d, q);
                }
            }
            unreachable!("component has >= 2 pixels, a neighbour always exists");
        };

    let initial = ((start.0 + DIRS[first_dir].0, start.1 + DIRS[first_dir].1), first_dir);
    let (mut cur, mut entry) = initial;
    loop {
        contour.push(Point::new(cur.0 as f64, cur.1 as f64));
        // Backtrack pixel: the last background cell scanned before entering
        // `cur`, i.e. prev + DIRS[entry - 1]. Express it as a direction from
        // `cur` and resume the clockwise scan right after it.
        let prev = (cur.0 - DIRS[entry].0, cur.1 - DIRS[entry].1);
        let bt = (
            prev.0 + DIRS[(entry + 7) % 8].0,
            prev.1 + DIRS[(entry + 7) % 8].1,
        );
        let (bx, by) = (bt.0 - cur.0, bt.1 - cur.1);
        let bt_dir = DIRS
            .iter()
            .position(|&d| d == (bx, by))
            .expect("backtrack cell is Moore-adjacent");
        let next = step(cur, bt_dir);
        if (next.1, next.0) == initial {
            break;
        }
        cur = next.1;
        entry = next.0;
    }
    if contour.len() > 1 && contour.last() == Some(&contour[0]) {
        contour.pop();
    }
    contour
}

/// Pixels covered by an impurity, reconstructed from its contour: everything
/// inside the traced outer boundary (holes are filled; the store keeps only
/// the outer boundary). Returned as a grid over the bounding rectangle.
pub(crate) fn fill_contour(imp: &Impurity) -> (usize, usize, Vec<u8>) {
    let rw = (imp.rect.max_x - imp.rect.min_x) as usize + 1;
    let rh = (imp.rect.max_y - imp.rect.min_y) as usize + 1;
    // Pad by one so an exterior flood can wrap around the shape; the
    // 8-connected contour is a barrier the 4-connected flood cannot cross.
    let (gw, gh) = (rw + 2, rh + 2);
    let mut barrier = vec![false; gw * gh];
    for p in &imp.contour {
        let gx = (p.x - imp.rect.min_x) as usize + 1;
        let gy = (p.y - imp.rect.min_y) as usize + 1;
        barrier[gy * gw + gx] = true;
    }
    let mut outside = vec![false; gw * gh];
    let mut queue = VecDeque::new();
    outside[0] = true;
    queue.push_back((0usize, 0usize));
    while let Some((x, y)) = queue.pop_front() {
        let mut visit = |nx: usize, ny: usize, queue: &mut VecDeque<(usize, usize)>| {
            let idx = ny * gw + nx;
            if !outside[idx] && !barrier[idx] {
                outside[idx] = true;
                queue.push_back((nx, ny));
            }
        };
        if x > 0 {
            visit(x - 1, y, &mut queue);
        }
        if x + 1 < gw {
            visit(x + 1, y, &mut queue);
        }
        if y > 0 {
            visit(x, y - 1, &mut queue);
        }
        if y + 1 < gh {
            visit(x, y + 1, &mut queue);
        }
    }
    let mut filled = vec![0u8; rw * rh];
    for y in 0..rh {
        for x in 0..rw {
            if !outside[(y + 1) * gw + (x + 1)] {
                filled[y * rw + x] = 1;
            }
        }
    }
    (rw, rh, filled)
}

/// Renders the impurity into a 100x100 binary frame: translated to center,
/// the longer bounding-rectangle side scaled to 100 pixels with aspect ratio
/// preserved, nearest-neighbour resampling.
pub fn normalize_shape_image(imp: &Impurity) -> BinaryImage {
    let size = SHAPE_IMAGE_SIZE as u32;
    let mut out = BinaryImage::new(size, size);
    if imp.contour.is_empty() {
        return out;
    }
    let (rw, rh, filled) = fill_contour(imp);
    let scale = SHAPE_IMAGE_SIZE as f64 / rw.max(rh) as f64;
    let sw = ((rw as f64 * scale).round() as usize).clamp(1, SHAPE_IMAGE_SIZE);
    let sh = ((rh as f64 * scale).round() as usize).clamp(1, SHAPE_IMAGE_SIZE);
    let ox = (SHAPE_IMAGE_SIZE - sw) / 2;
    let oy = (SHAPE_IMAGE_SIZE - sh) / 2;
    for v in 0..sh {
        let sy = (((v as f64 + 0.5) / scale) as usize).min(rh - 1);
        for u in 0..sw {
            let sx = (((u as f64 + 0.5) / scale) as usize).min(rw - 1);
            if filled[sy * rw + sx] == 1 {
                out.set((ox + u) as u32, (oy + v) as u32, 1);
            }
        }
    }
    out
}

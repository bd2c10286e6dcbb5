//! Shape anomaly: how far each impurity is from its objective shape (a
//! circle). The circle-difference measure seeds normal/anomalous training
//! sets for a convolutional autoencoder; post-processed reconstruction MSE
//! is the shape score. Blank-label training (anomalous inputs paired with
//! all-zero targets) is what separates the two model variants.

pub mod model_io;
pub mod nn;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geometry::{smallest_enclosing_circle, Impurity};
use crate::ingest::{BinaryImage, Scan, SHAPE_IMAGE_SIZE};
use crate::score::{min_max_normalize, ScoreSet};
use crate::Result;

pub use nn::{Autoencoder, TrainOptions, TrainReport};

/// Training configuration for the shape model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeTrainConfig {
    /// Circle-difference score below which an impurity counts as normal.
    pub normal_threshold: f64,
    /// Circle-difference score at or above which an impurity counts as
    /// anomalous.
    pub anomalous_threshold: f64,
    pub image_size: usize,
    /// Model 1 pairs anomalous inputs with blank targets; Model 2 trains on
    /// normal impurities only.
    pub blank_labels: bool,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub rng_seed: u64,
    /// Feature maps per convolution. Desk-scale default; production-scale
    /// hardware can afford far wider stacks.
    pub channel_width: usize,
    /// Compute reconstruction MSE on the 0-255 intensity scale.
    pub mse_scale_255: bool,
}

impl Default for ShapeTrainConfig {
    fn default() -> Self {
        Self {
            normal_threshold: 0.3,
            anomalous_threshold: 0.55,
            image_size: SHAPE_IMAGE_SIZE,
            blank_labels: true,
            epochs: 30,
            learning_rate: 1e-3,
            batch_size: 32,
            rng_seed: 7,
            channel_width: 16,
            mse_scale_255: true,
        }
    }
}

impl ShapeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.normal_threshold
            && self.normal_threshold < self.anomalous_threshold
            && self.anomalous_threshold <= 1.0)
        {
            return Err(Error::Config(format!(
                "thresholds must satisfy 0 <= normal ({}) < anomalous ({}) <= 1",
                self.normal_threshold, self.anomalous_threshold
            )));
        }
        Ok(())
    }
}

/// Binarize + erode + dilate applied to reconstructions before scoring.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessParams {
    pub binarize_threshold: f64,
    /// Square structuring element side; must be odd.
    pub kernel_size: usize,
    pub erode_iterations: usize,
    pub dilate_iterations: usize,
}

impl Default for PostprocessParams {
    fn default() -> Self {
        Self {
            binarize_threshold: 0.5,
            kernel_size: 3,
            erode_iterations: 1,
            dilate_iterations: 1,
        }
    }
}

impl PostprocessParams {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size % 2 == 0 || self.kernel_size == 0 {
            return Err(Error::Config(format!(
                "morphology kernel must be odd, got {}",
                self.kernel_size
            )));
        }
        Ok(())
    }
}

/// Relative area gap between an impurity and its smallest enclosing circle,
/// clamped to [0,1]. Near 0 for disks, near 1 for thin sprawling shapes.
pub fn circle_diff_score(imp: &Impurity) -> f64 {
    let Ok(circle) = smallest_enclosing_circle(&imp.contour) else {
        return 0.0;
    };
    let circle_area = circle.area();
    if circle_area <= 0.0 {
        return 0.0; // single-pixel impurity: no meaningful enclosing circle
    }
    ((circle_area - imp.area_f64()) / circle_area).clamp(0.0, 1.0)
}

/// Splits impurities into training sets by circle-difference score:
/// normal strictly below `normal_threshold`, anomalous at or above
/// `anomalous_threshold`; the middle band is discarded.
pub fn select_training_sets(
    scores: &[f64],
    cfg: &ShapeTrainConfig,
) -> Result<(Vec<usize>, Vec<usize>)> {
    cfg.validate()?;
    if scores.is_empty() {
        return Err(Error::invalid("no circle-difference scores to split"));
    }
    let normal: Vec<usize> = (0..scores.len())
        .filter(|&i| scores[i] < cfg.normal_threshold)
        .collect();
    let anomalous: Vec<usize> = (0..scores.len())
        .filter(|&i| scores[i] >= cfg.anomalous_threshold)
        .collect();
    if normal.is_empty() {
        return Err(Error::TrainingFailed(format!(
            "no impurity scored below the normal threshold {}",
            cfg.normal_threshold
        )));
    }
    if anomalous.is_empty() && cfg.blank_labels {
        return Err(Error::TrainingFailed(format!(
            "blank-label training needs anomalous impurities (threshold {})",
            cfg.anomalous_threshold
        )));
    }
    Ok((normal, anomalous))
}

fn image_to_f32(img: &BinaryImage) -> Vec<f32> {
    img.pixels().iter().map(|&p| p as f32).collect()
}

/// Trains the shape autoencoder.
///
/// Normal images label themselves. With `blank_labels`, anomalous images
/// are added with all-zero targets; without it they are ignored entirely
/// and the model trains on normal impurities only.
pub fn train_shape_model(
    normal: &[BinaryImage],
    anomalous: &[BinaryImage],
    cfg: &ShapeTrainConfig,
) -> Result<Autoencoder> {
    cfg.validate()?;
    if normal.is_empty() {
        return Err(Error::TrainingFailed("empty normal training set".into()));
    }
    if cfg.blank_labels && anomalous.is_empty() {
        return Err(Error::TrainingFailed(
            "blank-label training needs a non-empty anomalous set".into(),
        ));
    }
    let side = cfg.image_size as u32;
    for img in normal.iter().chain(anomalous) {
        if img.width != side || img.height != side {
            return Err(Error::invalid(format!(
                "training image is {}x{}, expected {side}x{side}",
                img.width, img.height
            )));
        }
    }

    let mut inputs: Vec<Vec<f32>> = normal.iter().map(image_to_f32).collect();
    let mut targets = inputs.clone();
    if cfg.blank_labels {
        let blank = vec![0.0f32; cfg.image_size * cfg.image_size];
        for img in anomalous {
            inputs.push(image_to_f32(img));
            targets.push(blank.clone());
        }
    }

    let mut model = Autoencoder::build(cfg.image_size, cfg.channel_width, cfg.rng_seed)?;
    let opts = TrainOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate as f32,
        seed: cfg.rng_seed,
    };
    let report = nn::train(&mut model, &inputs, &targets, &opts)?;
    if let Some(last) = report.epoch_losses.last() {
        log::info!(
            "shape model trained: {} samples, {} epochs, final loss {last:.6}",
            inputs.len(),
            cfg.epochs
        );
    }
    Ok(model)
}

/// Runs the network on one shape image; output pixels are in [0,1].
pub fn reconstruct(model: &Autoencoder, image: &BinaryImage) -> Result<Vec<f32>> {
    let expected = model.descriptor.image_size as u32;
    if image.width != expected || image.height != expected {
        return Err(Error::invalid(format!(
            "reconstruct: image is {}x{}, model expects {expected}x{expected}",
            image.width, image.height
        )));
    }
    model.reconstruct_flat(&image_to_f32(image))
}

/// Binarizes a reconstruction then applies erode/dilate with a square
/// kernel. Out-of-bounds neighbourhood cells count as background.
pub fn postprocess(image: &[f32], width: usize, p: &PostprocessParams) -> Result<Vec<u8>> {
    p.validate()?;
    if width == 0 || image.len() % width != 0 {
        return Err(Error::invalid("postprocess: ragged image buffer"));
    }
    let height = image.len() / width;
    let mut bin: Vec<u8> = image
        .iter()
        .map(|&v| u8::from(v as f64 >= p.binarize_threshold))
        .collect();
    let r = (p.kernel_size / 2) as i64;
    for _ in 0..p.erode_iterations {
        bin = morph(&bin, width, height, r, true);
    }
    for _ in 0..p.dilate_iterations {
        bin = morph(&bin, width, height, r, false);
    }
    Ok(bin)
}

fn morph(src: &[u8], width: usize, height: usize, r: i64, erode: bool) -> Vec<u8> {
    let mut out = vec![0u8; src.len()];
    for y in 0..height as i64 {
        for x in 0..width as i64 {
            let mut all = true;
            let mut any = false;
            'win: for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x + dx, y + dy);
                    let v = if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        0
                    } else {
                        src[ny as usize * width + nx as usize]
                    };
                    all &= v == 1;
                    any |= v == 1;
                    if !all && any {
                        break 'win;
                    }
                }
            }
            out[y as usize * width + x as usize] = u8::from(if erode { all } else { any });
        }
    }
    out
}

/// Post-processed reconstruction MSE for every impurity, min-max normalized
/// per scan. Inputs must carry shape images (see
/// [`Scan::ensure_shape_images`]).
pub fn shape_scores(
    scan: &Scan,
    model: &Autoencoder,
    p: &PostprocessParams,
    cfg: &ShapeTrainConfig,
) -> Result<ScoreSet> {
    p.validate()?;
    for imp in &scan.impurities {
        if imp.shape_image.is_none() {
            return Err(Error::invalid(format!(
                "scan {}: impurity {} has no shape image",
                scan.scan_id, imp.id
            )));
        }
    }
    let mut raw: Vec<f64> = scan
        .impurities
        .par_iter()
        .map(|imp| {
            let img = imp.shape_image.as_ref().expect("checked above");
            let recon = reconstruct(model, img)?;
            let post = postprocess(&recon, img.width as usize, p)?;
            Ok(reconstruction_mse(img.pixels(), &post, cfg.mse_scale_255))
        })
        .collect::<Result<_>>()?;
    min_max_normalize(&mut raw);
    let mut set = ScoreSet::new(scan.scan_id.clone());
    set.shape = Some(raw);
    Ok(set)
}

/// MSE between a binary input and a post-processed binary reconstruction.
pub fn reconstruction_mse(input: &[u8], post: &[u8], scale_255: bool) -> f64 {
    let scale = if scale_255 { 255.0 } else { 1.0 };
    let sum: f64 = input
        .iter()
        .zip(post)
        .map(|(&a, &b)| {
            let d = (a as f64 - b as f64) * scale;
            d * d
        })
        .sum();
    sum / input.len() as f64
}

/// Per-impurity product of the spatial and shape channels, min-max
/// normalized: the combined anomaly measure.
pub fn combined_scores(spatial: &ScoreSet, shape: &ScoreSet) -> Result<ScoreSet> {
    let s = spatial
        .spatial
        .as_ref()
        .ok_or_else(|| Error::invalid("combined: spatial channel missing"))?;
    let h = shape
        .shape
        .as_ref()
        .ok_or_else(|| Error::invalid("combined: shape channel missing"))?;
    if spatial.scan_id != shape.scan_id {
        return Err(Error::invalid(format!(
            "combined: scan ids differ ({} vs {})",
            spatial.scan_id, shape.scan_id
        )));
    }
    if s.len() != h.len() {
        return Err(Error::invalid(format!(
            "combined: impurity counts differ ({} vs {})",
            s.len(),
            h.len()
        )));
    }
    let mut product: Vec<f64> = s.iter().zip(h).map(|(a, b)| a * b).collect();
    min_max_normalize(&mut product);
    let mut out = ScoreSet::new(spatial.scan_id.clone());
    out.combined = Some(product);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{extract_impurities, Connectivity};

    fn impurity_from_mask(rows: u32, cols: u32, lit: impl Fn(u32, u32) -> bool) -> Impurity {
        let mut mask = BinaryImage::new(cols, rows);
        for y in 0..rows {
            for x in 0..cols {
                if lit(x, y) {
                    mask.set(x, y, 1);
                }
            }
        }
        let scan = extract_impurities(&mask, "t", Connectivity::Eight);
        assert_eq!(scan.impurities.len(), 1, "expected a single component");
        scan.impurities.into_iter().next().unwrap()
    }

    #[test]
    fn disk_has_near_zero_circle_diff() {
        let (cx, cy, r) = (40.0, 40.0, 30.0);
        let imp = impurity_from_mask(80, 80, |x, y| {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            (dx * dx + dy * dy).sqrt() <= r
        });
        let score = circle_diff_score(&imp);
        assert!(score <= 0.05, "disk scored {score}");
    }

    #[test]
    fn square_matches_analytic_ratio() {
        // A filled square inside its enclosing circle leaves 1 - 2/pi.
        let imp = impurity_from_mask(100, 100, |_, _| true);
        let expected = 1.0 - 2.0 / std::f64::consts::PI;
        let score = circle_diff_score(&imp);
        assert!(
            (score - expected).abs() <= 0.02,
            "square scored {score}, expected about {expected}"
        );
    }

    #[test]
    fn thin_x_is_strongly_anomalous() {
        // Two crossing 4-pixel bars spanning a 100x100 frame.
        let imp = impurity_from_mask(100, 100, |x, y| {
            let x = x as i64;
            let y = y as i64;
            (x - y).abs() < 4 || (x + y - 99).abs() < 4
        });
        assert!(circle_diff_score(&imp) >= 0.55);
    }

    #[test]
    fn single_pixel_scores_zero() {
        let imp = impurity_from_mask(3, 3, |x, y| x == 1 && y == 1);
        assert_eq!(circle_diff_score(&imp), 0.0);
    }

    #[test]
    fn removing_interior_pixels_raises_the_score() {
        // Same contour, smaller area: the enclosing circle is unchanged so
        // the score must increase.
        let solid = impurity_from_mask(50, 50, |x, y| {
            let dx = x as f64 - 25.0;
            let dy = y as f64 - 25.0;
            (dx * dx + dy * dy).sqrt() <= 20.0
        });
        let mut hollow = solid.clone();
        hollow.area = solid.area / 2;
        assert!(circle_diff_score(&hollow) > circle_diff_score(&solid));
    }

    #[test]
    fn training_split_respects_thresholds() {
        let cfg = ShapeTrainConfig::default();
        let (normal, anomalous) =
            select_training_sets(&[0.1, 0.29, 0.3, 0.6], &cfg).unwrap();
        assert_eq!(normal, vec![0, 1]); // strict lower bound: 0.3 is excluded
        assert_eq!(anomalous, vec![3]);
    }

    #[test]
    fn empty_normal_set_fails() {
        let cfg = ShapeTrainConfig::default();
        assert!(matches!(
            select_training_sets(&[0.9, 0.9], &cfg),
            Err(Error::TrainingFailed(_))
        ));
    }

    #[test]
    fn empty_anomalous_set_only_allowed_without_blank_labels() {
        let mut cfg = ShapeTrainConfig::default();
        assert!(select_training_sets(&[0.1, 0.1], &cfg).is_err());
        cfg.blank_labels = false;
        let (normal, anomalous) = select_training_sets(&[0.1, 0.1], &cfg).unwrap();
        assert_eq!(normal.len(), 2);
        assert!(anomalous.is_empty());
    }

    #[test]
    fn postprocess_keeps_zeros_blank() {
        let p = PostprocessParams::default();
        let out = postprocess(&vec![0.0; 100], 10, &p).unwrap();
        assert!(out.iter().all(|&v| v == 0));
    }

    #[test]
    fn postprocess_removes_isolated_specks() {
        let p = PostprocessParams::default();
        let mut img = vec![0.0f32; 100];
        img[23] = 0.9;
        img[77] = 0.9;
        let out = postprocess(&img, 10, &p).unwrap();
        assert!(out.iter().all(|&v| v == 0), "opening must drop specks");
    }

    #[test]
    fn postprocess_opening_preserves_large_disks() {
        let side = 40usize;
        let mut img = vec![0.0f32; side * side];
        let disk = |x: usize, y: usize| {
            let dx = x as f64 - 20.0;
            let dy = y as f64 - 20.0;
            (dx * dx + dy * dy).sqrt() <= 12.0
        };
        for y in 0..side {
            for x in 0..side {
                if disk(x, y) {
                    img[y * side + x] = 0.9;
                }
            }
        }
        let p = PostprocessParams::default();
        let out = postprocess(&img, side, &p).unwrap();
        // Opening with a 3x3 kernel may shave at most a one-pixel ring.
        let before: i64 = img.iter().map(|&v| (v >= 0.5) as i64).sum();
        let after: i64 = out.iter().map(|&v| v as i64).sum();
        assert!(after > 0 && (before - after).abs() < before / 5);
        for y in 0..side {
            for x in 0..side {
                let dx = x as f64 - 20.0;
                let dy = y as f64 - 20.0;
                if (dx * dx + dy * dy).sqrt() <= 10.0 {
                    assert_eq!(out[y * side + x], 1, "interior pixel ({x},{y}) lost");
                }
            }
        }
    }

    #[test]
    fn even_kernel_is_rejected() {
        let p = PostprocessParams {
            kernel_size: 4,
            ..PostprocessParams::default()
        };
        assert!(postprocess(&[0.0; 16], 4, &p).is_err());
    }

    #[test]
    fn combined_is_product_then_normalized() {
        let mut sp = ScoreSet::new("s");
        sp.spatial = Some(vec![0.2, 0.8]);
        let mut sh = ScoreSet::new("s");
        sh.shape = Some(vec![0.5, 1.0]);
        let combined = combined_scores(&sp, &sh).unwrap().combined.unwrap();
        assert_eq!(combined, vec![0.0, 1.0]);
    }

    #[test]
    fn zero_channel_annihilates() {
        let mut sp = ScoreSet::new("s");
        sp.spatial = Some(vec![0.0, 0.6, 1.0]);
        let mut sh = ScoreSet::new("s");
        sh.shape = Some(vec![0.9, 0.0, 1.0]);
        let combined = combined_scores(&sp, &sh).unwrap().combined.unwrap();
        assert_eq!(combined[0], 0.0);
        assert_eq!(combined[1], 0.0);
        assert_eq!(combined[2], 1.0);
    }

    #[test]
    fn equal_products_degenerate_to_zero() {
        let mut sp = ScoreSet::new("s");
        sp.spatial = Some(vec![1.0, 1.0]);
        let mut sh = ScoreSet::new("s");
        sh.shape = Some(vec![1.0, 1.0]);
        let combined = combined_scores(&sp, &sh).unwrap().combined.unwrap();
        assert_eq!(combined, vec![0.0, 0.0]);
    }

    #[test]
    fn mismatched_lengths_are_an_error() {
        let mut sp = ScoreSet::new("s");
        sp.spatial = Some(vec![1.0]);
        let mut sh = ScoreSet::new("s");
        sh.shape = Some(vec![1.0, 0.5]);
        assert!(combined_scores(&sp, &sh).is_err());
    }

    #[test]
    fn combined_ranking_matches_raw_products() {
        let mut sp = ScoreSet::new("s");
        sp.spatial = Some(vec![0.1, 0.9, 0.4, 0.7]);
        let mut sh = ScoreSet::new("s");
        sh.shape = Some(vec![0.8, 0.2, 0.9, 0.6]);
        let products: Vec<f64> = vec![0.08, 0.18, 0.36, 0.42];
        let combined = combined_scores(&sp, &sh).unwrap().combined.unwrap();
        let order = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
            idx
        };
        assert_eq!(order(&products), order(&combined));
    }

    #[test]
    fn raw_mse_is_the_hamming_fraction_at_255() {
        let input = [1u8, 0, 1, 0];
        let post = [1u8, 1, 0, 0];
        // Two differing pixels out of four at 0-255 scale.
        assert_eq!(reconstruction_mse(&input, &post, true), 65025.0 / 2.0);
        assert_eq!(reconstruction_mse(&input, &post, false), 0.5);
    }
}

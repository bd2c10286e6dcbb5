//! Score overlays: impurity pixels tinted along a blue -> cyan -> yellow ->
//! red colormap (score 0 is pure blue, score 1 pure red), rendered over the
//! scan raster. Output bytes are deterministic for identical inputs.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::Error;
use crate::ingest::{fill_contour, Scan};
use crate::Result;

/// Background gray used when no source raster is supplied.
const BACKGROUND: Rgb<u8> = Rgb([24, 24, 24]);
/// Tint for impurities that carry no value (e.g. unclustered).
const UNSCORED: Rgb<u8> = Rgb([110, 110, 110]);

/// Piecewise-linear jet-like colormap over [0,1].
///
/// Breakpoints: 0 -> (0,0,255), 1/3 -> (0,255,255), 2/3 -> (255,255,0),
/// 1 -> (255,0,0).
pub fn colormap(score: f64) -> Result<Rgb<u8>> {
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::invalid(format!(
            "colormap score {score} outside [0,1]"
        )));
    }
    let stops: [(f64, [f64; 3]); 4] = [
        (0.0, [0.0, 0.0, 255.0]),
        (1.0 / 3.0, [0.0, 255.0, 255.0]),
        (2.0 / 3.0, [255.0, 255.0, 0.0]),
        (1.0, [255.0, 0.0, 0.0]),
    ];
    let mut rgb = stops[3].1;
    for w in stops.windows(2) {
        let (t0, c0) = w[0];
        let (t1, c1) = w[1];
        if score <= t1 {
            let t = (score - t0) / (t1 - t0);
            rgb = [
                c0[0] + (c1[0] - c0[0]) * t,
                c0[1] + (c1[1] - c0[1]) * t,
                c0[2] + (c1[2] - c0[2]) * t,
            ];
            break;
        }
    }
    Ok(Rgb([
        rgb[0].round() as u8,
        rgb[1].round() as u8,
        rgb[2].round() as u8,
    ]))
}

/// Paints every impurity's pixels with the colormap at its value; `None`
/// values render as neutral gray. The background is the supplied raster or
/// a plain dark canvas.
pub fn render_overlay(
    scan: &Scan,
    values: &[Option<f64>],
    background: Option<&RgbImage>,
) -> Result<RgbImage> {
    if values.len() != scan.impurities.len() {
        return Err(Error::invalid(format!(
            "overlay: {} impurities but {} values",
            scan.impurities.len(),
            values.len()
        )));
    }
    let mut canvas = match background {
        Some(bg) => {
            if bg.dimensions() != (scan.width, scan.height) {
                return Err(Error::invalid("overlay: background dimensions mismatch"));
            }
            bg.clone()
        }
        None => RgbImage::from_pixel(scan.width, scan.height, BACKGROUND),
    };
    for (imp, value) in scan.impurities.iter().zip(values) {
        let tint = match value {
            Some(v) => colormap(*v)?,
            None => UNSCORED,
        };
        let (rw, _rh, filled) = fill_contour(imp);
        let (x0, y0) = (imp.rect.min_x as u32, imp.rect.min_y as u32);
        for (idx, &f) in filled.iter().enumerate() {
            if f == 1 {
                let x = x0 + (idx % rw) as u32;
                let y = y0 + (idx / rw) as u32;
                if x < scan.width && y < scan.height {
                    canvas.put_pixel(x, y, tint);
                }
            }
        }
    }
    Ok(canvas)
}

/// Writes the overlay as a lossless PNG.
pub fn save_overlay(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    image
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::invalid(format!("overlay save failed at {}: {e}", path.display())))
}

//! Line-delimited text store for extracted impurity collections.
//!
//! Layout: a header line `v1 <scan_id> <width> <height>`, then one record
//! per impurity: `id area min_x min_y max_x max_y x0 y0 x1 y1 ...` with the
//! contour as a flat coordinate list. All fields are decimal integers.
//! Shape images are derived data and are not persisted.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Error;
use crate::geometry::{BoundingRect, Impurity, Point};
use crate::ingest::Scan;
use crate::Result;

const FORMAT_VERSION: u32 = 1;

/// Serializes a scan to the text store format.
pub fn persist_impurities(scan: &Scan, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = encode_scan(scan)?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a scan back from the text store format.
pub fn load_impurities(path: impl AsRef<Path>) -> Result<Scan> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(display.clone(), e))?;
    decode_scan(&text, &display)
}

pub(crate) fn encode_scan(scan: &Scan) -> Result<String> {
    if scan.scan_id.is_empty() || scan.scan_id.chars().any(char::is_whitespace) {
        return Err(Error::invalid(format!(
            "scan id {:?} must be non-empty and whitespace-free",
            scan.scan_id
        )));
    }
    let mut text = String::new();
    writeln!(
        text,
        "v{FORMAT_VERSION} {} {} {}",
        scan.scan_id, scan.width, scan.height
    )
    .expect("write to string");
    for imp in &scan.impurities {
        write!(
            text,
            "{} {} {} {} {} {}",
            imp.id,
            imp.area,
            imp.rect.min_x as i64,
            imp.rect.min_y as i64,
            imp.rect.max_x as i64,
            imp.rect.max_y as i64,
        )
        .expect("write to string");
        for p in &imp.contour {
            write!(text, " {} {}", p.x as i64, p.y as i64).expect("write to string");
        }
        text.push('\n');
    }
    Ok(text)
}

pub(crate) fn decode_scan(text: &str, source: &str) -> Result<Scan> {
    let malformed = |line: usize, reason: &str| Error::MalformedRecord {
        path: source.to_string(),
        line,
        reason: reason.to_string(),
    };

    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| malformed(1, "missing header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 {
        return Err(malformed(1, "header must be `v<N> scan_id width height`"));
    }
    let version: u32 = fields[0]
        .strip_prefix('v')
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| malformed(1, "unparseable version tag"))?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let scan_id = fields[1].to_string();
    let width: u32 = fields[2]
        .parse()
        .map_err(|_| malformed(1, "bad width"))?;
    let height: u32 = fields[3]
        .parse()
        .map_err(|_| malformed(1, "bad height"))?;

    let mut impurities = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let nums: Vec<i64> = line
            .split_whitespace()
            .map(|t| t.parse::<i64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| malformed(lineno, "non-integer field"))?;
        if nums.len() < 8 {
            return Err(malformed(lineno, "record shorter than id/area/rect/point"));
        }
        if (nums.len() - 6) % 2 != 0 {
            return Err(malformed(lineno, "odd contour coordinate count"));
        }
        let id = nums[0] as usize;
        if id != impurities.len() {
            return Err(malformed(lineno, "impurity ids must be dense and ordered"));
        }
        let area = nums[1];
        if area <= 0 {
            return Err(malformed(lineno, "area must be positive"));
        }
        let rect = BoundingRect::new(
            nums[2] as f64,
            nums[3] as f64,
            nums[4] as f64,
            nums[5] as f64,
        )
        .map_err(|_| malformed(lineno, "inverted bounding rectangle"))?;
        if rect.min_x < 0.0
            || rect.min_y < 0.0
            || rect.max_x >= width as f64
            || rect.max_y >= height as f64
        {
            return Err(malformed(lineno, "bounding rectangle outside image"));
        }
        if area as f64 > (rect.width() + 1.0) * (rect.height() + 1.0) {
            return Err(malformed(lineno, "area exceeds bounding rectangle"));
        }
        let contour = nums[6..]
            .chunks_exact(2)
            .map(|c| Point::new(c[0] as f64, c[1] as f64))
            .collect();
        impurities.push(Impurity {
            id,
            contour,
            area: area as u64,
            rect,
            shape_image: None,
        });
    }
    Ok(Scan {
        scan_id,
        width,
        height,
        impurities,
    })
}

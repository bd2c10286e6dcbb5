//! Per-impurity score channels and min-max normalization.

use std::fmt;
use std::fmt::Write as _;

use crate::error::Error;
use crate::Result;

/// Score channel names used in exports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Spatial,
    Shape,
    Combined,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Spatial => "spatial",
            Channel::Shape => "shape",
            Channel::Combined => "combined",
        })
    }
}

/// Per-impurity anomaly scores for one scan, indexed by impurity id.
/// Populated channels are min-max normalized to [0,1].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    pub scan_id: String,
    pub spatial: Option<Vec<f64>>,
    pub shape: Option<Vec<f64>>,
    pub combined: Option<Vec<f64>>,
}

impl ScoreSet {
    pub fn new(scan_id: impl Into<String>) -> Self {
        Self {
            scan_id: scan_id.into(),
            ..Self::default()
        }
    }

    pub fn channel(&self, channel: Channel) -> Option<&[f64]> {
        match channel {
            Channel::Spatial => self.spatial.as_deref(),
            Channel::Shape => self.shape.as_deref(),
            Channel::Combined => self.combined.as_deref(),
        }
    }

    /// The combined channel if present, required by the area measure.
    pub fn combined_or_err(&self) -> Result<&[f64]> {
        self.combined
            .as_deref()
            .ok_or_else(|| Error::invalid(format!("scan {}: combined scores missing", self.scan_id)))
    }

    /// Renders one channel as export records: `scan_id impurity_id channel
    /// value`, six decimal places.
    pub fn export_channel(&self, channel: Channel) -> Result<String> {
        let values = self
            .channel(channel)
            .ok_or_else(|| Error::invalid(format!("scan {}: {channel} channel missing", self.scan_id)))?;
        let mut out = String::new();
        for (id, v) in values.iter().enumerate() {
            writeln!(out, "{} {} {} {:.6}", self.scan_id, id, channel, v).expect("write to string");
        }
        Ok(out)
    }
}

/// Min-max normalizes in place. When max == min every value maps to 0:
/// no impurity is anomalous relative to its peers.
pub fn min_max_normalize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        for v in values.iter_mut() {
            *v = (*v - min) / (max - min);
        }
    } else {
        values.fill(0.0);
    }
}

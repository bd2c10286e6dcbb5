//! metscan-core: quantifies how anomalous labeled impurities in
//! metallographic scans are, via three composable measures.
//!
//! * **Spatial** — a weighted k-th-nearest-neighbour score over a
//!   bounding-rectangle distance ([`spatial`]).
//! * **Shape** — the circle-difference measure plus a convolutional
//!   autoencoder trained with blank labels for anomalous shapes ([`shape`]).
//! * **Area** — auction-style market clustering of scored impurities and a
//!   cross-scan area-anomaly ranking ([`area`]).
//!
//! [`ingest`] turns tagged mask images into [`Scan`]s of [`Impurity`]
//! objects, [`render`] paints score overlays, and [`pipeline`] wires the
//! stages end to end for the CLI.

pub mod area;
pub mod config;
pub mod error;
pub mod geometry;
pub mod ingest;
pub mod pipeline;
pub mod render;
pub mod score;
pub mod shape;
pub mod spatial;
pub mod store;

pub use config::PipelineConfig;
pub use error::Error;
pub use geometry::{BoundingRect, EnclosingCircle, Impurity, Point};
pub use ingest::{BinaryImage, Scan};
pub use score::ScoreSet;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

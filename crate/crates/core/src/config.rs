//! Pipeline configuration: every constant of every stage with its published
//! default, plus paths and the RNG seed. Parsed from TOML; unknown keys are
//! rejected so typos cannot silently fall back to defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::area::{ClusterConfig, PriceParams};
use crate::error::Error;
use crate::ingest::{Connectivity, MaskPolarity};
use crate::shape::{PostprocessParams, ShapeTrainConfig};
use crate::spatial::SpatialParams;
use crate::Result;

/// Mask loading knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub binarize_threshold: u8,
    pub polarity: MaskPolarity,
    pub connectivity: Connectivity,
    /// Fallback for outline-only expert tags: fill enclosed background
    /// before component extraction.
    pub outline_fill: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            binarize_threshold: 128,
            polarity: MaskPolarity::default(),
            connectivity: Connectivity::default(),
            outline_fill: false,
        }
    }
}

/// Whether min-max normalization spans one scan or the whole corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationSpan {
    #[default]
    PerScan,
    Corpus,
}

/// The full pipeline configuration.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub scan_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Overrides `shape.rng_seed` when set; the single seed a caller needs.
    pub seed: Option<u64>,
    /// Train the shape model during `run`; otherwise `model_path` must
    /// point at a previously trained one.
    pub train_shape: bool,
    pub model_path: Option<PathBuf>,
    pub normalization: NormalizationSpan,
    pub ingest: IngestConfig,
    pub spatial: SpatialParams,
    pub shape: ShapeTrainConfig,
    pub postprocess: PostprocessParams,
    pub price: PriceParams,
    pub cluster: ClusterConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.apply_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml_str(&text)
    }

    /// Propagates the top-level seed into the stages that consume RNG.
    pub fn apply_seed(&mut self) {
        if let Some(seed) = self.seed {
            self.shape.rng_seed = seed;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        self.postprocess.validate()?;
        if self.spatial.k == 0 {
            return Err(Error::Config("spatial.k must be at least 1".into()));
        }
        if self.cluster.k == 0 {
            return Err(Error::Config("cluster.k must be at least 1".into()));
        }
        if self.cluster.max_passes == 0 {
            return Err(Error::Config("cluster.max_passes must be positive".into()));
        }
        Ok(())
    }

    /// Applies one `section.key=value` override (CLI `--set`).
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
        // Round-trip through TOML so every key accepts exactly the syntax
        // the config file uses.
        let mut doc: toml::Value =
            toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let parts: Vec<&str> = key.split('.').collect();
        // Scalars are parsed with TOML literal syntax; anything that does
        // not parse is treated as a bare string.
        let parsed: toml::Value = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        fn set_key(
            doc: &mut toml::Value,
            key: &str,
            parts: &[&str],
            value: toml::Value,
        ) -> Result<()> {
            let table = doc
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{key}` does not name a config key")))?;
            match parts {
                [] => Err(Error::Config(format!("`{key}` is empty"))),
                [last] => {
                    table.insert((*last).to_string(), value);
                    Ok(())
                }
                [head, rest @ ..] => {
                    let entry = table
                        .entry((*head).to_string())
                        .or_insert(toml::Value::Table(Default::default()));
                    set_key(entry, key, rest, value)
                }
            }
        }
        set_key(&mut doc, key, &parts, parsed)?;
        let mut updated: PipelineConfig = doc
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        updated.apply_seed();
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_published_constants() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.spatial.k, 50);
        assert_eq!(cfg.spatial.c1, 4.0);
        assert_eq!(cfg.spatial.c2, 2.0);
        assert_eq!(cfg.shape.normal_threshold, 0.3);
        assert_eq!(cfg.shape.anomalous_threshold, 0.55);
        assert_eq!(cfg.price.c1, 1.7);
        assert_eq!(cfg.price.c2_1, 0.95);
        assert_eq!(cfg.price.c4, 1.6);
        assert_eq!(cfg.price.c6, 2.5);
        assert_eq!(cfg.price.c7, 8.0);
        assert_eq!(cfg.ingest.binarize_threshold, 128);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = PipelineConfig::from_toml_str("frobnicate = 3\n").unwrap_err();
        assert!(err.to_string().contains("frobnicate"));
    }

    #[test]
    fn sections_parse_and_seed_propagates() {
        let cfg = PipelineConfig::from_toml_str(
            "seed = 99\n[spatial]\nk = 5\n[shape]\nepochs = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.spatial.k, 5);
        assert_eq!(cfg.shape.epochs, 2);
        assert_eq!(cfg.shape.rng_seed, 99);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_override("price.c1=2.5").unwrap();
        assert_eq!(cfg.price.c1, 2.5);
        cfg.apply_override("spatial.k=3").unwrap();
        assert_eq!(cfg.spatial.k, 3);
        assert!(cfg.apply_override("nonsense.key=1").is_err());
        assert!(cfg.apply_override("missing-equals").is_err());
    }

    #[test]
    fn invalid_threshold_order_is_rejected() {
        let err = PipelineConfig::from_toml_str(
            "[shape]\nnormal_threshold = 0.7\nanomalous_threshold = 0.5\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("threshold"));
    }
}

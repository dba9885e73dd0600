//! Run configuration: one JSON document whose sections mirror the library
//! configuration types. Missing sections take their defaults; unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EvalConfig;
use crate::synth::{MosaicConfig, PipelineConfig, PipelinePolicy, SynthConfig};
use crate::vlalign::{AlignmentHeadParams, LossWeights, QueryBudget};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub annotations: Option<PathBuf>,
    pub images_dir: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub out_images: Option<PathBuf>,
    pub out_annotations: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    /// Augmentation policy. When absent, synthesis emits GridSynthetic
    /// samples only.
    pub pipeline: Option<PipelinePolicy>,
    pub mosaic: MosaicConfig,
    pub loss: LossWeights,
    pub head: AlignmentHeadParams,
    pub budget: QueryBudget,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
    /// Worker threads; `None` uses every core.
    pub workers: Option<usize>,
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        if let Some(p) = &self.pipeline {
            p.validate()?;
        }
        self.mosaic.validate()?;
        self.loss.validate()?;
        self.head.validate()?;
        self.eval.validate()?;
        if self.workers == Some(0) {
            return Err(Error::InvalidConfig("workers must be positive".into()));
        }
        Ok(())
    }

    /// Pipeline settings assembled from the sections of this config.
    pub fn pipeline_config(&self) -> Option<PipelineConfig> {
        self.pipeline.map(|policy| PipelineConfig {
            policy,
            synth: self.synth.clone(),
            mosaic: self.mosaic.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<RunConfig> {
        RunConfig::from_json(s, Path::new("cfg.json"))
    }

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(parse("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::default();
        cfg.synth.grid.resolutions = vec![(4, 4)];
        cfg.pipeline = Some(PipelinePolicy::default());
        cfg.paths.pool = Some("pool".into());
        cfg.workers = Some(3);
        assert_eq!(parse(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn partial_sections_fill_in() {
        let cfg = parse(r#"{"synth": {"grid": {"css_probability": 0.0}, "rng_seed": 4}}"#).unwrap();
        assert_eq!(cfg.synth.grid.css_probability, 0.0);
        assert_eq!(cfg.synth.grid.canvas_w, 640);
        assert_eq!(cfg.synth.rng_seed, 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(parse(r#"{"synht": {}}"#), Err(Error::Parse { .. })));
        assert!(matches!(parse(r#"{"synth": {"seed": 1}}"#), Err(Error::Parse { .. })));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(parse(r#"{"synth": {"flip_probability": 2.0}}"#).is_err());
        assert!(parse(r#"{"pipeline": {"grid_synthetic": 0.7, "mixup": 0.7}}"#).is_err());
        assert!(parse(r#"{"workers": 0}"#).is_err());
    }
}

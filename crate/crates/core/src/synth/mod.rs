//! Sample generators: GridSynthetic composition with complex-scene blending,
//! and the Copy-Paste, MixUp and mosaic baselines, plus the per-sample
//! augmentation pipeline that chooses between them.
//!
//! Every generator is a pure function of `(seed, sample_index, config,
//! inputs)`; randomness comes from [`crate::rng::sample_rng`].

mod baselines;
mod grid;
mod pipeline;

pub use baselines::{copy_paste, mixup, mosaic, mosaic_with_center, MosaicConfig};
pub use grid::{
    cell_rect, css_blend, grid_compose, grid_synthesize, grid_synthesize_traced, preprocess_patch,
    GridTrace,
};
pub use pipeline::{
    pipeline_apply, pipeline_plan, pipeline_sample, Branch, PipelineConfig, PipelinePolicy,
    PipelineTrace,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pool::{ObjectPool, SamplingMode};
use crate::sample::SampleAnnotation;

/// Canvas and grid layout of GridSynthetic samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    /// `(m, n)`: `m` columns across the width, `n` rows down the height.
    pub resolutions: Vec<(u32, u32)>,
    pub canvas_w: u32,
    pub canvas_h: u32,
    /// Probability of blending with a second synthetic sample.
    pub css_probability: f64,
    pub fill_value: u8,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            resolutions: vec![(4, 4), (4, 8), (8, 4), (8, 8)],
            canvas_w: 640,
            canvas_h: 640,
            css_probability: 0.5,
            fill_value: 114,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() {
            return Err(Error::InvalidConfig("grid resolution set is empty".into()));
        }
        for &(m, n) in &self.resolutions {
            if m == 0 || n == 0 || m > self.canvas_w || n > self.canvas_h {
                return Err(Error::InvalidConfig(format!(
                    "grid ({m}, {n}) does not fit a {}x{} canvas",
                    self.canvas_w, self.canvas_h
                )));
            }
        }
        check_probability("css_probability", self.css_probability)
    }
}

/// GridSynthetic generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub grid: GridSpec,
    pub flip_probability: f64,
    pub rng_seed: u64,
    pub sampling: SamplingMode,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            flip_probability: 0.5,
            rng_seed: 0,
            sampling: SamplingMode::Uniform,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        check_probability("flip_probability", self.flip_probability)
    }
}

pub(crate) fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must lie in [0, 1], got {p}")))
    }
}

/// SHA-256 over image size, pixels and annotations of one sample.
pub fn sample_digest(s: &SampleAnnotation) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(s.width().to_le_bytes());
    h.update(s.height().to_le_bytes());
    h.update(s.image.pixels());
    h.update((s.instances.len() as u64).to_le_bytes());
    for inst in &s.instances {
        for v in inst.bbox.to_xyxy() {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update(inst.category_id.to_le_bytes());
        h.update(inst.image_id.to_le_bytes());
    }
    for (k, v) in &s.text_labels {
        h.update(k.to_le_bytes());
        h.update(v.as_bytes());
        h.update([0]);
    }
    h.finalize().into()
}

/// Digest of a sequence of per-sample digests.
pub fn combine_digests<'a>(parts: impl IntoIterator<Item = &'a [u8; 32]>) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    hex::encode(h.finalize())
}

/// Generates GridSynthetic samples `0..count` on `workers` threads and
/// returns the digest of the corpus in index order. Samples are not kept.
pub fn grid_corpus_digest(
    pool: &ObjectPool,
    cfg: &SynthConfig,
    count: u64,
    workers: usize,
) -> Result<String> {
    cfg.validate()?;
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    let digests: Vec<[u8; 32]> = threads.install(|| {
        (0..count)
            .into_par_iter()
            .map(|i| grid_synthesize(pool, cfg, i).map(|s| sample_digest(&s)))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(combine_digests(&digests))
}

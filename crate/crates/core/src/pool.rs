//! Object pool: context-expanded object crops harvested from an annotated
//! dataset, indexed by category.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::images::{read_image, write_image};
use crate::dataio::write_atomic;
use crate::error::{Error, Result};
use crate::geometry::{clip_box, Box2D};
use crate::image::ImageBuffer;
use crate::rng::{sample_rng, stream, SampleRng};
use crate::sample::{CategoryId, ImageId, SampleAnnotation};

/// Default fraction by which the tight box is grown to keep background.
pub const DEFAULT_CONTEXT_RATIO: f64 = 0.2;
pub const DEFAULT_MIN_SIDE: u32 = 2;

/// An object crop with its context margin.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectPatch {
    pub pixels: ImageBuffer,
    /// Object box in patch-local coordinates.
    pub tight_box: Box2D,
    pub category_id: CategoryId,
    pub source_image_id: ImageId,
    /// Top-left corner of the crop in the source image.
    pub crop_origin: [u32; 2],
}

impl ObjectPatch {
    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    /// The tight box in source-image coordinates.
    pub fn source_box(&self) -> Box2D {
        self.tight_box
            .translate(self.crop_origin[0] as f64, self.crop_origin[1] as f64)
    }
}

/// How patches are drawn from the pool.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Uniform over patches.
    #[default]
    Uniform,
    /// Uniform over categories, then uniform within the category.
    ClassBalanced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectPool {
    patches: Vec<ObjectPatch>,
    by_category: BTreeMap<CategoryId, Vec<usize>>,
    text_labels: BTreeMap<CategoryId, String>,
}

impl ObjectPool {
    /// Indexes a list of patches. Fails with `EmptyPool` on an empty list.
    pub fn from_patches(
        patches: Vec<ObjectPatch>,
        text_labels: BTreeMap<CategoryId, String>,
    ) -> Result<Self> {
        if patches.is_empty() {
            return Err(Error::EmptyPool);
        }
        let mut by_category: BTreeMap<CategoryId, Vec<usize>> = BTreeMap::new();
        for (i, p) in patches.iter().enumerate() {
            by_category.entry(p.category_id).or_default().push(i);
        }
        Ok(Self {
            patches,
            by_category,
            text_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patches(&self) -> &[ObjectPatch] {
        &self.patches
    }

    pub fn patch(&self, i: usize) -> &ObjectPatch {
        &self.patches[i]
    }

    pub fn by_category(&self) -> &BTreeMap<CategoryId, Vec<usize>> {
        &self.by_category
    }

    pub fn text_labels(&self) -> &BTreeMap<CategoryId, String> {
        &self.text_labels
    }

    /// Text label of a category, falling back to its numeric id.
    pub fn label(&self, category_id: CategoryId) -> String {
        self.text_labels
            .get(&category_id)
            .cloned()
            .unwrap_or_else(|| category_id.to_string())
    }

    /// Draws `count` patch indices with replacement.
    pub fn sample_indices(
        &self,
        rng: &mut SampleRng,
        count: usize,
        mode: SamplingMode,
    ) -> Vec<usize> {
        match mode {
            SamplingMode::Uniform => (0..count)
                .map(|_| rng.random_range(0..self.patches.len()))
                .collect(),
            SamplingMode::ClassBalanced => {
                let buckets: Vec<&Vec<usize>> = self.by_category.values().collect();
                (0..count)
                    .map(|_| {
                        let bucket = buckets[rng.random_range(0..buckets.len())];
                        bucket[rng.random_range(0..bucket.len())]
                    })
                    .collect()
            }
        }
    }

    /// Writes `patch_NNNNNN.png` files plus `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.patches.len());
        for (i, p) in self.patches.iter().enumerate() {
            let file = format!("patch_{i:06}.png");
            write_image(&p.pixels, &dir.join(&file))?;
            entries.push(ManifestEntry {
                file,
                tight_box: p.tight_box,
                category_id: p.category_id,
                source_image_id: p.source_image_id,
                crop_origin: p.crop_origin,
            });
        }
        let manifest = PoolManifest {
            text_labels: self.text_labels.clone(),
            patches: entries,
        };
        let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        json.push('\n');
        write_atomic(&dir.join(MANIFEST_FILE), json.as_bytes())
    }

    /// Loads a pool written by [`ObjectPool::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: PoolManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let patches = manifest
            .patches
            .into_par_iter()
            .map(|e| {
                let pixels = read_image(&dir.join(&e.file))?;
                if !e
                    .tight_box
                    .is_within(pixels.width() as f64, pixels.height() as f64)
                {
                    return Err(Error::Parse {
                        path: path.clone(),
                        message: format!("tight_box of {} exceeds the patch", e.file),
                    });
                }
                Ok(ObjectPatch {
                    pixels,
                    tight_box: e.tight_box,
                    category_id: e.category_id,
                    source_image_id: e.source_image_id,
                    crop_origin: e.crop_origin,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_patches(patches, manifest.text_labels)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoolManifest {
    #[serde(default)]
    text_labels: BTreeMap<CategoryId, String>,
    patches: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    file: String,
    tight_box: Box2D,
    category_id: CategoryId,
    source_image_id: ImageId,
    #[serde(default)]
    crop_origin: [u32; 2],
}

/// Grows `tight` by `context_ratio * side / 2` on each side, then clips to
/// the image.
pub fn expand_box(tight: &Box2D, context_ratio: f64, image_w: f64, image_h: f64) -> Box2D {
    let mx = context_ratio * tight.width() / 2.0;
    let my = context_ratio * tight.height() / 2.0;
    let grown = Box2D::new(
        tight.x1() - mx,
        tight.y1() - my,
        tight.x2() + mx,
        tight.y2() + my,
    )
    .expect("growing an ordered box keeps it ordered");
    clip_box(&grown, image_w, image_h)
}

/// Extracts the patches of one sample, in instance order.
pub fn extract_patches(
    sample: &SampleAnnotation,
    context_ratio: f64,
    min_side: u32,
) -> Vec<ObjectPatch> {
    let (w, h) = (sample.width(), sample.height());
    let (wf, hf) = (w as f64, h as f64);
    sample
        .instances
        .iter()
        .filter_map(|inst| {
            let tight = clip_box(&inst.bbox, wf, hf);
            if tight.width() < min_side as f64 || tight.height() < min_side as f64 {
                return None;
            }
            let region = expand_box(&tight, context_ratio, wf, hf);
            let x0 = region.x1().floor() as u32;
            let y0 = region.y1().floor() as u32;
            let x1 = (region.x2().ceil() as u32).min(w);
            let y1 = (region.y2().ceil() as u32).min(h);
            let pixels = sample.image.crop(x0, y0, x1, y1).ok()?;
            Some(ObjectPatch {
                pixels,
                tight_box: tight.translate(-(x0 as f64), -(y0 as f64)),
                category_id: inst.category_id,
                source_image_id: inst.image_id,
                crop_origin: [x0, y0],
            })
        })
        .collect()
}

/// Builds the pool from a dataset. Extraction runs in parallel over images;
/// patch order is dataset order, then instance order.
pub fn build_pool(
    dataset: &[SampleAnnotation],
    context_ratio: f64,
    min_side: u32,
) -> Result<ObjectPool> {
    if !(context_ratio >= 0.0 && context_ratio.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "context ratio must be a non-negative number, got {context_ratio}"
        )));
    }
    let patches: Vec<ObjectPatch> = dataset
        .par_iter()
        .map(|s| extract_patches(s, context_ratio, min_side))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let mut labels = BTreeMap::new();
    for s in dataset {
        for (k, v) in &s.text_labels {
            labels.entry(*k).or_insert_with(|| v.clone());
        }
    }
    ObjectPool::from_patches(patches, labels)
}

/// Draws `count` patches uniformly with replacement; fully determined by
/// `rng_seed`.
pub fn sample_patches(pool: &ObjectPool, count: usize, rng_seed: u64) -> Result<Vec<&ObjectPatch>> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut rng = sample_rng(rng_seed, 0, stream::SAMPLING);
    Ok(pool
        .sample_indices(&mut rng, count, SamplingMode::Uniform)
        .into_iter()
        .map(|i| pool.patch(i))
        .collect())
}

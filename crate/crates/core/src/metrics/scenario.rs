//! Synthetic crowded-image scenario for the query supplement: images hold
//! more objects than there are decoder queries, and encoder candidates beyond
//! the decoder budget are appended as extra detections.
//!
//! Encoder features are built so that their cosine similarity to the text
//! embedding of their class falls into three tiers: features later picked as
//! decoder queries, features on the remaining objects, and background.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataio::coco::{CategoryInfo, Frequency};
use crate::dataio::embeddings::pseudo_embeddings;
use crate::error::Result;
use crate::geometry::Box2D;
use crate::metrics::{evaluate, Detection, EvalConfig, EvalDataset, EvalMode, Origin};
use crate::rng::{sample_rng, stream};
use crate::sample::{CategoryId, Instance};
use crate::vlalign::{
    row_max_scores, similarity_logits, sigmoid, supplement_predictions, text_aware_select, AlignmentHeadParams,
    EmbeddingMatrix, EncoderCandidates, QueryBudget, SupplementMode,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupplementScenario {
    pub images: usize,
    /// Ground-truth objects per image.
    pub objects_per_image: usize,
    pub decoder_queries: usize,
    /// Background encoder features per image.
    pub background_rows: usize,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for SupplementScenario {
    fn default() -> Self {
        Self {
            images: 2,
            objects_per_image: 400,
            decoder_queries: 300,
            background_rows: 1200,
            embedding_dim: 256,
            seed: 17,
        }
    }
}

/// One point of a supplement-budget sweep.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SweepPoint {
    pub supplement_queries: usize,
    pub per_image_cap: usize,
    pub ap: f64,
    pub ap_r: Option<f64>,
    pub ap_c: Option<f64>,
    pub ap_f: Option<f64>,
}

const CATEGORIES: [(CategoryId, &str, Frequency); 3] = [
    (1, "rare_thing", Frequency::Rare),
    (2, "common_thing", Frequency::Common),
    (3, "frequent_thing", Frequency::Frequent),
];

struct Built {
    gt: BTreeMap<u64, Vec<Instance>>,
    encoders: Vec<EncoderCandidates>,
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Vector with cosine `cos` to `anchor` (a unit vector).
fn with_cosine(anchor: &[f64], cos: f64, rng: &mut impl Rng) -> Vec<f64> {
    let noise: Vec<f64> = anchor.iter().map(|_| StandardNormal.sample(rng)).collect();
    let dot: f64 = noise.iter().zip(anchor).map(|(a, b)| a * b).sum();
    let ortho = unit(noise.iter().zip(anchor).map(|(n, a)| n - dot * a).collect());
    let s = (1.0 - cos * cos).max(0.0).sqrt();
    anchor.iter().zip(&ortho).map(|(a, o)| cos * a + s * o).collect()
}

impl SupplementScenario {
    fn build(&self) -> Result<Built> {
        let text = pseudo_embeddings(CATEGORIES.len(), self.embedding_dim, self.seed);
        let side = (self.objects_per_image as f64).sqrt().ceil().max(1.0) as usize;
        let cell = 32.0;
        let mut gt = BTreeMap::new();
        let mut encoders = Vec::new();
        for img in 0..self.images {
            let image_id = img as u64 + 1;
            let mut rng = sample_rng(self.seed, img as u64, stream::SAMPLING);
            let mut instances = Vec::with_capacity(self.objects_per_image);
            let mut rows = Vec::new();
            let mut boxes = Vec::new();
            for k in 0..self.objects_per_image {
                let (cx, cy) = ((k % side) as f64 * cell, (k / side) as f64 * cell);
                let b = Box2D::new(cx + 2.0, cy + 2.0, cx + 30.0, cy + 30.0)?;
                let cls = k % CATEGORIES.len();
                instances.push(Instance {
                    bbox: b,
                    category_id: CATEGORIES[cls].0,
                    image_id,
                });
                // decoder-tier objects rank above the rest
                let cos = if k < self.decoder_queries {
                    0.9 - 0.2 * rng.random::<f64>()
                } else {
                    0.6 - 0.2 * rng.random::<f64>()
                };
                rows.push(with_cosine(text.row(cls), cos, &mut rng));
                boxes.push(b);
            }
            for _ in 0..self.background_rows {
                let cls = rng.random_range(0..CATEGORIES.len());
                let cos = 0.1 * rng.random::<f64>();
                rows.push(with_cosine(text.row(cls), cos, &mut rng));
                // small boxes at cell corners: IoU with any object stays below 0.5
                let k = rng.random_range(0..side * side);
                let (cx, cy) = ((k % side) as f64 * cell, (k / side) as f64 * cell);
                boxes.push(Box2D::new(cx, cy, cx + 6.0, cy + 6.0)?);
            }
            let visual = EmbeddingMatrix::from_rows(&rows)?;
            let logits = similarity_logits(&visual, &text, &AlignmentHeadParams::default())?;
            gt.insert(image_id, instances);
            encoders.push(EncoderCandidates {
                image_id,
                logits,
                boxes,
            });
        }
        Ok(Built { gt, encoders })
    }

    fn detections(&self, built: &Built, supplement_queries: usize) -> Result<Vec<Detection>> {
        let budget = QueryBudget {
            decoder_queries: self.decoder_queries,
            supplement_queries,
        };
        let columns: Vec<CategoryId> = CATEGORIES.iter().map(|c| c.0).collect();
        let mut all = Vec::new();
        for enc in &built.encoders {
            let selected = text_aware_select(&enc.logits, self.decoder_queries)?;
            let scores = row_max_scores(&enc.logits);
            // decoder refines the selected queries: exact boxes, best class
            let decoder: Vec<Detection> = selected
                .iter()
                .map(|&r| {
                    let (best, col) = scores[r];
                    Detection {
                        image_id: enc.image_id,
                        category_id: columns[col],
                        bbox: enc.boxes[r],
                        score: sigmoid(best),
                        origin: Origin::Decoder,
                    }
                })
                .collect();
            all.extend(supplement_predictions(
                &decoder,
                enc,
                &columns,
                &budget,
                &selected,
                SupplementMode::ArgmaxClass,
            )?);
        }
        Ok(all)
    }

    fn dataset(&self, built: &Built, dets: Vec<Detection>) -> Result<EvalDataset> {
        let categories = CATEGORIES
            .iter()
            .map(|&(id, name, f)| CategoryInfo {
                id,
                name: name.into(),
                frequency: Some(f),
            })
            .collect();
        EvalDataset::new(built.gt.clone(), categories, dets)
    }

    /// Fixed-mode AP for each supplement budget, with the per-image cap set
    /// to `decoder_queries + budget`.
    pub fn sweep(&self, budgets: &[usize]) -> Result<Vec<SweepPoint>> {
        let built = self.build()?;
        budgets
            .iter()
            .map(|&b| {
                let dets = self.detections(&built, b)?;
                let ds = self.dataset(&built, dets)?;
                let cfg = EvalConfig {
                    per_image_cap: self.decoder_queries + b,
                    mode: EvalMode::Fixed,
                    ..EvalConfig::fixed()
                };
                let r = evaluate(&ds, &cfg)?;
                Ok(SweepPoint {
                    supplement_queries: b,
                    per_image_cap: cfg.per_image_cap,
                    ap: r.ap,
                    ap_r: r.ap_r,
                    ap_c: r.ap_c,
                    ap_f: r.ap_f,
                })
            })
            .collect()
    }
}

/// AP of the same supplemented detections under the standard cap
/// (`decoder_queries`) and the enlarged cap (`decoder_queries + supplement`).
pub fn supplement_gain_scenario(
    scenario: &SupplementScenario,
    supplement_queries: usize,
) -> Result<(f64, f64)> {
    let built = scenario.build()?;
    let dets = scenario.detections(&built, supplement_queries)?;
    let ds = scenario.dataset(&built, dets)?;
    let standard = EvalConfig {
        per_image_cap: scenario.decoder_queries,
        ..EvalConfig::standard()
    };
    let large = EvalConfig {
        per_image_cap: scenario.decoder_queries + supplement_queries,
        ..EvalConfig::fixed()
    };
    let a = evaluate(&ds, &standard)?.ap;
    let b = evaluate(&ds, &large)?.ap;
    debug_assert!(b >= a);
    Ok((a, b))
}

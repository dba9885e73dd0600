//! Detection evaluation: greedy IoU matching, 101-point interpolated AP with
//! a per-image detection cap, Fixed AP with enlarged caps, and
//! rare/common/frequent splits.

mod report;
pub mod scenario;

pub use report::{CategoryAp, EvalReport, ThresholdAp};

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::coco::{AnnotationSet, CategoryInfo, Frequency};
use crate::error::{Error, Result};
use crate::geometry::{iou, Box2D};
use crate::sample::{CategoryId, ImageId, Instance};

/// Where a detection came from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    #[default]
    Decoder,
    Supplement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: ImageId,
    pub category_id: CategoryId,
    pub bbox: Box2D,
    pub score: f64,
    #[serde(default)]
    pub origin: Origin,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    #[default]
    Standard,
    Fixed,
}

/// Evaluation protocol settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub per_image_cap: usize,
    pub mode: EvalMode,
    /// Dataset-wide cap per category, applied in fixed mode only.
    pub per_class_global_cap: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self::standard()
    }
}

impl EvalConfig {
    /// `{0.50, 0.55, ..., 0.95}`.
    pub fn coco_thresholds() -> Vec<f64> {
        (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
    }

    /// Standard AP: at most 300 detections per image.
    pub fn standard() -> Self {
        Self {
            iou_thresholds: Self::coco_thresholds(),
            per_image_cap: 300,
            mode: EvalMode::Standard,
            per_class_global_cap: 10_000,
        }
    }

    /// Fixed AP: at most 1000 per image and 10000 per category overall.
    pub fn fixed() -> Self {
        Self {
            per_image_cap: 1000,
            mode: EvalMode::Fixed,
            ..Self::standard()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iou_thresholds.is_empty() {
            return Err(Error::InvalidConfig("no IoU thresholds".into()));
        }
        let in_range = self.iou_thresholds.iter().all(|&t| t > 0.0 && t <= 1.0);
        let increasing = self.iou_thresholds.windows(2).all(|w| w[0] < w[1]);
        if !in_range || !increasing {
            return Err(Error::InvalidConfig(format!(
                "IoU thresholds must be strictly increasing in (0, 1]: {:?}",
                self.iou_thresholds
            )));
        }
        Ok(())
    }
}

/// Ground truth, category table and detections to score.
#[derive(Debug, Clone, Default)]
pub struct EvalDataset {
    gt: BTreeMap<ImageId, Vec<Instance>>,
    categories: Vec<CategoryInfo>,
    detections: Vec<Detection>,
}

impl EvalDataset {
    /// Fails when a detection names an unknown image or category.
    pub fn new(
        gt: BTreeMap<ImageId, Vec<Instance>>,
        categories: Vec<CategoryInfo>,
        detections: Vec<Detection>,
    ) -> Result<Self> {
        let known: std::collections::HashSet<CategoryId> =
            categories.iter().map(|c| c.id).collect();
        for (k, d) in detections.iter().enumerate() {
            if !gt.contains_key(&d.image_id) {
                return Err(Error::InvalidConfig(format!(
                    "detection {k} references unknown image id {}",
                    d.image_id
                )));
            }
            if !known.contains(&d.category_id) {
                return Err(Error::InvalidConfig(format!(
                    "detection {k} references unknown category id {}",
                    d.category_id
                )));
            }
            if !(d.score.is_finite() && (0.0..=1.0).contains(&d.score)) {
                return Err(Error::InvalidConfig(format!(
                    "detection {k} has score {} outside [0, 1]",
                    d.score
                )));
            }
        }
        for insts in gt.values() {
            if let Some(i) = insts.iter().find(|i| !known.contains(&i.category_id)) {
                return Err(Error::InvalidConfig(format!(
                    "ground truth references unknown category id {}",
                    i.category_id
                )));
            }
        }
        Ok(Self {
            gt,
            categories,
            detections,
        })
    }

    pub fn from_annotations(set: &AnnotationSet, detections: Vec<Detection>) -> Result<Self> {
        let gt = set
            .images
            .iter()
            .map(|img| (img.id, img.instances.clone()))
            .collect();
        Self::new(gt, set.categories.clone(), detections)
    }

    pub fn categories(&self) -> &[CategoryInfo] {
        &self.categories
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn ground_truth(&self) -> &BTreeMap<ImageId, Vec<Instance>> {
        &self.gt
    }
}

/// Matches detections (already in descending score order) to ground truth
/// of one image and category. Each detection takes the unmatched box of
/// highest IoU at or above `iou_threshold`; equal IoUs go to the lower
/// ground-truth index. Returns one true-positive flag per detection.
pub fn match_greedy(dets: &[Box2D], gts: &[Box2D], iou_threshold: f64) -> Vec<bool> {
    let ious: Vec<Vec<f64>> = dets
        .iter()
        .map(|d| gts.iter().map(|g| iou(d, g)).collect())
        .collect();
    match_with_ious(&ious, gts.len(), iou_threshold)
}

fn match_with_ious(ious: &[Vec<f64>], n_gt: usize, iou_threshold: f64) -> Vec<bool> {
    let mut taken = vec![false; n_gt];
    ious.iter()
        .map(|row| {
            let mut best: Option<(usize, f64)> = None;
            for (g, &v) in row.iter().enumerate() {
                if taken[g] || v < iou_threshold {
                    continue;
                }
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            match best {
                Some((g, _)) => {
                    taken[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// 101-point interpolated AP of a ranked list of true-positive flags.
/// Returns 0 when `n_gt` is 0.
pub fn average_precision(flags: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(flags.len());
    let mut precision = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (i, &f) in flags.iter().enumerate() {
        tp += f as usize;
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        if precision[i + 1] > precision[i] {
            precision[i] = precision[i + 1];
        }
    }
    let mut sum = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let idx = recall.partition_point(|&x| x < r);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / 101.0
}

/// Detection indices in evaluation order: score descending, then image id,
/// then input position.
pub fn ranked_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .total_cmp(&dets[a].score)
            .then(dets[a].image_id.cmp(&dets[b].image_id))
            .then(a.cmp(&b))
    });
    order
}

/// Applies the per-image cap and, in fixed mode, the per-category cap.
/// Returns surviving indices in evaluation order.
pub fn apply_caps(dets: &[Detection], cfg: &EvalConfig) -> Vec<usize> {
    let mut per_image: HashMap<ImageId, usize> = HashMap::new();
    let mut per_class: HashMap<CategoryId, usize> = HashMap::new();
    let mut kept = Vec::new();
    for i in ranked_order(dets) {
        let n = per_image.entry(dets[i].image_id).or_default();
        if *n >= cfg.per_image_cap {
            continue;
        }
        *n += 1;
        kept.push(i);
    }
    if cfg.mode == EvalMode::Fixed {
        kept.retain(|&i| {
            let n = per_class.entry(dets[i].category_id).or_default();
            *n += 1;
            *n <= cfg.per_class_global_cap
        });
    }
    kept
}

/// Scores a dataset.
pub fn evaluate(ds: &EvalDataset, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let kept = apply_caps(&ds.detections, cfg);

    let mut gt_by_cat: BTreeMap<CategoryId, BTreeMap<ImageId, Vec<Box2D>>> = BTreeMap::new();
    for (img, insts) in &ds.gt {
        for inst in insts {
            gt_by_cat
                .entry(inst.category_id)
                .or_default()
                .entry(*img)
                .or_default()
                .push(inst.bbox);
        }
    }
    let mut dets_by_cat: HashMap<CategoryId, Vec<usize>> = HashMap::new();
    for &i in &kept {
        dets_by_cat.entry(ds.detections[i].category_id).or_default().push(i);
    }

    let empty = BTreeMap::new();
    let per_category: Vec<CategoryAp> = ds
        .categories
        .par_iter()
        .map(|cat| {
            let gts = gt_by_cat.get(&cat.id).unwrap_or(&empty);
            let n_gt: usize = gts.values().map(Vec::len).sum();
            let dets = dets_by_cat.get(&cat.id).map(Vec::as_slice).unwrap_or(&[]);
            let per_threshold = if n_gt == 0 {
                vec![0.0; cfg.iou_thresholds.len()]
            } else {
                category_ap(&ds.detections, dets, gts, n_gt, &cfg.iou_thresholds)
            };
            let ap = per_threshold.iter().sum::<f64>() / per_threshold.len() as f64;
            CategoryAp {
                id: cat.id,
                name: cat.name.clone(),
                frequency: cat.frequency,
                n_gt,
                n_detections: dets.len(),
                ap,
                per_threshold,
            }
        })
        .collect();

    Ok(EvalReport::assemble(cfg, per_category))
}

/// Per-threshold AP of one category. `dets` are in evaluation order.
fn category_ap(
    all: &[Detection],
    dets: &[usize],
    gts: &BTreeMap<ImageId, Vec<Box2D>>,
    n_gt: usize,
    thresholds: &[f64],
) -> Vec<f64> {
    // position of each detection within its image's list, plus the IoU rows
    let mut by_image: BTreeMap<ImageId, Vec<usize>> = BTreeMap::new();
    let mut slot = Vec::with_capacity(dets.len());
    for (pos, &i) in dets.iter().enumerate() {
        let list = by_image.entry(all[i].image_id).or_default();
        slot.push((all[i].image_id, list.len()));
        list.push(pos);
    }
    let no_gt: Vec<Box2D> = Vec::new();
    let ious: BTreeMap<ImageId, Vec<Vec<f64>>> = by_image
        .iter()
        .map(|(img, positions)| {
            let g = gts.get(img).unwrap_or(&no_gt);
            let rows = positions
                .iter()
                .map(|&p| g.iter().map(|b| iou(&all[dets[p]].bbox, b)).collect())
                .collect();
            (*img, rows)
        })
        .collect();

    thresholds
        .iter()
        .map(|&t| {
            let matched: BTreeMap<ImageId, Vec<bool>> = ious
                .iter()
                .map(|(img, rows)| {
                    let n = gts.get(img).map_or(0, Vec::len);
                    (*img, match_with_ious(rows, n, t))
                })
                .collect();
            let flags: Vec<bool> = slot.iter().map(|(img, k)| matched[img][*k]).collect();
            average_precision(&flags, n_gt)
        })
        .collect()
}

/// Mean of category APs over categories with ground truth, optionally
/// restricted to one frequency bucket. `None` when no category qualifies.
pub(crate) fn mean_ap(cats: &[CategoryAp], freq: Option<Frequency>) -> Option<f64> {
    let vals: Vec<f64> = cats
        .iter()
        .filter(|c| c.n_gt > 0 && (freq.is_none() || c.frequency == freq))
        .map(|c| c.ap)
        .collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

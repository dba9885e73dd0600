use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{affine_remap_box, Box2D};
use crate::image::ImageBuffer;
use crate::pool::{ObjectPool, SamplingMode};
use crate::rng::{sample_rng, stream};
use crate::sample::{Instance, SampleAnnotation};
use crate::synth::css_blend;

/// Pastes `k` pool patches onto `base` at uniform positions. Patches keep
/// their native size unless larger than the canvas, in which case they are
/// shrunk to fit. Later pastes may cover earlier ones.
pub fn copy_paste(
    base: &SampleAnnotation,
    pool: &ObjectPool,
    k: usize,
    rng_seed: u64,
    sample_index: u64,
) -> Result<SampleAnnotation> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut out = base.clone();
    let (cw, ch) = (base.width(), base.height());
    let mut rng = sample_rng(rng_seed, sample_index, stream::COPY_PASTE);
    for pi in pool.sample_indices(&mut rng, k, SamplingMode::Uniform) {
        let patch = pool.patch(pi);
        let (pw, ph) = (patch.width(), patch.height());
        let s = (cw as f64 / pw as f64).min(ch as f64 / ph as f64).min(1.0);
        let (img, tight) = if s < 1.0 {
            let w = ((pw as f64 * s).floor() as u32).clamp(1, cw);
            let h = ((ph as f64 * s).floor() as u32).clamp(1, ch);
            let b = affine_remap_box(&patch.tight_box, w as f64 / pw as f64, h as f64 / ph as f64, 0.0, 0.0);
            (patch.pixels.resize_bilinear(w, h)?, b)
        } else {
            (patch.pixels.clone(), patch.tight_box)
        };
        let x = rng.random_range(0..=cw - img.width());
        let y = rng.random_range(0..=ch - img.height());
        out.image.paste(&img, x as i64, y as i64);
        out.instances.push(Instance {
            bbox: tight.translate(x as f64, y as f64),
            category_id: patch.category_id,
            image_id: sample_index,
        });
        out.text_labels
            .entry(patch.category_id)
            .or_insert_with(|| pool.label(patch.category_id));
    }
    Ok(out)
}

/// Detection-style MixUp: equal-weight pixel blend, instance lists
/// concatenated without reweighting.
pub fn mixup(a: &SampleAnnotation, b: &SampleAnnotation) -> Result<SampleAnnotation> {
    css_blend(a, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MosaicConfig {
    pub canvas_w: u32,
    pub canvas_h: u32,
    pub fill_value: u8,
    /// Remapped instances keeping less than this fraction of their area
    /// after clipping are dropped.
    pub min_retained_fraction: f64,
    /// Range of the center point as a fraction of each canvas side.
    pub center_range: (f64, f64),
}

impl Default for MosaicConfig {
    fn default() -> Self {
        Self {
            canvas_w: 640,
            canvas_h: 640,
            fill_value: 114,
            min_retained_fraction: 0.25,
            center_range: (0.25, 0.75),
        }
    }
}

impl MosaicConfig {
    pub fn validate(&self) -> Result<()> {
        if self.canvas_w < 2 || self.canvas_h < 2 {
            return Err(Error::InvalidConfig(format!(
                "mosaic canvas {}x{} is too small",
                self.canvas_w, self.canvas_h
            )));
        }
        let (lo, hi) = self.center_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "mosaic center range ({lo}, {hi}) must be ordered within [0, 1]"
            )));
        }
        super::check_probability("min_retained_fraction", self.min_retained_fraction)
    }

    fn center_bounds(&self, side: u32, frac_lo: f64, frac_hi: f64) -> (u32, u32) {
        let lo = ((side as f64 * frac_lo).ceil() as u32).clamp(1, side - 1);
        let hi = ((side as f64 * frac_hi).floor() as u32).clamp(lo, side - 1);
        (lo, hi)
    }
}

/// Four-way mosaic around a random interior center point.
pub fn mosaic(
    samples: &[SampleAnnotation; 4],
    cfg: &MosaicConfig,
    rng_seed: u64,
    sample_index: u64,
) -> Result<SampleAnnotation> {
    cfg.validate()?;
    let mut rng = sample_rng(rng_seed, sample_index, stream::MOSAIC);
    let (lo, hi) = cfg.center_range;
    let (xl, xh) = cfg.center_bounds(cfg.canvas_w, lo, hi);
    let (yl, yh) = cfg.center_bounds(cfg.canvas_h, lo, hi);
    let cx = rng.random_range(xl..=xh);
    let cy = rng.random_range(yl..=yh);
    mosaic_with_center(samples, cfg, (cx, cy), sample_index)
}

/// Mosaic with an explicit center. Quadrants are top-left, top-right,
/// bottom-left, bottom-right. Each input is scaled, aspect preserved, to
/// cover its quadrant with the corner nearest the center anchored there;
/// the overflow falls off the canvas.
pub fn mosaic_with_center(
    samples: &[SampleAnnotation; 4],
    cfg: &MosaicConfig,
    center: (u32, u32),
    sample_index: u64,
) -> Result<SampleAnnotation> {
    cfg.validate()?;
    let (w, h) = (cfg.canvas_w, cfg.canvas_h);
    let (cx, cy) = center;
    if cx == 0 || cy == 0 || cx >= w || cy >= h {
        return Err(Error::InvalidConfig(format!(
            "mosaic center ({cx}, {cy}) is not interior to {w}x{h}"
        )));
    }
    let mut canvas = ImageBuffer::filled(w, h, [cfg.fill_value; 3])?;
    let mut instances = Vec::new();
    let mut text_labels = BTreeMap::new();
    let quadrants = [
        (0, 0, cx, cy),
        (cx, 0, w, cy),
        (0, cy, cx, h),
        (cx, cy, w, h),
    ];
    for (q, (s, &(qx0, qy0, qx1, qy1))) in samples.iter().zip(&quadrants).enumerate() {
        let (qw, qh) = ((qx1 - qx0) as f64, (qy1 - qy0) as f64);
        let (sw, sh) = (s.width() as f64, s.height() as f64);
        let scale = (qw / sw).max(qh / sh);
        let rw = ((sw * scale).round() as u32).max(qx1 - qx0);
        let rh = ((sh * scale).round() as u32).max(qy1 - qy0);
        let img = s.image.resize_bilinear(rw, rh)?;
        let ox = if q % 2 == 0 { cx as i64 - rw as i64 } else { cx as i64 };
        let oy = if q < 2 { cy as i64 - rh as i64 } else { cy as i64 };
        canvas.paste(&img, ox, oy);
        let quad = Box2D::new(qx0 as f64, qy0 as f64, qx1 as f64, qy1 as f64)?;
        for inst in &s.instances {
            let mapped = affine_remap_box(&inst.bbox, rw as f64 / sw, rh as f64 / sh, ox as f64, oy as f64);
            let Some(clipped) = clip_to(&mapped, &quad) else {
                continue;
            };
            let area = clipped.area();
            if area <= 0.0 || area < cfg.min_retained_fraction * mapped.area() {
                continue;
            }
            instances.push(Instance {
                bbox: clipped,
                category_id: inst.category_id,
                image_id: sample_index,
            });
            if let Some(l) = s.text_labels.get(&inst.category_id) {
                text_labels.entry(inst.category_id).or_insert_with(|| l.clone());
            }
        }
    }
    Ok(SampleAnnotation {
        image: canvas,
        instances,
        text_labels,
    })
}

fn clip_to(b: &Box2D, r: &Box2D) -> Option<Box2D> {
    let x1 = b.x1().max(r.x1());
    let y1 = b.y1().max(r.y1());
    let x2 = b.x2().min(r.x2());
    let y2 = b.y2().min(r.y2());
    (x1 <= x2 && y1 <= y2).then(|| Box2D::new(x1, y1, x2, y2).expect("ordered"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou;
    use crate::pool::ObjectPatch;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> Box2D {
        Box2D::new(x1, y1, x2, y2).unwrap()
    }

    fn blank(w: u32, h: u32, v: u8) -> SampleAnnotation {
        SampleAnnotation {
            image: ImageBuffer::filled(w, h, [v; 3]).unwrap(),
            instances: vec![],
            text_labels: BTreeMap::new(),
        }
    }

    fn with_boxes(w: u32, h: u32, boxes: &[Box2D]) -> SampleAnnotation {
        let px = (0..w * h * 3).map(|i| (i % 251) as u8).collect();
        SampleAnnotation {
            image: ImageBuffer::from_raw(w, h, px).unwrap(),
            instances: boxes
                .iter()
                .map(|&bbox| Instance {
                    bbox,
                    category_id: 1,
                    image_id: 0,
                })
                .collect(),
            text_labels: [(1, "thing".to_string())].into(),
        }
    }

    fn pool_of(side: u32, n: usize) -> ObjectPool {
        let patches = (0..n)
            .map(|i| ObjectPatch {
                pixels: ImageBuffer::filled(side, side, [i as u8 * 10; 3]).unwrap(),
                tight_box: bx(1.0, 1.0, side as f64 - 1.0, side as f64 - 1.0),
                category_id: i as u32 % 3,
                source_image_id: 0,
                crop_origin: [0, 0],
            })
            .collect();
        ObjectPool::from_patches(patches, BTreeMap::new()).unwrap()
    }

    #[test]
    fn copy_paste_zero_is_identity() {
        let base = with_boxes(64, 48, &[bx(1.0, 1.0, 10.0, 10.0)]);
        assert_eq!(copy_paste(&base, &pool_of(8, 3), 0, 1, 0).unwrap(), base);
    }

    #[test]
    fn copy_paste_adds_k_inside_canvas() {
        let base = blank(640, 640, 0);
        for k in [4, 16] {
            let out = copy_paste(&base, &pool_of(50, 5), k, 9, 2).unwrap();
            assert_eq!(out.instances.len(), k);
            assert!(out.instances.iter().all(|i| i.bbox.is_within(640.0, 640.0)));
        }
        let big = copy_paste(&blank(32, 20, 0), &pool_of(50, 2), 3, 9, 2).unwrap();
        assert!(big.instances.iter().all(|i| i.bbox.is_within(32.0, 20.0)));
    }

    #[test]
    fn copy_paste_keeps_existing_instances() {
        let base = with_boxes(100, 100, &[bx(5.0, 5.0, 20.0, 20.0)]);
        let out = copy_paste(&base, &pool_of(10, 2), 4, 3, 1).unwrap();
        assert_eq!(out.instances[0], base.instances[0]);
        assert_eq!(out.instances.len(), 5);
    }

    #[test]
    fn copy_paste_large_patches_overlap() {
        let base = blank(640, 640, 0);
        let pool = pool_of(330, 4);
        let mut overlapping = false;
        for seed in 0..20 {
            let out = copy_paste(&base, &pool, 16, seed, 0).unwrap();
            let b: Vec<_> = out.instances.iter().map(|i| i.bbox).collect();
            overlapping |= (0..b.len()).any(|i| (i + 1..b.len()).any(|j| iou(&b[i], &b[j]) > 0.0));
        }
        assert!(overlapping);
    }

    #[test]
    fn mixup_examples() {
        let x = with_boxes(16, 16, &[bx(1.0, 1.0, 5.0, 5.0)]);
        let m = mixup(&x, &blank(16, 16, 0)).unwrap();
        assert_eq!(m.instances, x.instances);
        for (a, b) in m.image.pixels().iter().zip(x.image.pixels()) {
            assert_eq!(*a, (*b as u16).div_ceil(2) as u8);
        }
        let xx = mixup(&x, &x).unwrap();
        assert_eq!(xx.instances.len(), 2);
        assert_eq!(xx, css_blend(&x, &x).unwrap());
    }

    #[test]
    fn mosaic_midpoint_identical_inputs() {
        let s = with_boxes(64, 64, &[bx(8.0, 8.0, 24.0, 40.0)]);
        let cfg = MosaicConfig {
            canvas_w: 128,
            canvas_h: 128,
            ..MosaicConfig::default()
        };
        let quads = [s.clone(), s.clone(), s.clone(), s.clone()];
        let out = mosaic_with_center(&quads, &cfg, (64, 64), 5).unwrap();
        assert_eq!(out.instances.len(), 4);
        let origins = [(0.0, 0.0), (64.0, 0.0), (0.0, 64.0), (64.0, 64.0)];
        for (inst, (ox, oy)) in out.instances.iter().zip(origins) {
            assert_eq!(inst.bbox, bx(8.0, 8.0, 24.0, 40.0).translate(ox, oy));
            assert_eq!(inst.image_id, 5);
        }
        assert_eq!(out.image.crop(64, 64, 128, 128).unwrap(), s.image);
    }

    #[test]
    fn mosaic_clips_straddling_instance() {
        // center (40, 50): the 40x50 top-left quadrant takes the input at
        // scale 0.5, anchored at the center, so 10 columns fall off the canvas
        let a = with_boxes(100, 100, &[bx(0.0, 20.0, 60.0, 60.0)]);
        let cfg = MosaicConfig {
            canvas_w: 100,
            canvas_h: 100,
            ..MosaicConfig::default()
        };
        let blankq = blank(100, 100, 0);
        let quads = [a, blankq.clone(), blankq.clone(), blankq];
        let out = mosaic_with_center(&quads, &cfg, (40, 50), 0).unwrap();
        // remapped: scale 0.5, offset (-10, 0) -> [-10, 10, 20, 30]
        assert_eq!(out.instances.len(), 1);
        assert_eq!(out.instances[0].bbox, bx(0.0, 10.0, 20.0, 30.0));
    }

    #[test]
    fn mosaic_drops_mostly_clipped_instances() {
        let a = with_boxes(100, 100, &[bx(0.0, 0.0, 30.0, 30.0), bx(0.0, 40.0, 100.0, 60.0)]);
        let cfg = MosaicConfig {
            canvas_w: 100,
            canvas_h: 100,
            ..MosaicConfig::default()
        };
        let b = blank(100, 100, 0);
        // center (25, 50): scale 0.5, top-left quadrant 25 wide; input spans [-25, 25]
        let out = mosaic_with_center(&[a, b.clone(), b.clone(), b], &cfg, (25, 50), 0).unwrap();
        // first box maps to [-25, 0, -10, 15]: fully off canvas
        // second maps to [-25, 20, 25, 30]: retains half
        assert_eq!(out.instances.len(), 1);
        assert_eq!(out.instances[0].bbox, bx(0.0, 20.0, 25.0, 30.0));
    }

    #[test]
    fn mosaic_is_deterministic_and_bounded() {
        let s = with_boxes(80, 60, &[bx(10.0, 10.0, 70.0, 50.0)]);
        let quads = [s.clone(), s.clone(), s.clone(), s];
        let cfg = MosaicConfig::default();
        let a = mosaic(&quads, &cfg, 4, 11).unwrap();
        assert_eq!(a, mosaic(&quads, &cfg, 4, 11).unwrap());
        assert!(a.instances.iter().all(|i| i.bbox.is_within(640.0, 640.0)));
        assert!(mosaic_with_center(&quads, &cfg, (0, 10), 0).is_err());
    }
}

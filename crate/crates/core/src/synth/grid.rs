use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{affine_remap_box, hflip_box, Box2D};
use crate::image::ImageBuffer;
use crate::pool::{ObjectPatch, ObjectPool};
use crate::rng::{sample_rng, stream, SampleRng};
use crate::sample::{Instance, SampleAnnotation};
use crate::synth::SynthConfig;

/// Random choices made for one GridSynthetic sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridTrace {
    pub resolution: (u32, u32),
    /// Whether the sample was blended with a second synthetic sample of the
    /// same resolution.
    pub css: bool,
}

/// Optionally mirrors the patch, then resizes it to `cell_w x cell_h`.
/// Returns the new pixels and the tight box under the same transform.
pub fn preprocess_patch(
    patch: &ObjectPatch,
    cell_w: u32,
    cell_h: u32,
    flip: bool,
) -> Result<(ImageBuffer, Box2D)> {
    let (pw, ph) = (patch.width() as f64, patch.height() as f64);
    let (img, tight) = if flip {
        (patch.pixels.hflip(), hflip_box(&patch.tight_box, pw))
    } else {
        (patch.pixels.clone(), patch.tight_box)
    };
    let resized = img.resize_bilinear(cell_w, cell_h)?;
    let b = affine_remap_box(&tight, cell_w as f64 / pw, cell_h as f64 / ph, 0.0, 0.0);
    Ok((resized, b))
}

/// Pixel rectangle `(x0, y0, x1, y1)` of cell `k` (row-major) in an
/// `m x n` grid. Boundaries are `floor(i * size / count)`.
pub fn cell_rect(k: u32, m: u32, n: u32, canvas_w: u32, canvas_h: u32) -> (u32, u32, u32, u32) {
    let (col, row) = (k % m, k / m);
    debug_assert!(row < n);
    let edge = |i: u32, size: u32, count: u32| ((i as u64 * size as u64) / count as u64) as u32;
    (
        edge(col, canvas_w, m),
        edge(row, canvas_h, n),
        edge(col + 1, canvas_w, m),
        edge(row + 1, canvas_h, n),
    )
}

/// Composes one grid sample at a fixed resolution using `rng` for patch
/// selection and flips. Instance `k` lies in cell `k`.
pub fn grid_compose(
    pool: &ObjectPool,
    cfg: &SynthConfig,
    resolution: (u32, u32),
    rng: &mut SampleRng,
    image_id: u64,
) -> Result<SampleAnnotation> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let (m, n) = resolution;
    let g = &cfg.grid;
    let mut canvas = ImageBuffer::filled(g.canvas_w, g.canvas_h, [g.fill_value; 3])?;
    let picks = pool.sample_indices(rng, (m * n) as usize, cfg.sampling);
    let mut instances = Vec::with_capacity(picks.len());
    let mut text_labels = BTreeMap::new();
    for (k, &pi) in picks.iter().enumerate() {
        let flip = rng.random::<f64>() < cfg.flip_probability;
        let (x0, y0, x1, y1) = cell_rect(k as u32, m, n, g.canvas_w, g.canvas_h);
        let patch = pool.patch(pi);
        let (img, tight) = preprocess_patch(patch, x1 - x0, y1 - y0, flip)?;
        canvas.paste(&img, x0 as i64, y0 as i64);
        instances.push(Instance {
            bbox: tight.translate(x0 as f64, y0 as f64),
            category_id: patch.category_id,
            image_id,
        });
        text_labels
            .entry(patch.category_id)
            .or_insert_with(|| pool.label(patch.category_id));
    }
    Ok(SampleAnnotation {
        image: canvas,
        instances,
        text_labels,
    })
}

fn draw_resolution(cfg: &SynthConfig, rng: &mut SampleRng) -> (u32, u32) {
    let r = &cfg.grid.resolutions;
    r[rng.random_range(0..r.len())]
}

/// GridSynthetic sample with the blend decision supplied by the caller.
pub(crate) fn grid_synthesize_with_css(
    pool: &ObjectPool,
    cfg: &SynthConfig,
    sample_index: u64,
    css: bool,
) -> Result<(SampleAnnotation, GridTrace)> {
    cfg.validate()?;
    let mut rng = sample_rng(cfg.rng_seed, sample_index, stream::GRID);
    let resolution = draw_resolution(cfg, &mut rng);
    let sample = grid_compose(pool, cfg, resolution, &mut rng, sample_index)?;
    if !css {
        return Ok((
            sample,
            GridTrace {
                resolution,
                css: false,
            },
        ));
    }
    let mut prng = sample_rng(cfg.rng_seed, sample_index, stream::CSS_PARTNER);
    let partner = grid_compose(pool, cfg, resolution, &mut prng, sample_index)?;
    Ok((
        css_blend(&sample, &partner)?,
        GridTrace {
            resolution,
            css: true,
        },
    ))
}

/// One GridSynthetic sample, determined by `(cfg.rng_seed, sample_index)`.
pub fn grid_synthesize_traced(
    pool: &ObjectPool,
    cfg: &SynthConfig,
    sample_index: u64,
) -> Result<(SampleAnnotation, GridTrace)> {
    let mut coin = sample_rng(cfg.rng_seed, sample_index, stream::CSS_COIN);
    let css = coin.random::<f64>() < cfg.grid.css_probability;
    grid_synthesize_with_css(pool, cfg, sample_index, css)
}

pub fn grid_synthesize(
    pool: &ObjectPool,
    cfg: &SynthConfig,
    sample_index: u64,
) -> Result<SampleAnnotation> {
    grid_synthesize_traced(pool, cfg, sample_index).map(|(s, _)| s)
}

/// Averages two same-sized samples pixel-wise (round half up) and
/// concatenates their instances.
pub fn css_blend(a: &SampleAnnotation, b: &SampleAnnotation) -> Result<SampleAnnotation> {
    let image = ImageBuffer::blend_half(&a.image, &b.image)?;
    let mut instances = a.instances.clone();
    instances.extend_from_slice(&b.instances);
    let mut text_labels = a.text_labels.clone();
    for (k, v) in &b.text_labels {
        text_labels.entry(*k).or_insert_with(|| v.clone());
    }
    Ok(SampleAnnotation {
        image,
        instances,
        text_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou;
    use crate::image::psnr;
    use crate::synth::GridSpec;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> Box2D {
        Box2D::new(x1, y1, x2, y2).unwrap()
    }

    fn patch(w: u32, h: u32, tight: Box2D, cat: u32) -> ObjectPatch {
        let px = (0..w * h * 3).map(|i| (i * 7 % 253) as u8).collect();
        ObjectPatch {
            pixels: ImageBuffer::from_raw(w, h, px).unwrap(),
            tight_box: tight,
            category_id: cat,
            source_image_id: 0,
            crop_origin: [0, 0],
        }
    }

    fn pool(cats: &[u32]) -> ObjectPool {
        let patches = cats
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let w = 40 + 13 * i as u32;
                let h = 30 + 7 * i as u32;
                let tight = bx(w as f64 * 0.1, h as f64 * 0.1, w as f64 * 0.9, h as f64 * 0.9);
                patch(w, h, tight, c)
            })
            .collect();
        ObjectPool::from_patches(patches, cats.iter().map(|&c| (c, format!("c{c}"))).collect()).unwrap()
    }

    fn cfg_4x4(css: f64) -> SynthConfig {
        SynthConfig {
            grid: GridSpec {
                resolutions: vec![(4, 4)],
                css_probability: css,
                ..GridSpec::default()
            },
            rng_seed: 99,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn preprocess_identity() {
        let p = patch(6, 4, bx(1.0, 1.0, 5.0, 3.0), 1);
        let (img, b) = preprocess_patch(&p, 6, 4, false).unwrap();
        assert_eq!(img, p.pixels);
        assert_eq!(b, p.tight_box);
    }

    #[test]
    fn preprocess_flip_on_two_pixel_raster() {
        let mut p = patch(2, 1, bx(0.0, 0.0, 1.0, 1.0), 1);
        p.pixels = ImageBuffer::from_raw(2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let (img, b) = preprocess_patch(&p, 2, 1, true).unwrap();
        assert_eq!(img.pixels(), &[4, 5, 6, 1, 2, 3]);
        assert_eq!(b, bx(1.0, 0.0, 2.0, 1.0));
    }

    #[test]
    fn preprocess_halving() {
        let p = patch(320, 320, bx(40.0, 40.0, 280.0, 280.0), 1);
        let (img, b) = preprocess_patch(&p, 160, 160, false).unwrap();
        assert_eq!((img.width(), img.height()), (160, 160));
        assert_eq!(b, bx(20.0, 20.0, 140.0, 140.0));
    }

    #[test]
    fn four_by_four_layout() {
        let pool = pool(&[1, 2, 3, 4, 5]);
        let (s, trace) = grid_synthesize_traced(&pool, &cfg_4x4(0.0), 7).unwrap();
        assert_eq!(trace.resolution, (4, 4));
        assert_eq!(s.instances.len(), 16);
        for (k, inst) in s.instances.iter().enumerate() {
            let (x0, y0, x1, y1) = cell_rect(k as u32, 4, 4, 640, 640);
            assert_eq!((x1 - x0, y1 - y0), (160, 160));
            let cell = bx(x0 as f64, y0 as f64, x1 as f64, y1 as f64);
            assert!(cell.contains(&inst.bbox), "{k}: {:?}", inst.bbox);
        }
    }

    #[test]
    fn replay_is_identical() {
        let pool = pool(&[1, 2, 3]);
        let cfg = SynthConfig {
            rng_seed: 5,
            ..SynthConfig::default()
        };
        for i in 0..4 {
            assert_eq!(grid_synthesize(&pool, &cfg, i).unwrap(), grid_synthesize(&pool, &cfg, i).unwrap());
        }
        assert_ne!(grid_synthesize(&pool, &cfg, 0).unwrap(), grid_synthesize(&pool, &cfg, 1).unwrap());
    }

    #[test]
    fn single_category_pool() {
        let pool = pool(&[42]);
        let s = grid_synthesize(&pool, &cfg_4x4(0.0), 0).unwrap();
        assert!(s.instances.iter().all(|i| i.category_id == 42));
        assert_eq!(s.text_labels.get(&42).map(String::as_str), Some("c42"));
    }

    #[test]
    fn css_doubles_instances() {
        let pool = pool(&[1, 2]);
        let (s, trace) = grid_synthesize_traced(&pool, &cfg_4x4(1.0), 3).unwrap();
        assert!(trace.css);
        assert_eq!(s.instances.len(), 32);
    }

    #[test]
    fn blend_examples() {
        let pool = pool(&[1, 2]);
        let x = grid_synthesize(&pool, &cfg_4x4(0.0), 0).unwrap();
        let xx = css_blend(&x, &x).unwrap();
        assert_eq!(xx.image, x.image);
        assert_eq!(xx.instances.len(), 32);

        let blank = |v| SampleAnnotation {
            image: ImageBuffer::filled(8, 8, [v; 3]).unwrap(),
            instances: vec![],
            text_labels: BTreeMap::new(),
        };
        let mid = css_blend(&blank(0), &blank(255)).unwrap();
        assert!(mid.image.pixels().iter().all(|&v| v == 128));
        let small = SampleAnnotation {
            image: ImageBuffer::filled(4, 8, [0; 3]).unwrap(),
            ..blank(0)
        };
        assert!(matches!(css_blend(&blank(0), &small), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn embedded_pixels_match_preprocessed_patch() {
        let pool = pool(&[1, 2, 3]);
        let cfg = cfg_4x4(0.0);
        let mut rng = sample_rng(1, 1, stream::GRID);
        let s = grid_compose(&pool, &cfg, (4, 4), &mut rng, 0).unwrap();
        // replay the same draws to recover which patch went where
        let mut rng = sample_rng(1, 1, stream::GRID);
        let picks = pool.sample_indices(&mut rng, 16, cfg.sampling);
        for (k, &pi) in picks.iter().enumerate() {
            let flip = rng.random::<f64>() < cfg.flip_probability;
            let (x0, y0, x1, y1) = cell_rect(k as u32, 4, 4, 640, 640);
            let (img, tight) = preprocess_patch(pool.patch(pi), x1 - x0, y1 - y0, flip).unwrap();
            let inst = s.instances[k].bbox;
            let (tx0, ty0) = (tight.x1().floor() as u32, tight.y1().floor() as u32);
            let (tx1, ty1) = (tight.x2().ceil() as u32, tight.y2().ceil() as u32);
            let want = img.crop(tx0, ty0, tx1, ty1).unwrap();
            let got = s
                .image
                .crop(tx0 + x0, ty0 + y0, tx1 + x0, ty1 + y0)
                .unwrap();
            assert!(psnr(&want, &got).unwrap() > 30.0);
            // a cell-anchored proposal at cell resolution recovers the box exactly
            assert_eq!(iou(&tight.translate(x0 as f64, y0 as f64), &inst), 1.0);
        }
    }

    #[test]
    fn uneven_cells_cover_the_canvas() {
        let (w, h) = (643u32, 101u32);
        let mut covered = 0u64;
        for k in 0..(8 * 4) {
            let (x0, y0, x1, y1) = cell_rect(k, 8, 4, w, h);
            assert!(x1 > x0 && y1 > y0);
            covered += (x1 - x0) as u64 * (y1 - y0) as u64;
        }
        assert_eq!(covered, w as u64 * h as u64);
    }

    #[test]
    fn empty_config_rejected() {
        let pool = pool(&[1]);
        let mut cfg = cfg_4x4(0.0);
        cfg.grid.resolutions.clear();
        assert!(grid_synthesize(&pool, &cfg, 0).is_err());
        cfg.grid.resolutions = vec![(1000, 1)];
        assert!(grid_synthesize(&pool, &cfg, 0).is_err());
    }
}

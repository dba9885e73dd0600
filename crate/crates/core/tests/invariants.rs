use std::collections::BTreeMap;

use proptest::prelude::*;
use tempfile::TempDir;

use ovdet::dataio::{load_annotations, save_annotations, AnnotationSet};
use ovdet::metrics::{average_precision, evaluate, Detection, EvalConfig, EvalDataset};
use ovdet::synth::{grid_synthesize_traced, mosaic_with_center, GridSpec, MosaicConfig, SynthConfig};
use ovdet::{Box2D, ImageBuffer, Instance, ObjectPatch, ObjectPool, SampleAnnotation};

fn pool() -> ObjectPool {
    let patches = (0..5u32)
        .map(|c| ObjectPatch {
            pixels: ImageBuffer::filled(6 + 3 * c, 9, [40 * c as u8; 3]).unwrap(),
            tight_box: Box2D::new(1.0, 1.0, 5.0 + 3.0 * c as f64, 8.0).unwrap(),
            category_id: c,
            source_image_id: c as u64,
            crop_origin: [0, 0],
        })
        .collect();
    ObjectPool::from_patches(patches, BTreeMap::new()).unwrap()
}

fn synth_cfg(m: u32, n: u32, css: f64, seed: u64) -> SynthConfig {
    SynthConfig {
        grid: GridSpec {
            resolutions: vec![(m, n)],
            canvas_w: 96,
            canvas_h: 80,
            css_probability: css,
            ..GridSpec::default()
        },
        rng_seed: seed,
        ..SynthConfig::default()
    }
}

fn sample(w: u32, h: u32, boxes: &[(f64, f64, f64, f64)], image_id: u64) -> SampleAnnotation {
    SampleAnnotation {
        image: ImageBuffer::filled(w, h, [image_id as u8; 3]).unwrap(),
        instances: boxes
            .iter()
            .enumerate()
            .map(|(k, &(x1, y1, x2, y2))| Instance {
                bbox: Box2D::new(x1, y1, x2, y2).unwrap(),
                category_id: k as u32 % 3 + 1,
                image_id,
            })
            .collect(),
        text_labels: BTreeMap::new(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn grid_counts_and_bounds(m in 1u32..6, n in 1u32..6, css in prop::bool::ANY, seed in any::<u64>(), idx in 0u64..1000) {
        let p = pool();
        let cfg = synth_cfg(m, n, if css { 1.0 } else { 0.0 }, seed);
        let (s, t) = grid_synthesize_traced(&p, &cfg, idx).unwrap();
        prop_assert_eq!(t.css, css);
        let cells = (m * n) as usize;
        prop_assert_eq!(s.instances.len(), if css { 2 * cells } else { cells });
        prop_assert_eq!((s.width(), s.height()), (96, 80));
        for inst in &s.instances {
            prop_assert!(inst.bbox.is_within(96.0, 80.0));
            prop_assert!(inst.bbox.area() > 0.0);
            prop_assert!(inst.category_id < 5);
        }
        let (again, _) = grid_synthesize_traced(&p, &cfg, idx).unwrap();
        prop_assert_eq!(s, again);
    }

    #[test]
    fn mosaic_boxes_stay_on_canvas(cx in 16u32..48, cy in 16u32..48, w in 8u32..40, h in 8u32..40) {
        let cfg = MosaicConfig { canvas_w: 64, canvas_h: 64, ..MosaicConfig::default() };
        let bx = [(0.0, 0.0, w as f64, h as f64), (1.0, 2.0, w as f64 / 2.0, h as f64 / 2.0)];
        let quads = [sample(w, h, &bx, 0), sample(h, w, &[], 1), sample(w, w, &bx, 2), sample(h, h, &bx[1..], 3)];
        let out = mosaic_with_center(&quads, &cfg, (cx, cy), 9).unwrap();
        prop_assert_eq!((out.width(), out.height()), (64, 64));
        prop_assert!(out.instances.len() <= 5);
        for inst in &out.instances {
            prop_assert!(inst.bbox.is_within(64.0, 64.0));
            prop_assert!(inst.bbox.area() > 0.0);
        }
    }

    #[test]
    fn ap_is_bounded_and_ignores_trailing_misses(flags in prop::collection::vec(any::<bool>(), 0..60), extra in 0usize..10, misses in 0usize..10) {
        let n_gt = flags.iter().filter(|&&f| f).count() + extra;
        let ap = average_precision(&flags, n_gt);
        prop_assert!((0.0..=1.0).contains(&ap));
        let mut longer = flags.clone();
        longer.extend(std::iter::repeat_n(false, misses));
        prop_assert_eq!(average_precision(&longer, n_gt), ap);
        if n_gt > 0 && extra == 0 && flags.iter().all(|&f| f) {
            prop_assert!((ap - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn annotations_survive_save_load_save() {
    let p = pool();
    let cfg = synth_cfg(3, 2, 0.5, 11);
    let samples: Vec<_> = (0..6).map(|i| grid_synthesize_traced(&p, &cfg, i).unwrap().0).collect();
    let set = AnnotationSet::from_samples(&samples, 100, |i| format!("s{i}.png"));
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    save_annotations(&set, &a).unwrap();
    let loaded = load_annotations(&a).unwrap();
    save_annotations(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(loaded.instance_count(), set.instance_count());
    for (x, y) in set.images.iter().zip(&loaded.images) {
        assert_eq!(x.id, y.id);
        for (i, j) in x.instances.iter().zip(&y.instances) {
            let (u, v) = (i.bbox.to_xyxy(), j.bbox.to_xyxy());
            assert!(u.iter().zip(v).all(|(a, b)| (a - b).abs() < 1e-9), "{u:?} vs {v:?}");
        }
    }
}

#[test]
fn ground_truth_as_detections_scores_one_in_both_modes() {
    let p = pool();
    let cfg = synth_cfg(4, 4, 1.0, 3);
    let samples: Vec<_> = (0..4).map(|i| grid_synthesize_traced(&p, &cfg, i).unwrap().0).collect();
    let set = AnnotationSet::from_samples(&samples, 0, |i| format!("{i}.png"));
    let dets: Vec<Detection> = set
        .images
        .iter()
        .flat_map(|r| r.instances.iter())
        .map(|i| Detection {
            image_id: i.image_id,
            category_id: i.category_id,
            bbox: i.bbox,
            score: 1.0,
            origin: Default::default(),
        })
        .collect();
    let ds = EvalDataset::from_annotations(&set, dets).unwrap();
    for ec in [EvalConfig::standard(), EvalConfig::fixed()] {
        let r = evaluate(&ds, &ec).unwrap();
        assert!((r.ap - 1.0).abs() < 1e-12, "{:?}: {}", ec.mode, r.ap);
    }
}

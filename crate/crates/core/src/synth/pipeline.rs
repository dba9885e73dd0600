use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::affine_remap_box;
use crate::pool::ObjectPool;
use crate::rng::{sample_rng, stream, SampleRng};
use crate::sample::{Instance, SampleAnnotation};
use crate::synth::grid::grid_synthesize_with_css;
use crate::synth::{check_probability, mixup, mosaic, MosaicConfig, SynthConfig};

/// Per-sample augmentation probabilities. GridSynthetic and MixUp share a
/// single categorical draw, so their sum may not exceed 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelinePolicy {
    pub mosaic: f64,
    pub grid_synthetic: f64,
    pub mixup: f64,
}

impl Default for PipelinePolicy {
    fn default() -> Self {
        Self {
            mosaic: 0.75,
            grid_synthetic: 0.125,
            mixup: 0.125,
        }
    }
}

impl PipelinePolicy {
    pub fn disabled() -> Self {
        Self {
            mosaic: 0.0,
            grid_synthetic: 0.0,
            mixup: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("mosaic", self.mosaic)?;
        check_probability("grid_synthetic", self.grid_synthetic)?;
        check_probability("mixup", self.mixup)?;
        if self.grid_synthetic + self.mixup > 1.0 + 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "grid_synthetic + mixup = {} exceeds 1",
                self.grid_synthetic + self.mixup
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub policy: PipelinePolicy,
    /// GridSynthetic settings; its `rng_seed` is replaced by the pipeline seed.
    pub synth: SynthConfig,
    pub mosaic: MosaicConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        self.synth.validate()?;
        self.mosaic.validate()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    #[default]
    None,
    GridSynthetic,
    MixUp,
}

/// Decisions taken for one pipeline sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PipelineTrace {
    pub mosaic: bool,
    pub branch: Branch,
    /// Outcome of the blend draw. It is drawn for every sample and only
    /// takes effect on the GridSynthetic branch.
    pub css_draw: bool,
    /// Grid resolution, on the GridSynthetic branch.
    pub resolution: Option<(u32, u32)>,
}

impl PipelineTrace {
    pub fn css_applied(&self) -> bool {
        self.branch == Branch::GridSynthetic && self.css_draw
    }
}

fn plan_with_rng(cfg: &PipelineConfig, rng: &mut SampleRng) -> PipelineTrace {
    let p = &cfg.policy;
    let u_mosaic: f64 = rng.random();
    let u_branch: f64 = rng.random();
    let u_css: f64 = rng.random();
    let branch = if u_branch < p.grid_synthetic {
        Branch::GridSynthetic
    } else if u_branch < p.grid_synthetic + p.mixup {
        Branch::MixUp
    } else {
        Branch::None
    };
    PipelineTrace {
        mosaic: u_mosaic < p.mosaic,
        branch,
        css_draw: u_css < cfg.synth.grid.css_probability,
        resolution: None,
    }
}

/// The augmentation decisions for sample `index`, without producing it.
pub fn pipeline_plan(cfg: &PipelineConfig, rng_seed: u64, index: u64) -> PipelineTrace {
    plan_with_rng(cfg, &mut sample_rng(rng_seed, index, stream::PIPELINE))
}

fn fit_to(s: &SampleAnnotation, w: u32, h: u32) -> Result<SampleAnnotation> {
    if s.width() == w && s.height() == h {
        return Ok(s.clone());
    }
    let (sx, sy) = (w as f64 / s.width() as f64, h as f64 / s.height() as f64);
    Ok(SampleAnnotation {
        image: s.image.resize_bilinear(w, h)?,
        instances: s
            .instances
            .iter()
            .map(|i| Instance {
                bbox: affine_remap_box(&i.bbox, sx, sy, 0.0, 0.0),
                ..*i
            })
            .collect(),
        text_labels: s.text_labels.clone(),
    })
}

/// Produces pipeline sample `index`: mosaic, then GridSynthetic or MixUp.
/// The input is `base[index % base.len()]`; mosaic and MixUp partners are
/// drawn from `base`. A GridSynthetic sample replaces the current one.
pub fn pipeline_sample(
    base: &[SampleAnnotation],
    pool: Option<&ObjectPool>,
    cfg: &PipelineConfig,
    rng_seed: u64,
    index: u64,
) -> Result<(SampleAnnotation, PipelineTrace)> {
    cfg.validate()?;
    if base.is_empty() {
        return Err(Error::InvalidConfig("pipeline base stream is empty".into()));
    }
    let mut rng = sample_rng(rng_seed, index, stream::PIPELINE);
    let mut trace = plan_with_rng(cfg, &mut rng);
    let n = base.len();
    let own = &base[(index % n as u64) as usize];
    let mut current = if trace.mosaic {
        let mut pick = || base[rng.random_range(0..n)].clone();
        let quads = [own.clone(), pick(), pick(), pick()];
        mosaic(&quads, &cfg.mosaic, rng_seed, index)?
    } else {
        own.clone()
    };
    match trace.branch {
        Branch::None => {}
        Branch::GridSynthetic => {
            let pool = pool.ok_or(Error::EmptyPool)?;
            let synth = SynthConfig {
                rng_seed,
                ..cfg.synth.clone()
            };
            let (s, g) = grid_synthesize_with_css(pool, &synth, index, trace.css_draw)?;
            trace.resolution = Some(g.resolution);
            current = s;
        }
        Branch::MixUp => {
            let partner = &base[rng.random_range(0..n)];
            let partner = fit_to(partner, current.width(), current.height())?;
            current = mixup(&current, &partner)?;
        }
    }
    Ok((current, trace))
}

/// Samples `0..count` of the pipeline, generated in parallel, in index order.
pub fn pipeline_apply(
    base: &[SampleAnnotation],
    pool: Option<&ObjectPool>,
    cfg: &PipelineConfig,
    rng_seed: u64,
    count: u64,
) -> Result<Vec<SampleAnnotation>> {
    cfg.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| pipeline_sample(base, pool, cfg, rng_seed, i).map(|(s, _)| s))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Box2D;
    use crate::image::ImageBuffer;
    use crate::pool::ObjectPatch;
    use crate::synth::GridSpec;
    use std::collections::BTreeMap;

    fn base(n: usize) -> Vec<SampleAnnotation> {
        (0..n)
            .map(|i| SampleAnnotation {
                image: ImageBuffer::filled(64, 64, [i as u8 * 20; 3]).unwrap(),
                instances: vec![Instance {
                    bbox: Box2D::new(4.0, 4.0, 40.0, 40.0).unwrap(),
                    category_id: i as u32,
                    image_id: i as u64,
                }],
                text_labels: BTreeMap::new(),
            })
            .collect()
    }

    fn pool() -> ObjectPool {
        let p = ObjectPatch {
            pixels: ImageBuffer::filled(10, 10, [9; 3]).unwrap(),
            tight_box: Box2D::new(1.0, 1.0, 9.0, 9.0).unwrap(),
            category_id: 7,
            source_image_id: 0,
            crop_origin: [0, 0],
        };
        ObjectPool::from_patches(vec![p], BTreeMap::new()).unwrap()
    }

    fn small_cfg(policy: PipelinePolicy, css: f64) -> PipelineConfig {
        PipelineConfig {
            policy,
            synth: SynthConfig {
                grid: GridSpec {
                    canvas_w: 64,
                    canvas_h: 64,
                    css_probability: css,
                    ..GridSpec::default()
                },
                ..SynthConfig::default()
            },
            mosaic: MosaicConfig {
                canvas_w: 64,
                canvas_h: 64,
                ..MosaicConfig::default()
            },
        }
    }

    #[test]
    fn disabled_policy_is_identity() {
        let b = base(3);
        let cfg = small_cfg(PipelinePolicy::disabled(), 0.5);
        let out = pipeline_apply(&b, Some(&pool()), &cfg, 1, 7).unwrap();
        for (i, s) in out.iter().enumerate() {
            assert_eq!(s, &b[i % 3]);
        }
    }

    #[test]
    fn always_grid_without_css() {
        let policy = PipelinePolicy {
            grid_synthetic: 1.0,
            mixup: 0.0,
            ..PipelinePolicy::default()
        };
        let cfg = small_cfg(policy, 0.0);
        for i in 0..20 {
            let (s, t) = pipeline_sample(&base(2), Some(&pool()), &cfg, 3, i).unwrap();
            let (m, n) = t.resolution.unwrap();
            assert_eq!(s.instances.len(), (m * n) as usize);
            assert!(s.instances.iter().all(|x| x.category_id == 7));
        }
    }

    #[test]
    fn grid_branch_needs_a_pool() {
        let policy = PipelinePolicy {
            grid_synthetic: 1.0,
            mixup: 0.0,
            mosaic: 0.0,
        };
        let r = pipeline_sample(&base(1), None, &small_cfg(policy, 0.0), 0, 0);
        assert!(matches!(r, Err(Error::EmptyPool)));
    }

    #[test]
    fn mixup_partner_is_resized() {
        let mut b = base(2);
        b[1] = SampleAnnotation {
            image: ImageBuffer::filled(32, 16, [200; 3]).unwrap(),
            instances: vec![Instance {
                bbox: Box2D::new(0.0, 0.0, 16.0, 8.0).unwrap(),
                category_id: 1,
                image_id: 1,
            }],
            text_labels: BTreeMap::new(),
        };
        let policy = PipelinePolicy {
            mosaic: 0.0,
            grid_synthetic: 0.0,
            mixup: 1.0,
        };
        let (s, t) = pipeline_sample(&b, None, &small_cfg(policy, 0.0), 5, 0).unwrap();
        assert_eq!(t.branch, Branch::MixUp);
        assert_eq!((s.width(), s.height()), (64, 64));
        assert_eq!(s.instances.len(), 2);
        assert!(s.instances.iter().all(|i| i.bbox.is_within(64.0, 64.0)));
    }

    #[test]
    fn plan_matches_sample_and_is_deterministic() {
        let cfg = small_cfg(PipelinePolicy::default(), 0.5);
        let (b, p) = (base(4), pool());
        for i in 0..50 {
            let (s1, t1) = pipeline_sample(&b, Some(&p), &cfg, 8, i).unwrap();
            let (s2, t2) = pipeline_sample(&b, Some(&p), &cfg, 8, i).unwrap();
            assert_eq!((s1, t1), (s2, t2));
            let plan = pipeline_plan(&cfg, 8, i);
            assert_eq!((plan.mosaic, plan.branch, plan.css_draw), (t1.mosaic, t1.branch, t1.css_draw));
        }
    }

    #[test]
    fn policy_validation() {
        let bad = PipelinePolicy {
            grid_synthetic: 0.6,
            mixup: 0.6,
            ..PipelinePolicy::default()
        };
        assert!(bad.validate().is_err());
        assert!(PipelinePolicy { mosaic: 1.5, ..PipelinePolicy::default() }.validate().is_err());
        assert!(PipelinePolicy::default().validate().is_ok());
    }
}

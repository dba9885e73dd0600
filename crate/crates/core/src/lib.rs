//! Open-vocabulary detection toolkit: GridSynthetic data augmentation and its
//! baselines, vision-text alignment losses, text-aware query selection with
//! query supplement, and an AP / Fixed-AP evaluator.
//!
//! Boxes are corner-form `[x1, y1, x2, y2]` in absolute pixels throughout;
//! COCO `[x, y, w, h]` appears only at file boundaries.

pub mod dataio;
pub mod error;
pub mod geometry;
pub mod image;
pub mod metrics;
pub mod pool;
pub mod rng;
pub mod sample;
pub mod synth;
pub mod vlalign;

pub use error::{Error, Result};
pub use geometry::{giou, iou, Box2D};
pub use image::ImageBuffer;
pub use pool::{build_pool, ObjectPatch, ObjectPool};
pub use sample::{CategoryId, ImageId, Instance, SampleAnnotation};

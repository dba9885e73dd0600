//! Annotated samples: an image, its boxes, and the text label of each
//! category that appears.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Box2D;
use crate::image::ImageBuffer;

pub type CategoryId = u32;
pub type ImageId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub bbox: Box2D,
    pub category_id: CategoryId,
    pub image_id: ImageId,
}

/// An image with its instances and the category-id to text bindings used
/// as prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleAnnotation {
    pub image: ImageBuffer,
    pub instances: Vec<Instance>,
    pub text_labels: BTreeMap<CategoryId, String>,
}

impl SampleAnnotation {
    /// Builds a sample, rejecting instances that fall outside the image.
    pub fn new(
        image: ImageBuffer,
        instances: Vec<Instance>,
        text_labels: BTreeMap<CategoryId, String>,
    ) -> Result<Self> {
        let s = Self {
            image,
            instances,
            text_labels,
        };
        s.check_bounds()?;
        Ok(s)
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    pub fn check_bounds(&self) -> Result<()> {
        let (w, h) = (self.width() as f64, self.height() as f64);
        match self.instances.iter().find(|i| !i.bbox.is_within(w, h)) {
            Some(bad) => Err(Error::InvalidConfig(format!(
                "instance {:?} lies outside the {}x{} image",
                bad.bbox,
                self.width(),
                self.height()
            ))),
            None => Ok(()),
        }
    }

    /// Category ids of all instances, in instance order.
    pub fn category_ids(&self) -> Vec<CategoryId> {
        self.instances.iter().map(|i| i.category_id).collect()
    }
}

//! COCO-style annotation files with LVIS-style frequency tags, and COCO
//! result files for detections.
//!
//! Boxes are `[x, y, w, h]` in absolute pixels on disk and corner form in
//! memory.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::images::read_image;
use crate::dataio::write_atomic;
use crate::error::{Error, Result};
use crate::geometry::Box2D;
use crate::metrics::{Detection, Origin};
use crate::sample::{CategoryId, ImageId, Instance, SampleAnnotation};

/// LVIS category frequency bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Frequency {
    #[serde(rename = "r")]
    Rare,
    #[serde(rename = "c")]
    Common,
    #[serde(rename = "f")]
    Frequent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryInfo {
    pub id: CategoryId,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<Frequency>,
}

/// One image and its instances.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: ImageId,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub instances: Vec<Instance>,
}

impl ImageRecord {
    /// Decodes the image from `images_dir` and attaches the labels of the
    /// categories it uses.
    pub fn load_sample(
        &self,
        images_dir: &Path,
        categories: &[CategoryInfo],
    ) -> Result<SampleAnnotation> {
        let path = images_dir.join(&self.file_name);
        let image = read_image(&path)?;
        if image.width() != self.width || image.height() != self.height {
            return Err(Error::Decode {
                path,
                message: format!(
                    "annotated as {}x{} but decoded as {}x{}",
                    self.width,
                    self.height,
                    image.width(),
                    image.height()
                ),
            });
        }
        let used: HashSet<CategoryId> = self.instances.iter().map(|i| i.category_id).collect();
        let text_labels = categories
            .iter()
            .filter(|c| used.contains(&c.id))
            .map(|c| (c.id, c.name.clone()))
            .collect();
        Ok(SampleAnnotation {
            image,
            instances: self.instances.clone(),
            text_labels,
        })
    }
}

/// Contents of an annotation file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationSet {
    pub images: Vec<ImageRecord>,
    pub categories: Vec<CategoryInfo>,
}

impl AnnotationSet {
    pub fn instance_count(&self) -> usize {
        self.images.iter().map(|i| i.instances.len()).sum()
    }

    /// Category-id to text bindings of the whole vocabulary.
    pub fn text_labels(&self) -> BTreeMap<CategoryId, String> {
        self.categories
            .iter()
            .map(|c| (c.id, c.name.clone()))
            .collect()
    }

    /// Builds a set from in-memory samples. Image ids start at `first_id`
    /// and file names follow `name_of(index)`.
    pub fn from_samples(
        samples: &[SampleAnnotation],
        first_id: ImageId,
        name_of: impl Fn(usize) -> String,
    ) -> Self {
        let mut labels: BTreeMap<CategoryId, String> = BTreeMap::new();
        let images = samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let id = first_id + i as ImageId;
                for (k, v) in &s.text_labels {
                    labels.entry(*k).or_insert_with(|| v.clone());
                }
                for inst in &s.instances {
                    labels
                        .entry(inst.category_id)
                        .or_insert_with(|| inst.category_id.to_string());
                }
                ImageRecord {
                    id,
                    file_name: name_of(i),
                    width: s.width(),
                    height: s.height(),
                    instances: s
                        .instances
                        .iter()
                        .map(|inst| Instance {
                            image_id: id,
                            ..*inst
                        })
                        .collect(),
                }
            })
            .collect();
        let categories = labels
            .into_iter()
            .map(|(id, name)| CategoryInfo {
                id,
                name,
                frequency: None,
            })
            .collect();
        Self { images, categories }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CategoryInfo>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoImage {
    id: ImageId,
    file_name: String,
    width: u32,
    height: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: ImageId,
    category_id: CategoryId,
    bbox: [f64; 4],
    #[serde(default)]
    area: f64,
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn dangling(path: &Path, message: String) -> Error {
    Error::DanglingReference {
        path: path.to_path_buf(),
        message,
    }
}

/// Loads an annotation file. Annotations are grouped under their image in
/// file order; images are not decoded.
pub fn load_annotations(path: &Path) -> Result<AnnotationSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CocoFile = serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))?;

    let mut index: HashMap<ImageId, usize> = HashMap::with_capacity(file.images.len());
    let mut images = Vec::with_capacity(file.images.len());
    for img in file.images {
        if index.insert(img.id, images.len()).is_some() {
            return Err(parse_err(path, format!("duplicate image id {}", img.id)));
        }
        images.push(ImageRecord {
            id: img.id,
            file_name: img.file_name,
            width: img.width,
            height: img.height,
            instances: Vec::new(),
        });
    }
    let mut known_categories = HashSet::new();
    for c in &file.categories {
        if !known_categories.insert(c.id) {
            return Err(parse_err(path, format!("duplicate category id {}", c.id)));
        }
    }
    for (k, ann) in file.annotations.into_iter().enumerate() {
        let slot = *index.get(&ann.image_id).ok_or_else(|| {
            dangling(
                path,
                format!("annotation {} references missing image id {}", ann.id, ann.image_id),
            )
        })?;
        if !known_categories.contains(&ann.category_id) {
            return Err(dangling(
                path,
                format!(
                    "annotation {} references missing category id {}",
                    ann.id, ann.category_id
                ),
            ));
        }
        let [x, y, w, h] = ann.bbox;
        let bbox = Box2D::from_xywh(x, y, w, h)
            .map_err(|e| parse_err(path, format!("annotations[{k}].bbox: {e}")))?;
        images[slot].instances.push(Instance {
            bbox,
            category_id: ann.category_id,
            image_id: ann.image_id,
        });
    }
    Ok(AnnotationSet {
        images,
        categories: file.categories,
    })
}

/// Writes an annotation file atomically. Annotation ids are assigned
/// sequentially from 1 in output order (image order, then instance order).
pub fn save_annotations(set: &AnnotationSet, path: &Path) -> Result<()> {
    let mut annotations = Vec::with_capacity(set.instance_count());
    for img in &set.images {
        for inst in &img.instances {
            annotations.push(CocoAnnotation {
                id: annotations.len() as u64 + 1,
                image_id: img.id,
                category_id: inst.category_id,
                bbox: inst.bbox.to_xywh(),
                area: inst.bbox.area(),
            });
        }
    }
    let file = CocoFile {
        images: set
            .images
            .iter()
            .map(|i| CocoImage {
                id: i.id,
                file_name: i.file_name.clone(),
                width: i.width,
                height: i.height,
            })
            .collect(),
        annotations,
        categories: set.categories.clone(),
    };
    write_atomic(path, to_canonical_json(&file).as_bytes())
}

fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoResult {
    image_id: ImageId,
    category_id: CategoryId,
    bbox: [f64; 4],
    score: f64,
    #[serde(default)]
    origin: Origin,
}

/// Reads a COCO result list (`[{image_id, category_id, bbox, score}]`).
pub fn load_detections(path: &Path) -> Result<Vec<Detection>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<CocoResult> =
        serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))?;
    rows.into_iter()
        .enumerate()
        .map(|(k, r)| {
            let [x, y, w, h] = r.bbox;
            let bbox = Box2D::from_xywh(x, y, w, h)
                .map_err(|e| parse_err(path, format!("[{k}].bbox: {e}")))?;
            if !(0.0..=1.0).contains(&r.score) {
                return Err(parse_err(path, format!("[{k}].score {} outside [0, 1]", r.score)));
            }
            Ok(Detection {
                image_id: r.image_id,
                category_id: r.category_id,
                bbox,
                score: r.score,
                origin: r.origin,
            })
        })
        .collect()
}

pub fn save_detections(dets: &[Detection], path: &Path) -> Result<()> {
    let rows: Vec<CocoResult> = dets
        .iter()
        .map(|d| CocoResult {
            image_id: d.image_id,
            category_id: d.category_id,
            bbox: d.bbox.to_xywh(),
            score: d.score,
            origin: d.origin,
        })
        .collect();
    write_atomic(path, to_canonical_json(&rows).as_bytes())
}

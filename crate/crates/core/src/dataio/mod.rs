//! File formats: COCO-style annotations and detections, images, embedding
//! matrices and the run configuration.

pub mod coco;
pub mod config;
pub mod embeddings;
pub mod images;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use coco::{
    load_annotations, load_detections, save_annotations, save_detections, AnnotationSet,
    CategoryInfo, Frequency, ImageRecord,
};
pub use config::RunConfig;
pub use embeddings::{load_embeddings, pseudo_embeddings, save_embeddings};
pub use images::{read_image, write_image};

/// Writes `bytes` to a temporary file next to `path`, then renames it into
/// place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

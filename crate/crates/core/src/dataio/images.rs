//! PNG and binary PPM codecs, backed by the `image` crate.

use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::dataio::write_atomic;
use crate::error::{Error, Result};
use crate::image::ImageBuffer;

fn format_for(path: &Path) -> Result<ImageFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("png") => Ok(ImageFormat::Png),
        Some("ppm") | Some("pnm") => Ok(ImageFormat::Pnm),
        _ => Err(Error::Decode {
            path: path.to_path_buf(),
            message: "unsupported extension (expected .png or .ppm)".into(),
        }),
    }
}

/// Reads a PNG or PPM file as 8-bit RGB.
pub fn read_image(path: &Path) -> Result<ImageBuffer> {
    let format = format_for(path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory_with_format(&bytes, format).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = decoded.into_rgb8();
    let (w, h) = rgb.dimensions();
    ImageBuffer::from_raw(w, h, rgb.into_raw()).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Encodes as PNG or binary PPM depending on the extension.
pub fn write_image(img: &ImageBuffer, path: &Path) -> Result<()> {
    let format = format_for(path)?;
    let bytes = encode_image(img, format).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    write_atomic(path, &bytes)
}

/// Encoded PNG bytes.
pub fn encode_png(img: &ImageBuffer) -> Vec<u8> {
    encode_image(img, ImageFormat::Png).expect("in-memory PNG encoding cannot fail")
}

fn encode_image(img: &ImageBuffer, format: ImageFormat) -> image::ImageResult<Vec<u8>> {
    let rgb = RgbImage::from_raw(img.width(), img.height(), img.pixels().to_vec())
        .expect("buffer length is an ImageBuffer invariant");
    let mut out = std::io::Cursor::new(Vec::new());
    match format {
        ImageFormat::Pnm => {
            let enc = image::codecs::pnm::PnmEncoder::new(&mut out)
                .with_subtype(image::codecs::pnm::PnmSubtype::Pixmap(
                    image::codecs::pnm::SampleEncoding::Binary,
                ));
            image::ImageEncoder::write_image(
                enc,
                rgb.as_raw(),
                img.width(),
                img.height(),
                image::ExtendedColorType::Rgb8,
            )?;
        }
        _ => rgb.write_to(&mut out, format)?,
    }
    Ok(out.into_inner())
}

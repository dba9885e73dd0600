//! Owned 8-bit RGB rasters and the pixel operations the compositors need.

use crate::error::{Error, Result};

/// Row-major `height x width x 3` raster with 8-bit channels.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl ImageBuffer {
    /// Image of the given size with every channel set to `value`.
    pub fn filled(width: u32, height: u32, value: [u8; 3]) -> Result<Self> {
        check_dims(width, height)?;
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&value);
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_raw(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        check_dims(width, height)?;
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::InvalidImage(format!(
                "{}x{} image needs {expected} bytes, got {}",
                width,
                height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, value: [u8; 3]) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&value);
    }

    /// Copies out the rectangle `[x0, x1) x [y0, y1)`, which must be
    /// non-empty and inside the image.
    pub fn crop(&self, x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 || x1 > self.width || y1 > self.height {
            return Err(Error::InvalidImage(format!(
                "crop [{x0}, {y0}, {x1}, {y1}) outside {}x{}",
                self.width, self.height
            )));
        }
        let w = (x1 - x0) as usize;
        let mut pixels = Vec::with_capacity(w * (y1 - y0) as usize * 3);
        for y in y0..y1 {
            let o = self.offset(x0, y);
            pixels.extend_from_slice(&self.pixels[o..o + w * 3]);
        }
        Ok(Self {
            width: x1 - x0,
            height: y1 - y0,
            pixels,
        })
    }

    /// Mirror image around the vertical axis.
    pub fn hflip(&self) -> Self {
        let mut out = self.clone();
        let w = self.width as usize;
        for y in 0..self.height as usize {
            let row = &self.pixels[y * w * 3..(y + 1) * w * 3];
            let dst = &mut out.pixels[y * w * 3..(y + 1) * w * 3];
            for x in 0..w {
                dst[x * 3..x * 3 + 3].copy_from_slice(&row[(w - 1 - x) * 3..(w - x) * 3]);
            }
        }
        out
    }

    /// Bilinear resize with half-pixel centers and edge clamping. Channel
    /// values are rounded half-up. Same-size resizes return an exact copy.
    pub fn resize_bilinear(&self, width: u32, height: u32) -> Result<Self> {
        check_dims(width, height)?;
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let xs: Vec<(usize, usize, f64)> = axis_taps(self.width, width)
            .into_iter()
            .map(|(lo, hi, f)| (lo as usize * 3, hi as usize * 3, f))
            .collect();
        let ys = axis_taps(self.height, height);
        let src_row = self.width as usize * 3;
        let mut pixels = vec![0u8; width as usize * height as usize * 3];
        for (out, &(y0, y1, fy)) in pixels.chunks_exact_mut(width as usize * 3).zip(&ys) {
            let r0 = &self.pixels[y0 as usize * src_row..][..src_row];
            let r1 = &self.pixels[y1 as usize * src_row..][..src_row];
            for (px, &(x0, x1, fx)) in out.chunks_exact_mut(3).zip(&xs) {
                for c in 0..3 {
                    let top = lerp(r0[x0 + c], r0[x1 + c], fx);
                    let bottom = lerp(r1[x0 + c], r1[x1 + c], fx);
                    px[c] = round_channel(top + (bottom - top) * fy);
                }
            }
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Overwrites pixels with `src` placed at `(x, y)`; parts falling
    /// outside this image are dropped.
    pub fn paste(&mut self, src: &ImageBuffer, x: i64, y: i64) {
        let x_start = x.max(0);
        let y_start = y.max(0);
        let x_end = (x + src.width as i64).min(self.width as i64);
        let y_end = (y + src.height as i64).min(self.height as i64);
        if x_start >= x_end || y_start >= y_end {
            return;
        }
        let run = (x_end - x_start) as usize * 3;
        for dy in y_start..y_end {
            let s = src.offset((x_start - x) as u32, (dy - y) as u32);
            let d = self.offset(x_start as u32, dy as u32);
            self.pixels[d..d + run].copy_from_slice(&src.pixels[s..s + run]);
        }
    }

    /// Per-channel `round_half_up(0.5 * a + 0.5 * b)`.
    pub fn blend_half(a: &ImageBuffer, b: &ImageBuffer) -> Result<Self> {
        if a.width != b.width || a.height != b.height {
            return Err(Error::DimensionMismatch(format!(
                "cannot blend {}x{} with {}x{}",
                a.width, a.height, b.width, b.height
            )));
        }
        let pixels = a
            .pixels
            .iter()
            .zip(&b.pixels)
            .map(|(&u, &v)| ((u as u16 + v as u16 + 1) >> 1) as u8)
            .collect();
        Ok(Self {
            width: a.width,
            height: a.height,
            pixels,
        })
    }
}

fn check_dims(width: u32, height: u32) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidImage(format!(
            "dimensions must be positive, got {width}x{height}"
        )));
    }
    Ok(())
}

#[inline]
fn lerp(a: u8, b: u8, t: f64) -> f64 {
    a as f64 + (b as f64 - a as f64) * t
}

#[inline]
fn round_channel(v: f64) -> u8 {
    // inputs lie in [0, 255]: truncating after +0.5 rounds half up
    (v + 0.5) as u8
}

/// Source taps `(lo, hi, frac)` for every destination coordinate.
fn axis_taps(src: u32, dst: u32) -> Vec<(u32, u32, f64)> {
    let scale = src as f64 / dst as f64;
    let last = (src - 1) as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = s.floor();
            let hi = (lo + 1.0).min(last);
            (lo as u32, hi as u32, s - lo)
        })
        .collect()
}

/// Peak signal-to-noise ratio in dB between same-sized images; infinite
/// for identical inputs.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch("psnr needs equal sizes".into()));
    }
    let mse = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&u, &v)| {
            let d = u as f64 - v as f64;
            d * d
        })
        .sum::<f64>()
        / a.pixels.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(w: u32, h: u32) -> ImageBuffer {
        let px = (0..w * h * 3).map(|i| (i * 37 % 251) as u8).collect();
        ImageBuffer::from_raw(w, h, px).unwrap()
    }

    #[test]
    fn raw_length_is_checked() {
        assert!(ImageBuffer::from_raw(2, 2, vec![0; 11]).is_err());
        assert!(ImageBuffer::from_raw(0, 2, vec![]).is_err());
        assert!(ImageBuffer::from_raw(2, 2, vec![0; 12]).is_ok());
    }

    #[test]
    fn hflip_reverses_columns() {
        let img = ImageBuffer::from_raw(2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(img.hflip().pixels(), &[4, 5, 6, 1, 2, 3]);
    }

    #[test]
    fn resize_same_size_is_identity() {
        let img = pattern(7, 5);
        assert_eq!(img.resize_bilinear(7, 5).unwrap(), img);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = ImageBuffer::filled(13, 9, [10, 200, 77]).unwrap();
        let out = img.resize_bilinear(5, 21).unwrap();
        assert!(out.pixels().chunks(3).all(|p| p == [10, 200, 77]));
    }

    #[test]
    fn resize_halving_averages_pairs() {
        // half-pixel centers put every output sample exactly between two inputs
        let img = ImageBuffer::from_raw(4, 1, vec![0, 0, 0, 10, 10, 10, 20, 20, 20, 31, 31, 31])
            .unwrap();
        let out = img.resize_bilinear(2, 1).unwrap();
        assert_eq!(out.pixels(), &[5, 5, 5, 26, 26, 26]);
    }

    #[test]
    fn crop_and_paste_roundtrip() {
        let img = pattern(10, 8);
        let c = img.crop(2, 3, 6, 8).unwrap();
        assert_eq!((c.width(), c.height()), (4, 5));
        assert_eq!(c.pixel(0, 0), img.pixel(2, 3));
        let mut canvas = ImageBuffer::filled(10, 8, [0; 3]).unwrap();
        canvas.paste(&c, 2, 3);
        assert_eq!(canvas.crop(2, 3, 6, 8).unwrap(), c);
        assert!(img.crop(2, 3, 2, 8).is_err());
        assert!(img.crop(0, 0, 11, 1).is_err());
    }

    #[test]
    fn paste_clips_at_borders() {
        let mut canvas = ImageBuffer::filled(4, 4, [0; 3]).unwrap();
        let src = ImageBuffer::filled(3, 3, [9; 3]).unwrap();
        canvas.paste(&src, -1, 2);
        let set = canvas.pixels().chunks(3).filter(|p| p[0] == 9).count();
        assert_eq!(set, 4);
        canvas.paste(&src, 10, 10);
    }

    #[test]
    fn blend_rounds_half_up() {
        let a = ImageBuffer::filled(3, 2, [0; 3]).unwrap();
        let b = ImageBuffer::filled(3, 2, [255; 3]).unwrap();
        let m = ImageBuffer::blend_half(&a, &b).unwrap();
        assert!(m.pixels().iter().all(|&v| v == 128));
        let x = pattern(3, 2);
        assert_eq!(ImageBuffer::blend_half(&x, &x).unwrap(), x);
        let other = ImageBuffer::filled(2, 3, [0; 3]).unwrap();
        assert!(matches!(
            ImageBuffer::blend_half(&a, &other),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn psnr_of_identical_is_infinite() {
        let a = pattern(4, 4);
        assert!(psnr(&a, &a).unwrap().is_infinite());
    }
}

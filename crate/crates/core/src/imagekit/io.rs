use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, ImageReader, RgbImage};

use crate::error::{Error, Result};
use crate::ImageTensor;

/// Decodes a PNG or JPEG file into a tensor with values in `[0, 1]`.
///
/// Gray images give one channel, color images three; alpha is dropped.
/// 8-bit samples map to `v / 255`, 16-bit samples to `v / 65535`.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let reader = ImageReader::open(path)?
        .with_guessed_format()
        .map_err(|e| Error::CorruptData(format!("{}: {e}", path.display())))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Jpeg) => {}
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: {}",
                path.display(),
                other.map_or("unknown".to_string(), |f| format!("{f:?}"))
            )))
        }
    }
    let img = reader
        .decode()
        .map_err(|e| Error::CorruptData(format!("{}: {e}", path.display())))?;
    Ok(from_dynamic_image(&img))
}

fn from_dynamic_image(img: &DynamicImage) -> ImageTensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = !img.color().has_color();
    let sixteen = img.color().bytes_per_pixel() / img.color().channel_count() > 1;
    match (gray, sixteen) {
        (true, false) => {
            let g = img.to_luma8();
            ImageTensor::from_fn(1, h, w, |_, y, x| {
                g.get_pixel(x as u32, y as u32)[0] as f64 / 255.0
            })
        }
        (true, true) => {
            let g = img.to_luma16();
            ImageTensor::from_fn(1, h, w, |_, y, x| {
                g.get_pixel(x as u32, y as u32)[0] as f64 / 65535.0
            })
        }
        (false, false) => {
            let rgb = img.to_rgb8();
            ImageTensor::from_fn(3, h, w, |c, y, x| {
                rgb.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
            })
        }
        (false, true) => {
            let rgb = img.to_rgb16();
            ImageTensor::from_fn(3, h, w, |c, y, x| {
                rgb.get_pixel(x as u32, y as u32)[c] as f64 / 65535.0
            })
        }
    }
}

#[inline]
fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit raster view of a 1- or 3-channel tensor.
pub fn to_dynamic_image(img: &ImageTensor) -> Result<DynamicImage> {
    let (c, h, w) = img.shape();
    match c {
        1 => Ok(DynamicImage::ImageLuma8(GrayImage::from_fn(
            w as u32,
            h as u32,
            |x, y| image::Luma([quantize(img.get(0, y as usize, x as usize))]),
        ))),
        3 => Ok(DynamicImage::ImageRgb8(RgbImage::from_fn(
            w as u32,
            h as u32,
            |x, y| {
                let (x, y) = (x as usize, y as usize);
                image::Rgb([
                    quantize(img.get(0, y, x)),
                    quantize(img.get(1, y, x)),
                    quantize(img.get(2, y, x)),
                ])
            },
        ))),
        _ => Err(Error::shape("1 or 3 channels", c)),
    }
}

/// Writes an 8-bit image; the format follows the file extension.
pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = ImageFormat::from_path(path)
        .map_err(|_| Error::UnsupportedFormat(path.display().to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
        return Err(Error::UnsupportedFormat(path.display().to_string()));
    }
    to_dynamic_image(img)?
        .save_with_format(path, format)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::Io(io),
            other => Error::CorruptData(other.to_string()),
        })
}

/// Center square crop to `min(h, w)` followed by bilinear resize to
/// `side x side`.
///
/// The crop offset rounds toward the top-left. Resampling uses pixel-center
/// alignment, so a same-size resize is the identity.
pub fn preprocess(img: &ImageTensor, side: usize) -> ImageTensor {
    let (c, h, w) = img.shape();
    let crop = h.min(w);
    let (oy, ox) = ((h - crop) / 2, (w - crop) / 2);
    if crop == side {
        return ImageTensor::from_fn(c, side, side, |ch, y, x| img.get(ch, y + oy, x + ox));
    }
    let scale = crop as f64 / side as f64;
    let sample = |dst: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (crop - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(crop - 1);
        (i0, i1, s - i0 as f64)
    };
    let rows: Vec<_> = (0..side).map(sample).collect();
    let cols = rows.clone();
    ImageTensor::from_fn(c, side, side, |ch, y, x| {
        let (y0, y1, fy) = rows[y];
        let (x0, x1, fx) = cols[x];
        let p = |yy: usize, xx: usize| img.get(ch, yy + oy, xx + ox);
        let top = p(y0, x0) + (p(y0, x1) - p(y0, x0)) * fx;
        let bot = p(y1, x0) + (p(y1, x1) - p(y1, x0)) * fx;
        top + (bot - top) * fy
    })
}

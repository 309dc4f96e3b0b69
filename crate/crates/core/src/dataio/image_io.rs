use std::path::Path;

use image::{DynamicImage, ImageBuffer, Rgb};

use crate::error::{Error, Result};
use crate::image::Image;

/// Reads an 8-bit PNG into [0, 1] values as stored (no gamma transform).
/// Gray and RGBA inputs are widened / stripped to RGB.
pub fn load_image(path: &Path) -> Result<Image> {
    let err = |message: String| Error::Image {
        path: path.to_path_buf(),
        message,
    };
    let dynamic = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => err(other.to_string()),
    })?;
    let rgb = match dynamic {
        DynamicImage::ImageRgb8(b) => b,
        d @ (DynamicImage::ImageRgba8(_) | DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_)) => {
            d.to_rgb8()
        }
        other => {
            return Err(err(format!(
                "unsupported bit depth or color type {:?}; expected 8-bit RGB",
                other.color()
            )))
        }
    };
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Image::from_data(w as usize, h as usize, data)
}

/// Writes an 8-bit RGB PNG, clamping to [0, 1] and rounding `v * 255`.
pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, bytes)
            .ok_or_else(|| Error::Dimension(format!("image buffer does not match {}x{}", img.width, img.height)))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    buf.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

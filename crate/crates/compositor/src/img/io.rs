//! 8-bit image file I/O.
//!
//! Reads and writes 8-bit PNG (gray, RGB, RGBA) and binary PPM/PGM. The
//! format of an input file is detected from its leading bytes, never from
//! the extension; output format follows the destination extension.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{ColorType, DynamicImage, GenericImageView};

use super::{Image, SoftMask};
use crate::error::{Error, Result};

/// Output encodings supported by [`save_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    /// Binary PPM (color) or PGM (gray), chosen by channel count.
    Pnm,
}

impl ImageFormat {
    /// Pick the output format from a path extension; anything that is not
    /// a PNM extension writes PNG.
    pub fn from_path(path: &Path) -> ImageFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) => match ext.to_ascii_lowercase().as_str() {
                "ppm" | "pgm" | "pnm" => ImageFormat::Pnm,
                _ => ImageFormat::Png,
            },
            None => ImageFormat::Png,
        }
    }
}

/// Load an 8-bit image file into `[0,1]` floats (`s / 255`).
pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile { path: path.to_path_buf() }
        } else {
            Error::Io { path: path.to_path_buf(), source: e }
        }
    })?;

    let format = image::guess_format(&bytes).map_err(|e| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        detail: format!("unrecognized file signature: {e}"),
    })?;
    match format {
        image::ImageFormat::Png | image::ImageFormat::Pnm => {}
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("{other:?} is not supported; use PNG or PPM/PGM"),
            })
        }
    }

    let decoded = image::load_from_memory_with_format(&bytes, format).map_err(|e| {
        Error::CorruptImage { path: path.to_path_buf(), detail: e.to_string() }
    })?;

    match decoded.color() {
        ColorType::L8 | ColorType::Rgb8 | ColorType::Rgba8 | ColorType::La8 => {}
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("{other:?} samples; only 8-bit gray/RGB/RGBA are supported"),
            })
        }
    }

    let (w, h) = decoded.dimensions();
    let (w, h) = (w as usize, h as usize);
    let img = match decoded {
        DynamicImage::ImageLuma8(buf) => {
            Image::from_data(w, h, 1, buf.into_raw().iter().map(|&s| s as f32 / 255.0).collect())
        }
        DynamicImage::ImageRgb8(buf) => {
            Image::from_data(w, h, 3, buf.into_raw().iter().map(|&s| s as f32 / 255.0).collect())
        }
        DynamicImage::ImageRgba8(buf) => {
            Image::from_data(w, h, 4, buf.into_raw().iter().map(|&s| s as f32 / 255.0).collect())
        }
        // Gray+alpha is rare; widen to RGBA so downstream code sees a
        // standard channel count.
        other => {
            let buf = other.to_rgba8();
            Image::from_data(w, h, 4, buf.into_raw().iter().map(|&s| s as f32 / 255.0).collect())
        }
    }?;
    Ok(img)
}

/// Load a single-channel mask. Gray files map directly; color files are
/// reduced by channel mean (an RGBA alpha channel is ignored here — use
/// [`Image::alpha`] to pull a matte out of an RGBA composite).
pub fn load_mask(path: &Path) -> Result<SoftMask> {
    let img = load_image(path)?;
    Ok(mask_from_image(&img))
}

pub(crate) fn mask_from_image(img: &Image) -> SoftMask {
    match img.channels() {
        1 => SoftMask::from_image(img).expect("single channel"),
        c => {
            let color = if c == 4 { 3 } else { c };
            let data = img
                .data()
                .chunks_exact(c)
                .map(|px| px[..color].iter().sum::<f32>() / color as f32)
                .collect();
            SoftMask::from_data(img.width(), img.height(), data).expect("same dims")
        }
    }
}

/// Write an image as 8-bit PNG or binary PPM/PGM (chosen by extension),
/// quantizing with round-half-up: `clamp(round(s*255), 0, 255)`.
pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&s| (s as f64 * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let w = img.width() as u32;
    let h = img.height() as u32;
    let color = match img.channels() {
        1 => ColorType::L8,
        3 => ColorType::Rgb8,
        4 => ColorType::Rgba8,
        _ => unreachable!("Image enforces 1/3/4 channels"),
    };

    let mut out = Vec::new();
    match ImageFormat::from_path(path) {
        ImageFormat::Png => {
            image::write_buffer_with_format(
                &mut Cursor::new(&mut out),
                &bytes,
                w,
                h,
                color,
                image::ImageFormat::Png,
            )
            .map_err(|e| Error::InvalidArgument(format!("PNG encode failed: {e}")))?;
        }
        ImageFormat::Pnm => {
            // The pnm encoder rejects alpha; strip it first.
            let (bytes, color) = if img.channels() == 4 {
                let rgb = img.without_alpha();
                (
                    rgb.data()
                        .iter()
                        .map(|&s| (s as f64 * 255.0).round().clamp(0.0, 255.0) as u8)
                        .collect(),
                    ColorType::Rgb8,
                )
            } else {
                (bytes, color)
            };
            image::write_buffer_with_format(
                &mut Cursor::new(&mut out),
                &bytes,
                w,
                h,
                color,
                image::ImageFormat::Pnm,
            )
            .map_err(|e| Error::InvalidArgument(format!("PNM encode failed: {e}")))?;
        }
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() && !parent.exists() {
            fs::create_dir_all(parent)
                .map_err(|e| Error::Io { path: parent.to_path_buf(), source: e })?;
        }
    }
    fs::write(path, out).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

pub fn save_mask(mask: &SoftMask, path: &Path) -> Result<()> {
    save_image(&mask.to_image(), path)
}

//! Image containers, I/O, resampling, filtering and distance fields.
//!
//! All rasters are row-major with interleaved channels and hold `f32`
//! samples nominally in `[0, 1]`. Filtering accumulates in `f64` and only
//! stores back to `f32`, so results agree with straight-line scalar
//! reference code to well below the crate's test tolerances.

mod distance;
mod io;
mod ops;

pub use distance::{boundary_distance, DistanceField};
pub use io::{load_image, load_mask, save_image, save_mask, ImageFormat};
pub use ops::{
    gaussian_blur, gaussian_blur_mask, quantize_image, quantize_mask, resize_bilinear,
    resize_mask_bilinear,
};

pub(crate) use ops::convolve_axis;

use crate::error::{Error, Result};

/// H×W×C raster with samples in `[0, 1]`. Channels is 1, 3 or 4.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    /// All-zero image.
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::from_data(width, height, channels, vec![0.0; width * height * channels])
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if !matches!(channels, 1 | 3 | 4) {
            return Err(Error::InvalidArgument(format!(
                "channel count must be 1, 3 or 4, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::dims(
                "Image::from_data",
                format!("{} samples", width * height * channels),
                format!("{}", data.len()),
            ));
        }
        Ok(Image { width, height, channels, data })
    }

    /// Constant-valued image.
    pub fn splat(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        Self::from_data(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Clamp every sample into `[0, 1]` in place.
    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Snap every sample onto the 8-bit grid `round(v*255)/255`, the value
    /// it would carry after a save/load round trip.
    pub fn quantize8(&self) -> Image {
        let data = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
            .collect();
        Image { width: self.width, height: self.height, channels: self.channels, data }
    }

    /// Axis-aligned crop. The window must lie inside the image.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if x0 + w > self.width || y0 + h > self.height || w == 0 || h == 0 {
            return Err(Error::InvalidArgument(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * self.channels);
        for y in y0..y0 + h {
            let row = &self.data[(y * self.width + x0) * self.channels..(y * self.width + x0 + w) * self.channels];
            data.extend_from_slice(row);
        }
        Image::from_data(w, h, self.channels, data)
    }

    /// Drop an alpha channel if present, returning the RGB (or gray) part.
    pub fn without_alpha(&self) -> Image {
        if self.channels != 4 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.width * self.height * 3);
        for px in self.data.chunks_exact(4) {
            data.extend_from_slice(&px[..3]);
        }
        Image { width: self.width, height: self.height, channels: 3, data }
    }

    /// Alpha channel of an RGBA image as a mask, if present.
    pub fn alpha(&self) -> Option<SoftMask> {
        if self.channels != 4 {
            return None;
        }
        let data = self.data.chunks_exact(4).map(|px| px[3]).collect();
        Some(SoftMask { width: self.width, height: self.height, data })
    }
}

/// H×W single-channel raster in `[0, 1]`; holds alpha mattes and
/// segmentation masks.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl SoftMask {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        Self::from_data(width, height, vec![0.0; width * height])
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::dims(
                "SoftMask::from_data",
                format!("{} samples", width * height),
                format!("{}", data.len()),
            ));
        }
        Ok(SoftMask { width, height, data })
    }

    pub fn splat(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::from_data(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_dims_as_image(&self, img: &Image) -> bool {
        self.width == img.width() && self.height == img.height()
    }

    pub fn to_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.clone(),
        }
    }

    pub fn from_image(img: &Image) -> Result<Self> {
        if img.channels() != 1 {
            return Err(Error::InvalidArgument(format!(
                "mask source must be single-channel, got {} channels",
                img.channels()
            )));
        }
        SoftMask::from_data(img.width(), img.height(), img.data().to_vec())
    }

    pub fn quantize8(&self) -> SoftMask {
        let data = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
            .collect();
        SoftMask { width: self.width, height: self.height, data }
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<SoftMask> {
        SoftMask::from_image(&self.to_image().crop(x0, y0, w, h)?)
    }
}

/// Per-pixel label of a trimap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriLabel {
    Background,
    Foreground,
    Unknown,
}

/// H×W tri-valued label map partitioning the pixel grid into foreground,
/// background and an unknown boundary band.
#[derive(Debug, Clone, PartialEq)]
pub struct Trimap {
    width: usize,
    height: usize,
    labels: Vec<TriLabel>,
}

impl Trimap {
    pub fn from_labels(width: usize, height: usize, labels: Vec<TriLabel>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::dims(
                "Trimap::from_labels",
                format!("{} labels", width * height),
                format!("{}", labels.len()),
            ));
        }
        Ok(Trimap { width, height, labels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[TriLabel] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> TriLabel {
        self.labels[y * self.width + x]
    }

    pub fn count(&self, label: TriLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Pixel set selector for region-restricted metrics.
    pub fn region(&self, label: TriLabel) -> Vec<bool> {
        self.labels.iter().map(|&l| l == label).collect()
    }

    /// Encode as a gray mask (background 0, unknown ½, foreground 1) so a
    /// trimap can ride the ordinary mask I/O.
    pub fn to_mask(&self) -> SoftMask {
        let data = self
            .labels
            .iter()
            .map(|&l| match l {
                TriLabel::Background => 0.0,
                TriLabel::Unknown => 0.5,
                TriLabel::Foreground => 1.0,
            })
            .collect();
        SoftMask { width: self.width, height: self.height, data }
    }

    /// Decode a gray mask written by [`Trimap::to_mask`]; the nearest of
    /// the three canonical levels wins, so 8-bit storage round-trips.
    pub fn from_mask(mask: &SoftMask) -> Trimap {
        let labels = mask
            .data()
            .iter()
            .map(|&v| {
                if v < 0.25 {
                    TriLabel::Background
                } else if v > 0.75 {
                    TriLabel::Foreground
                } else {
                    TriLabel::Unknown
                }
            })
            .collect();
        Trimap { width: mask.width(), height: mask.height(), labels }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_data_validates_length_and_channels() {
        assert!(Image::from_data(2, 2, 3, vec![0.0; 12]).is_ok());
        assert!(Image::from_data(2, 2, 3, vec![0.0; 11]).is_err());
        assert!(Image::from_data(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(Image::from_data(0, 2, 3, vec![]).is_err());
    }

    #[test]
    fn alpha_split() {
        let img = Image::from_data(1, 1, 4, vec![0.1, 0.2, 0.3, 0.5]).unwrap();
        let a = img.alpha().unwrap();
        assert_eq!(a.get(0, 0), 0.5);
        let rgb = img.without_alpha();
        assert_eq!(rgb.channels(), 3);
        assert_eq!(rgb.data(), &[0.1, 0.2, 0.3]);
    }

    #[test]
    fn crop_bounds() {
        let img = Image::from_data(4, 3, 1, (0..12).map(|i| i as f32 / 12.0).collect()).unwrap();
        let c = img.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.get(0, 0, 0), 5.0 / 12.0);
        assert_eq!(c.get(1, 1, 0), 10.0 / 12.0);
        assert!(img.crop(3, 0, 2, 1).is_err());
    }

    #[test]
    fn quantize_snaps_to_grid() {
        let img = Image::from_data(1, 1, 1, vec![0.5]).unwrap();
        assert_eq!(img.quantize8().get(0, 0, 0), 128.0 / 255.0);
    }
}

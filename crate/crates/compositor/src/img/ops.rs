//! Resampling and filtering.

use super::{Image, SoftMask};
use crate::error::{Error, Result};

/// Mirror an out-of-range coordinate back into `0..n` without repeating the
/// edge sample (`-1 -> 1`, `n -> n-2`). The usual boundary rule for
/// pyramid-style filtering: constant signals stay constant under any
/// normalized kernel.
#[inline]
pub(crate) fn reflect101(i: isize, n: usize) -> usize {
    let n = n as isize;
    debug_assert!(n > 0);
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Bilinear resize with half-pixel-aligned sample centers: destination
/// pixel `dx` reads from source coordinate `(dx + 0.5) * w_src / w_dst - 0.5`,
/// clamped to the valid range.
pub fn resize_bilinear(src: &Image, dst_w: usize, dst_h: usize) -> Result<Image> {
    if dst_w == 0 || dst_h == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be positive, got {dst_w}x{dst_h}"
        )));
    }
    let (sw, sh, ch) = (src.width(), src.height(), src.channels());
    if sw == dst_w && sh == dst_h {
        return Ok(src.clone());
    }
    let scale_x = sw as f64 / dst_w as f64;
    let scale_y = sh as f64 / dst_h as f64;

    // Precompute per-axis source indices and weights.
    let xmap: Vec<(usize, usize, f64)> = (0..dst_w)
        .map(|dx| axis_sample(dx, scale_x, sw))
        .collect();
    let ymap: Vec<(usize, usize, f64)> = (0..dst_h)
        .map(|dy| axis_sample(dy, scale_y, sh))
        .collect();

    let mut data = vec![0.0f32; dst_w * dst_h * ch];
    for (dy, &(y0, y1, fy)) in ymap.iter().enumerate() {
        for (dx, &(x0, x1, fx)) in xmap.iter().enumerate() {
            for c in 0..ch {
                let p00 = src.get(x0, y0, c) as f64;
                let p10 = src.get(x1, y0, c) as f64;
                let p01 = src.get(x0, y1, c) as f64;
                let p11 = src.get(x1, y1, c) as f64;
                let top = p00 + (p10 - p00) * fx;
                let bot = p01 + (p11 - p01) * fx;
                data[(dy * dst_w + dx) * ch + c] = (top + (bot - top) * fy) as f32;
            }
        }
    }
    Image::from_data(dst_w, dst_h, ch, data)
}

/// One axis of the half-pixel mapping: floor index, neighbour, fraction.
fn axis_sample(d: usize, scale: f64, src_n: usize) -> (usize, usize, f64) {
    let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_n - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_n - 1);
    (i0, i1, s - i0 as f64)
}

pub fn resize_mask_bilinear(src: &SoftMask, dst_w: usize, dst_h: usize) -> Result<SoftMask> {
    SoftMask::from_image(&resize_bilinear(&src.to_image(), dst_w, dst_h)?)
}

/// Sampled Gaussian kernel truncated at radius `ceil(3 sigma)` and
/// renormalized to sum 1.
pub(crate) fn gaussian_kernel(sigma: f32) -> Vec<f64> {
    let sigma = sigma as f64;
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur with mirror boundary handling.
pub fn gaussian_blur(src: &Image, sigma: f32) -> Result<Image> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "blur sigma must be positive, got {sigma}"
        )));
    }
    let kernel = gaussian_kernel(sigma);
    let horizontal = convolve_axis(src, &kernel, true);
    Ok(convolve_axis(&horizontal, &kernel, false))
}

pub fn gaussian_blur_mask(src: &SoftMask, sigma: f32) -> Result<SoftMask> {
    SoftMask::from_image(&gaussian_blur(&src.to_image(), sigma)?)
}

/// Snap every sample to the nearest 8-bit level — bit-for-bit the value it
/// would carry after a PNG save/load round trip.
pub fn quantize_image(src: &Image) -> Image {
    let data = src.data().iter().map(|&v| quantize_sample(v)).collect();
    Image::from_data(src.width(), src.height(), src.channels(), data)
        .expect("quantization preserves shape")
}

/// Mask counterpart of [`quantize_image`].
pub fn quantize_mask(src: &SoftMask) -> SoftMask {
    let data = src.data().iter().map(|&v| quantize_sample(v)).collect();
    SoftMask::from_data(src.width(), src.height(), data).expect("quantization preserves shape")
}

// Mirrors the save-side rounding (f64) and the load-side division (f32)
// exactly; keep all three in lockstep.
fn quantize_sample(v: f32) -> f32 {
    let byte = (v as f64 * 255.0).round().clamp(0.0, 255.0) as f32;
    byte / 255.0
}

/// 1-D convolution along one axis with reflect-101 boundaries, f64 accumulation.
pub(crate) fn convolve_axis(src: &Image, kernel: &[f64], horizontal: bool) -> Image {
    let (w, h, ch) = (src.width(), src.height(), src.channels());
    let radius = (kernel.len() / 2) as isize;
    let mut data = vec![0.0f32; w * h * ch];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0f64;
                for (ki, &kv) in kernel.iter().enumerate() {
                    let offset = ki as isize - radius;
                    let (sx, sy) = if horizontal {
                        (reflect101(x as isize + offset, w), y)
                    } else {
                        (x, reflect101(y as isize + offset, h))
                    };
                    acc += kv * src.get(sx, sy, c) as f64;
                }
                data[(y * w + x) * ch + c] = acc as f32;
            }
        }
    }
    Image::from_data(w, h, ch, data).expect("axis convolution preserves shape")
}

//! Gaussian/Laplacian pyramids and multi-band blending.
//!
//! The classical Burt–Adelson scheme: repeatedly blur with the 5-tap
//! binomial kernel (1,4,6,4,1)/16 and decimate by two; band-pass levels
//! are differences against the re-upsampled next-coarser level, so the
//! pyramid collapses back to the source exactly up to rounding. Blending
//! mixes two Laplacian pyramids under the Gaussian pyramid of the mask,
//! which hands each frequency band its own feather width.

use crate::error::{Error, Result};
use crate::img::{Image, SoftMask};

mod kernel {
    /// Binomial taps; the downsample blur divides by 16, the post-zero-insert
    /// upsample blur by 8 per axis (compensating the inserted zeros).
    pub const TAPS: [f64; 5] = [1.0, 4.0, 6.0, 4.0, 1.0];
    pub const DOWN: f64 = 16.0;
    pub const UP: f64 = 8.0;

    pub fn down() -> Vec<f64> {
        TAPS.iter().map(|t| t / DOWN).collect()
    }

    pub fn up() -> Vec<f64> {
        TAPS.iter().map(|t| t / UP).collect()
    }
}

/// Low-pass pyramid; `levels[0]` is the source, each further level is
/// blurred and decimated to ceil-half dimensions.
#[derive(Debug, Clone)]
pub struct GaussianPyramid {
    levels: Vec<Image>,
}

impl GaussianPyramid {
    pub fn levels(&self) -> &[Image] {
        &self.levels
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }
}

/// Band-pass pyramid: `bands[k]` holds the detail lost between Gaussian
/// levels k and k+1 (signed values), `residual` the coarsest low-pass.
#[derive(Debug, Clone)]
pub struct LaplacianPyramid {
    bands: Vec<Image>,
    residual: Image,
}

impl LaplacianPyramid {
    /// Assemble from raw parts, validating the ceil-half dimension chain.
    pub fn from_parts(bands: Vec<Image>, residual: Image) -> Result<Self> {
        let mut child = &residual;
        for (k, band) in bands.iter().enumerate().rev() {
            if band.channels() != residual.channels() {
                return Err(Error::dims(
                    "LaplacianPyramid::from_parts",
                    format!("{} channels", residual.channels()),
                    format!("band {k}: {} channels", band.channels()),
                ));
            }
            if child.width() != half_up(band.width()) || child.height() != half_up(band.height()) {
                return Err(Error::dims(
                    "LaplacianPyramid::from_parts",
                    format!("{}x{} below band {k}", half_up(band.width()), half_up(band.height())),
                    format!("{}x{}", child.width(), child.height()),
                ));
            }
            child = band;
        }
        Ok(LaplacianPyramid { bands, residual })
    }

    pub fn bands(&self) -> &[Image] {
        &self.bands
    }

    pub fn residual(&self) -> &Image {
        &self.residual
    }

    pub fn num_levels(&self) -> usize {
        self.bands.len() + 1
    }
}

#[inline]
fn half_up(n: usize) -> usize {
    n.div_ceil(2)
}

/// Largest level count that keeps the coarsest level at least 2 px in
/// each dimension.
pub fn max_levels(width: usize, height: usize) -> usize {
    let mut d = width.min(height);
    let mut levels = 1;
    while half_up(d) >= 2 {
        d = half_up(d);
        levels += 1;
    }
    levels
}

/// Level count used when the caller does not pick one:
/// `floor(log2(min(W,H))) - 2`, clamped to at least 1.
pub fn default_levels(width: usize, height: usize) -> usize {
    let min_dim = width.min(height).max(1);
    (min_dim.ilog2() as usize).saturating_sub(2).max(1)
}

fn check_levels(img: &Image, num_levels: usize) -> Result<()> {
    if num_levels < 1 {
        return Err(Error::InvalidArgument("pyramid needs at least 1 level".into()));
    }
    let cap = max_levels(img.width(), img.height());
    if num_levels > cap {
        return Err(Error::InvalidArgument(format!(
            "{num_levels} levels requested but a {}x{} image supports at most {cap} \
             (coarsest level must keep both dimensions >= 2)",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// Blur with the binomial kernel and keep every second sample per axis.
pub(crate) fn downsample(img: &Image) -> Image {
    let k = kernel::down();
    let blurred = crate::img::convolve_axis(
        &crate::img::convolve_axis(img, &k, true),
        &k,
        false,
    );
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let (ow, oh) = (half_up(w), half_up(h));
    let mut data = Vec::with_capacity(ow * oh * ch);
    for y in (0..h).step_by(2) {
        for x in (0..w).step_by(2) {
            for c in 0..ch {
                data.push(blurred.get(x, y, c));
            }
        }
    }
    Image::from_data(ow, oh, ch, data).expect("decimation preserves layout")
}

/// Zero-insert to the exact target dimensions, then blur with the
/// doubled-gain kernel. Target must be the ceil-double parent of `img`
/// with both dimensions at least 2; constants then stay constant.
pub(crate) fn upsample(img: &Image, target_w: usize, target_h: usize) -> Image {
    debug_assert!(target_w >= 2 && target_h >= 2);
    debug_assert_eq!(half_up(target_w), img.width());
    debug_assert_eq!(half_up(target_h), img.height());
    let ch = img.channels();
    let mut sparse = Image::new(target_w, target_h, ch).expect("positive dims");
    for y in 0..img.height() {
        for x in 0..img.width() {
            for c in 0..ch {
                sparse.set(2 * x, 2 * y, c, img.get(x, y, c));
            }
        }
    }
    let k = kernel::up();
    crate::img::convolve_axis(
        &crate::img::convolve_axis(&sparse, &k, true),
        &k,
        false,
    )
}

pub fn build_gaussian(img: &Image, num_levels: usize) -> Result<GaussianPyramid> {
    check_levels(img, num_levels)?;
    let mut levels = Vec::with_capacity(num_levels);
    levels.push(img.clone());
    for _ in 1..num_levels {
        let next = downsample(levels.last().expect("non-empty"));
        levels.push(next);
    }
    Ok(GaussianPyramid { levels })
}

pub fn build_laplacian(img: &Image, num_levels: usize) -> Result<LaplacianPyramid> {
    let gauss = build_gaussian(img, num_levels)?;
    let mut bands = Vec::with_capacity(num_levels - 1);
    for k in 0..num_levels - 1 {
        let fine = &gauss.levels[k];
        let coarse_up = upsample(&gauss.levels[k + 1], fine.width(), fine.height());
        let data = fine
            .data()
            .iter()
            .zip(coarse_up.data())
            .map(|(f, c)| f - c)
            .collect();
        bands.push(Image::from_data(fine.width(), fine.height(), fine.channels(), data)?);
    }
    let residual = gauss.levels.last().expect("at least one level").clone();
    Ok(LaplacianPyramid { bands, residual })
}

/// Invert [`build_laplacian`]: upsample-and-add from coarse to fine, then
/// clamp into `[0,1]`. The only clamping step in the pyramid pipeline —
/// bands must keep their signed values for reconstruction to be exact.
pub fn collapse(pyr: &LaplacianPyramid) -> Result<Image> {
    // Re-validate so hand-assembled pyramids fail loudly.
    let valid = LaplacianPyramid::from_parts(pyr.bands.clone(), pyr.residual.clone())?;
    let mut acc = valid.residual;
    for band in valid.bands.iter().rev() {
        let up = upsample(&acc, band.width(), band.height());
        let data = up.data().iter().zip(band.data()).map(|(u, b)| u + b).collect();
        acc = Image::from_data(band.width(), band.height(), band.channels(), data)?;
    }
    acc.clamp01();
    Ok(acc)
}

/// Multi-band blend: mix the Laplacian pyramids of `fg` and `bg` level by
/// level under the Gaussian pyramid of `mask`, then collapse.
pub fn pyramid_blend(fg: &Image, bg: &Image, mask: &SoftMask, num_levels: usize) -> Result<Image> {
    if !fg.same_dims(bg) {
        return Err(Error::dims(
            "pyramid_blend",
            format!("{}x{}x{}", fg.width(), fg.height(), fg.channels()),
            format!("{}x{}x{}", bg.width(), bg.height(), bg.channels()),
        ));
    }
    if !mask.same_dims_as_image(fg) {
        return Err(Error::dims(
            "pyramid_blend",
            format!("{}x{} mask", fg.width(), fg.height()),
            format!("{}x{}", mask.width(), mask.height()),
        ));
    }
    let fg_pyr = build_laplacian(fg, num_levels)?;
    let bg_pyr = build_laplacian(bg, num_levels)?;
    let mask_pyr = build_gaussian(&mask.to_image(), num_levels)?;

    let mix = |a: &Image, b: &Image, m: &Image| -> Image {
        let ch = a.channels();
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .enumerate()
            .map(|(i, (av, bv))| {
                let alpha = m.data()[i / ch];
                alpha * av + (1.0 - alpha) * bv
            })
            .collect();
        Image::from_data(a.width(), a.height(), ch, data).expect("same dims")
    };

    let bands = fg_pyr
        .bands
        .iter()
        .zip(&bg_pyr.bands)
        .zip(&mask_pyr.levels)
        .map(|((a, b), m)| mix(a, b, m))
        .collect();
    let residual = mix(
        &fg_pyr.residual,
        &bg_pyr.residual,
        mask_pyr.levels.last().expect("non-empty"),
    );
    collapse(&LaplacianPyramid { bands, residual })
}

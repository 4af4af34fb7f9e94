//! Classical compositing baselines and mask plumbing.
//!
//! Copy-paste compositing with optional feathering, pseudo-trimap
//! generation from a soft mask, and the two-stage mask refinement loop
//! that upsamples through fixed working resolutions.

use crate::error::{Error, Result};
use crate::img::{
    boundary_distance, gaussian_blur_mask, resize_bilinear, resize_mask_bilinear, Image, SoftMask,
    TriLabel, Trimap,
};

/// Knobs for the classical pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeConfig {
    /// Gaussian sigma used to soften hard masks before compositing.
    pub feather_sigma: f32,
    /// Total width in pixels of the unknown band straddling the mask
    /// boundary (half on each side).
    pub trimap_band: usize,
    /// Threshold separating foreground from background; ties go to
    /// foreground.
    pub binarize_threshold: f32,
    /// Working resolutions for mask refinement, finest last.
    pub refine_scales: Vec<usize>,
}

impl Default for CompositeConfig {
    fn default() -> Self {
        CompositeConfig {
            feather_sigma: 2.0,
            trimap_band: 16,
            binarize_threshold: 0.5,
            refine_scales: vec![320, 640],
        }
    }
}

impl CompositeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.feather_sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "feather_sigma must be positive, got {}",
                self.feather_sigma
            )));
        }
        if self.trimap_band < 2 || self.trimap_band % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "trimap_band must be an even width of at least 2, got {}",
                self.trimap_band
            )));
        }
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "binarize_threshold must lie strictly inside (0,1), got {}",
                self.binarize_threshold
            )));
        }
        if self.refine_scales.is_empty() {
            return Err(Error::InvalidArgument("refine_scales must not be empty".into()));
        }
        if self.refine_scales.windows(2).any(|w| w[0] >= w[1]) || self.refine_scales[0] == 0 {
            return Err(Error::InvalidArgument(format!(
                "refine_scales must be positive and strictly increasing, got {:?}",
                self.refine_scales
            )));
        }
        Ok(())
    }
}

/// A mask-refinement step: same resolution in and out, output in `[0,1]`.
/// Implementations must be shareable read-only across worker threads.
pub trait MaskRefiner: Sync {
    fn refine(&self, img: &Image, mask: &SoftMask) -> Result<SoftMask>;
}

/// Pass-through refiner, useful as a pipeline baseline and in tests.
pub struct IdentityRefiner;

impl MaskRefiner for IdentityRefiner {
    fn refine(&self, _img: &Image, mask: &SoftMask) -> Result<SoftMask> {
        Ok(mask.clone())
    }
}

fn check_pair(context: &'static str, fg: &Image, bg: &Image, mask: &SoftMask) -> Result<()> {
    if !fg.same_dims(bg) {
        return Err(Error::dims(
            context,
            format!("{}x{}x{}", fg.width(), fg.height(), fg.channels()),
            format!("{}x{}x{}", bg.width(), bg.height(), bg.channels()),
        ));
    }
    if !mask.same_dims_as_image(fg) {
        return Err(Error::dims(
            context,
            format!("{}x{} mask", fg.width(), fg.height()),
            format!("{}x{}", mask.width(), mask.height()),
        ));
    }
    Ok(())
}

/// Linear blend `alpha*fg + (1-alpha)*bg`, per pixel and channel.
pub fn alpha_composite(fg: &Image, bg: &Image, alpha: &SoftMask) -> Result<Image> {
    check_pair("alpha_composite", fg, bg, alpha)?;
    let ch = fg.channels();
    let data = fg
        .data()
        .iter()
        .zip(bg.data())
        .enumerate()
        .map(|(i, (f, b))| {
            let a = alpha.data()[i / ch];
            a * f + (1.0 - a) * b
        })
        .collect();
    Image::from_data(fg.width(), fg.height(), ch, data)
}

/// Compositing with a refined segmentation mask standing in for the alpha
/// matte; identical math to [`alpha_composite`].
pub fn copy_paste(fg: &Image, bg: &Image, refined_mask: &SoftMask) -> Result<Image> {
    alpha_composite(fg, bg, refined_mask)
}

/// Soften a mask with a Gaussian; output stays in `[0,1]`.
pub fn feather_mask(mask: &SoftMask, sigma: f32) -> Result<SoftMask> {
    let mut out = gaussian_blur_mask(mask, sigma)?;
    // Convexity keeps values inside the input range; trim the last-ulp
    // excursions so downstream code can rely on the interval.
    for v in out.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Hard threshold: 1 where `mask >= threshold`, else 0 (ties count as
/// foreground).
pub fn binarize(mask: &SoftMask, threshold: f32) -> SoftMask {
    let data = mask
        .data()
        .iter()
        .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
        .collect();
    SoftMask::from_data(mask.width(), mask.height(), data).expect("same dims")
}

/// `1 - mask`.
pub fn invert_mask(mask: &SoftMask) -> SoftMask {
    let data = mask.data().iter().map(|&v| 1.0 - v).collect();
    SoftMask::from_data(mask.width(), mask.height(), data).expect("same dims")
}

/// Label a band of total width `band` straddling the binarization
/// boundary as unknown; everything else keeps its thresholded label.
/// A uniform mask has no boundary: the trimap then has no unknown pixels
/// and a warning is printed (batch runs should not abort over it).
pub fn make_trimap(mask: &SoftMask, band: usize, threshold: f32) -> Result<Trimap> {
    if band < 2 || band % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "trimap band must be an even width of at least 2, got {band}"
        )));
    }
    let dist = boundary_distance(mask, threshold);
    if dist.is_unbounded() {
        eprintln!(
            "warning: make_trimap: mask is uniform (no boundary); trimap has no unknown region"
        );
    }
    let half = (band / 2) as f64;
    let half_sq = half * half;
    let labels = mask
        .data()
        .iter()
        .zip(dist.sq_data())
        .map(|(&v, &d_sq)| {
            // Exact integer squared distances: `d <= band/2` without
            // rounding concerns.
            if d_sq <= half_sq {
                TriLabel::Unknown
            } else if v >= threshold {
                TriLabel::Foreground
            } else {
                TriLabel::Background
            }
        })
        .collect();
    Trimap::from_labels(mask.width(), mask.height(), labels)
}

/// Run the refiner at each working resolution in turn (square resize),
/// carrying the mask forward, then resize the result back to the source
/// dimensions.
pub fn refine_mask_multiscale(
    img: &Image,
    raw: &SoftMask,
    refiner: &dyn MaskRefiner,
    scales: &[usize],
) -> Result<SoftMask> {
    if scales.is_empty() {
        return Err(Error::InvalidArgument("refine scales must not be empty".into()));
    }
    if scales.windows(2).any(|w| w[0] >= w[1]) || scales[0] == 0 {
        return Err(Error::InvalidArgument(format!(
            "refine scales must be positive and strictly increasing, got {scales:?}"
        )));
    }
    if !raw.same_dims_as_image(img) {
        return Err(Error::dims(
            "refine_mask_multiscale",
            format!("{}x{} mask", img.width(), img.height()),
            format!("{}x{}", raw.width(), raw.height()),
        ));
    }
    let mut mask = raw.clone();
    for &scale in scales {
        let img_s = resize_bilinear(img, scale, scale)?;
        let mask_s = resize_mask_bilinear(&mask, scale, scale)?;
        mask = refiner.refine(&img_s, &mask_s).map_err(|e| Error::RefineFailed {
            scale,
            source: Box::new(e),
        })?;
        if mask.width() != scale || mask.height() != scale {
            return Err(Error::RefineFailed {
                scale,
                source: Box::new(Error::dims(
                    "refiner output",
                    format!("{scale}x{scale}"),
                    format!("{}x{}", mask.width(), mask.height()),
                )),
            });
        }
    }
    resize_mask_bilinear(&mask, img.width(), img.height())
}

//! Training-data synthesis: easy triplets from matting-style assets over
//! pure-color and textured backgrounds, harder triplets bootstrapped from a
//! trained compositing model, and an on-disk dataset layout
//! (`<root>/<id>/{fg,bg,target,mask[,trimap]}.png` + `manifest.csv`).

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::composite::{alpha_composite, invert_mask, make_trimap};
use crate::error::{Error, Result};
use crate::fusion::FusionNet;
use crate::img::{
    load_image, load_mask, quantize_image, quantize_mask, resize_bilinear, resize_mask_bilinear,
    save_image, save_mask, Image, SoftMask, Trimap,
};

/// Matting-style source: a color-decontaminated RGB foreground with its
/// ground-truth alpha.
#[derive(Debug, Clone)]
pub struct MattingAsset {
    pub foreground: Image,
    pub alpha: SoftMask,
}

impl MattingAsset {
    pub fn new(foreground: Image, alpha: SoftMask) -> Result<MattingAsset> {
        if foreground.channels() != 3 {
            return Err(Error::InvalidArgument(format!(
                "asset foreground must have 3 channels, got {}",
                foreground.channels()
            )));
        }
        if !alpha.same_dims_as_image(&foreground) {
            return Err(Error::dims(
                "MattingAsset::new",
                format!("{}x{}", foreground.width(), foreground.height()),
                format!("{}x{}", alpha.width(), alpha.height()),
            ));
        }
        Ok(MattingAsset { foreground, alpha })
    }

    pub fn width(&self) -> usize {
        self.foreground.width()
    }

    pub fn height(&self) -> usize {
        self.foreground.height()
    }
}

/// One training sample: foreground, background, reference composite, and
/// the mask the composite was built with.
#[derive(Debug, Clone)]
pub struct Triplet {
    pub fg: Image,
    pub bg: Image,
    pub target: Image,
    pub fg_mask: SoftMask,
}

impl Triplet {
    /// All four members must agree on dimensions and the images on RGB.
    pub fn validate(&self) -> Result<()> {
        if self.fg.channels() != 3 || self.bg.channels() != 3 || self.target.channels() != 3 {
            return Err(Error::Dataset("triplet images must have 3 channels".into()));
        }
        if !self.fg.same_dims(&self.bg)
            || !self.fg.same_dims(&self.target)
            || !self.fg_mask.same_dims_as_image(&self.fg)
        {
            return Err(Error::Dataset("triplet members have mismatched dimensions".into()));
        }
        Ok(())
    }
}

/// Anything that can place a masked foreground over a background.
pub trait Compositor {
    fn compose(
        &self,
        fg: &Image,
        fg_mask: &SoftMask,
        bg: &Image,
        bg_mask: &SoftMask,
    ) -> Result<Image>;
}

impl Compositor for FusionNet {
    fn compose(
        &self,
        fg: &Image,
        fg_mask: &SoftMask,
        bg: &Image,
        bg_mask: &SoftMask,
    ) -> Result<Image> {
        FusionNet::compose(self, fg, fg_mask, bg, bg_mask)
    }
}

/// Closed-form blend `α·FG + (1−α)·BG`; the background mask is implied by
/// the foreground one and ignored.
#[derive(Debug, Clone, Copy)]
pub struct ExactCompositor;

impl Compositor for ExactCompositor {
    fn compose(
        &self,
        fg: &Image,
        fg_mask: &SoftMask,
        bg: &Image,
        _bg_mask: &SoftMask,
    ) -> Result<Image> {
        alpha_composite(fg, bg, fg_mask)
    }
}

/// Constant-color RGB canvas.
fn color_canvas(width: usize, height: usize, color: [f32; 3]) -> Image {
    let data = color.iter().copied().cycle().take(width * height * 3).collect();
    Image::from_data(width, height, 3, data).expect("canvas dims are positive")
}

/// Easy sample: the asset blended over a pure-color canvas becomes the
/// foreground, the same blend over `bg` becomes the target.
pub fn make_easy_triplet(asset: &MattingAsset, bg: &Image, color: [f32; 3]) -> Result<Triplet> {
    let canvas = color_canvas(asset.width(), asset.height(), color);
    let fg = alpha_composite(&asset.foreground, &canvas, &asset.alpha)?;
    let target = alpha_composite(&asset.foreground, bg, &asset.alpha)?;
    Ok(Triplet { fg, bg: bg.clone(), target, fg_mask: asset.alpha.clone() })
}

/// Hard sample: run the model twice with the same foreground and mask but
/// different backgrounds; treat the first output as the new foreground and
/// the second as its reference composite over `bg2`.
pub fn make_hard_triplet<C: Compositor + ?Sized>(
    model: &C,
    easy_fg: &Image,
    fg_mask: &SoftMask,
    bg1: &Image,
    bg2: &Image,
) -> Result<Triplet> {
    if !easy_fg.same_dims(bg1) || !easy_fg.same_dims(bg2) || !fg_mask.same_dims_as_image(easy_fg)
    {
        return Err(Error::dims(
            "make_hard_triplet",
            format!("{}x{} everywhere", easy_fg.width(), easy_fg.height()),
            "mismatched member dimensions".to_string(),
        ));
    }
    let bg_mask = invert_mask(fg_mask);
    let fg = model.compose(easy_fg, fg_mask, bg1, &bg_mask)?;
    let target = model.compose(easy_fg, fg_mask, bg2, &bg_mask)?;
    Ok(Triplet { fg, bg: bg2.clone(), target, fg_mask: fg_mask.clone() })
}

/// Smooth procedural texture: per channel, a low mid-gray base plus three
/// seeded cosine waves, clamped to `[0, 1]`.
pub fn synth_texture(rng: &mut ChaCha8Rng, width: usize, height: usize) -> Image {
    let mut data = vec![0.0f32; width * height * 3];
    for c in 0..3 {
        let base: f64 = rng.gen_range(0.35..0.65);
        let waves: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.gen_range(0.05..0.16),
                    rng.gen_range(0.5..3.5),
                    rng.gen_range(0.5..3.5),
                    rng.gen_range(0.0..TAU),
                )
            })
            .collect();
        for y in 0..height {
            for x in 0..width {
                let mut v = base;
                for &(amp, fx, fy, phase) in &waves {
                    let arg = TAU * (fx * x as f64 / width as f64 + fy * y as f64 / height as f64)
                        + phase;
                    v += amp * arg.cos();
                }
                data[(y * width + x) * 3 + c] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Image::from_data(width, height, 3, data).expect("texture dims are positive")
}

/// Soft elliptical blob mask: exactly 1 well inside, exactly 0 well
/// outside, with a smoothstep edge in between. One or two blobs, unioned.
pub fn synth_alpha(rng: &mut ChaCha8Rng, width: usize, height: usize) -> SoftMask {
    let min_dim = width.min(height) as f64;
    let blobs: usize = rng.gen_range(1..=2);
    let params: Vec<(f64, f64, f64, f64, f64, f64)> = (0..blobs)
        .map(|_| {
            (
                rng.gen_range(0.3..0.7) * width as f64,
                rng.gen_range(0.3..0.7) * height as f64,
                rng.gen_range(0.15..0.3) * min_dim,
                rng.gen_range(0.15..0.3) * min_dim,
                rng.gen_range(0.0..TAU),
                rng.gen_range(0.08..0.25),
            )
        })
        .collect();
    let mut data = vec![0.0f32; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut a = 0.0f64;
            for &(cx, cy, rx, ry, theta, edge) in &params {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let u = (dx * theta.cos() + dy * theta.sin()) / rx;
                let v = (-dx * theta.sin() + dy * theta.cos()) / ry;
                let d = (u * u + v * v).sqrt();
                let s = ((d - (1.0 - edge)) / (2.0 * edge)).clamp(0.0, 1.0);
                a = a.max(1.0 - s * s * (3.0 - 2.0 * s));
            }
            data[y * width + x] = a as f32;
        }
    }
    SoftMask::from_data(width, height, data).expect("mask dims are positive")
}

/// Textured foreground plus blob alpha.
pub fn synth_asset(rng: &mut ChaCha8Rng, width: usize, height: usize) -> MattingAsset {
    let foreground = synth_texture(rng, width, height);
    let alpha = synth_alpha(rng, width, height);
    MattingAsset { foreground, alpha }
}

/// Fully synthetic in-memory training set of easy samples.
pub fn synth_easy_triplets(n: usize, width: usize, height: usize, seed: u64) -> Vec<Triplet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let asset = synth_asset(&mut rng, width, height);
            let bg = synth_texture(&mut rng, width, height);
            let color = pick_color(&mut rng, &[]);
            make_easy_triplet(&asset, &bg, color).expect("synthetic members share dimensions")
        })
        .collect()
}

/// Synthetic segmentation-quality corruption for refiner training:
/// binarize at ½, then lose the edge detail to a factor-`k` down/up
/// resampling round trip. What comes back has blocky, soft boundaries.
pub fn degrade_mask(mask: &SoftMask, factor: usize) -> Result<SoftMask> {
    if factor < 2 {
        return Err(Error::InvalidArgument(format!(
            "degrade factor must be at least 2, got {factor}"
        )));
    }
    let hard = crate::composite::binarize(mask, 0.5);
    let w = (mask.width() / factor).max(1);
    let h = (mask.height() / factor).max(1);
    let small = resize_mask_bilinear(&hard, w, h)?;
    resize_mask_bilinear(&small, mask.width(), mask.height())
}

const PALETTE: [[f32; 3]; 6] = [
    [0.0, 0.0, 0.0],
    [1.0, 1.0, 1.0],
    [0.05, 0.35, 0.7],
    [0.1, 0.6, 0.2],
    [0.8, 0.12, 0.12],
    [0.95, 0.85, 0.3],
];

/// User-supplied colors win; otherwise half palette picks, half uniform RGB.
fn pick_color(rng: &mut ChaCha8Rng, extra: &[[f32; 3]]) -> [f32; 3] {
    if !extra.is_empty() {
        extra[rng.gen_range(0..extra.len())]
    } else if rng.gen_bool(0.5) {
        PALETTE[rng.gen_range(0..PALETTE.len())]
    } else {
        [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]
    }
}

/// Per-sample sub-seed so any one sample can be regenerated on its own.
fn derive_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(0xD1B5_4A32_D192_ED03)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    Easy,
    Hard,
    Syntest,
}

impl SampleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleKind::Easy => "easy",
            SampleKind::Hard => "hard",
            SampleKind::Syntest => "syntest",
        }
    }

    pub fn parse(s: &str) -> Result<SampleKind> {
        match s {
            "easy" => Ok(SampleKind::Easy),
            "hard" => Ok(SampleKind::Hard),
            "syntest" => Ok(SampleKind::Syntest),
            other => Err(Error::Dataset(format!("unknown sample kind {other:?}"))),
        }
    }
}

/// One `manifest.csv` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub kind: SampleKind,
    pub seed: u64,
}

/// What to synthesize and from which source material.
#[derive(Debug, Clone, Copy)]
pub struct DatasetSpec<'a> {
    pub assets: &'a [MattingAsset],
    pub backgrounds: &'a [Image],
    /// Pure-background colors; empty falls back to a built-in palette mixed
    /// with uniform random colors.
    pub colors: &'a [[f32; 3]],
    pub n_easy: usize,
    pub n_hard: usize,
    pub seed: u64,
}

/// Write easy and hard samples under `root` and return the manifest.
///
/// Inputs are snapped to the 8-bit grid *before* compositing, so the files
/// reproduce the compositing relationship as faithfully as PNG storage
/// allows. Backgrounds are resized to each asset's dimensions on the fly.
pub fn synthesize_dataset(
    root: &Path,
    spec: &DatasetSpec,
    model: Option<&dyn Compositor>,
) -> Result<Vec<ManifestRow>> {
    let total = spec.n_easy + spec.n_hard;
    if total > 0 && (spec.assets.is_empty() || spec.backgrounds.is_empty()) {
        return Err(Error::Dataset(
            "need at least one asset and one background to synthesize samples".into(),
        ));
    }
    if spec.n_hard > 0 && model.is_none() {
        return Err(Error::Dataset("hard samples need a trained compositing model".into()));
    }

    let mut rows = Vec::with_capacity(total);
    for index in 0..total {
        let sample_seed = derive_seed(spec.seed, index);
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        let asset = &spec.assets[rng.gen_range(0..spec.assets.len())];
        let asset = MattingAsset {
            foreground: quantize_image(&asset.foreground),
            alpha: quantize_mask(&asset.alpha),
        };
        let color = pick_color(&mut rng, spec.colors);

        let (kind, triplet) = if index < spec.n_easy {
            let bg = fitted_background(spec, &mut rng, &asset)?;
            (SampleKind::Easy, make_easy_triplet(&asset, &bg, color)?)
        } else {
            let model = model.expect("checked above");
            let easy_fg = {
                let canvas = color_canvas(asset.width(), asset.height(), color);
                alpha_composite(&asset.foreground, &canvas, &asset.alpha)?
            };
            let bg1 = fitted_background(spec, &mut rng, &asset)?;
            let bg2 = fitted_background(spec, &mut rng, &asset)?;
            (SampleKind::Hard, make_hard_triplet(model, &easy_fg, &asset.alpha, &bg1, &bg2)?)
        };

        let id = format!("{index:04}");
        write_triplet(&root.join(&id), &triplet, None)?;
        rows.push(ManifestRow {
            id,
            width: triplet.fg.width(),
            height: triplet.fg.height(),
            kind,
            seed: sample_seed,
        });
    }
    write_manifest(root, &rows)?;
    Ok(rows)
}

/// Evaluation set: true-alpha composites with stored trimaps.
pub fn make_syntest(
    root: &Path,
    assets: &[MattingAsset],
    backgrounds: &[Image],
    n: usize,
    band: usize,
    seed: u64,
) -> Result<Vec<ManifestRow>> {
    if n > 0 && (assets.is_empty() || backgrounds.is_empty()) {
        return Err(Error::Dataset(
            "need at least one asset and one background to synthesize samples".into(),
        ));
    }
    let mut rows = Vec::with_capacity(n);
    for index in 0..n {
        let sample_seed = derive_seed(seed, index);
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        let asset = &assets[rng.gen_range(0..assets.len())];
        let asset = MattingAsset {
            foreground: quantize_image(&asset.foreground),
            alpha: quantize_mask(&asset.alpha),
        };
        let spec = DatasetSpec {
            assets: &[],
            backgrounds,
            colors: &[],
            n_easy: 0,
            n_hard: 0,
            seed,
        };
        let bg = fitted_background(&spec, &mut rng, &asset)?;
        let target = alpha_composite(&asset.foreground, &bg, &asset.alpha)?;
        let trimap = make_trimap(&asset.alpha, band, 0.5)?;
        let triplet =
            Triplet { fg: asset.foreground, bg, target, fg_mask: asset.alpha };

        let id = format!("{index:04}");
        write_triplet(&root.join(&id), &triplet, Some(&trimap))?;
        rows.push(ManifestRow {
            id,
            width: triplet.fg.width(),
            height: triplet.fg.height(),
            kind: SampleKind::Syntest,
            seed: sample_seed,
        });
    }
    write_manifest(root, &rows)?;
    Ok(rows)
}

/// Pick a background, fit it to the asset's frame, snap it to 8 bits.
fn fitted_background(
    spec: &DatasetSpec,
    rng: &mut ChaCha8Rng,
    asset: &MattingAsset,
) -> Result<Image> {
    let bg = &spec.backgrounds[rng.gen_range(0..spec.backgrounds.len())];
    let bg = if bg.width() == asset.width() && bg.height() == asset.height() {
        bg.clone()
    } else {
        resize_bilinear(bg, asset.width(), asset.height())?
    };
    Ok(quantize_image(&bg))
}

fn write_triplet(dir: &Path, triplet: &Triplet, trimap: Option<&Trimap>) -> Result<()> {
    save_image(&triplet.fg, &dir.join("fg.png"))?;
    save_image(&triplet.bg, &dir.join("bg.png"))?;
    save_image(&triplet.target, &dir.join("target.png"))?;
    save_mask(&triplet.fg_mask, &dir.join("mask.png"))?;
    if let Some(t) = trimap {
        save_mask(&t.to_mask(), &dir.join("trimap.png"))?;
    }
    Ok(())
}

/// Load one sample directory written by [`synthesize_dataset`] or
/// [`make_syntest`].
pub fn load_triplet(dir: &Path) -> Result<Triplet> {
    let triplet = Triplet {
        fg: load_image(&dir.join("fg.png"))?,
        bg: load_image(&dir.join("bg.png"))?,
        target: load_image(&dir.join("target.png"))?,
        fg_mask: load_mask(&dir.join("mask.png"))?,
    };
    triplet.validate()?;
    Ok(triplet)
}

/// Load the stored trimap of a sample directory, if present.
pub fn load_trimap(dir: &Path) -> Result<Option<Trimap>> {
    let path = dir.join("trimap.png");
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(Trimap::from_mask(&load_mask(&path)?)))
}

pub fn write_manifest(root: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut out = String::from("id,width,height,kind,seed\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.id,
            r.width,
            r.height,
            r.kind.as_str(),
            r.seed
        ));
    }
    let path = root.join("manifest.csv");
    if !root.exists() {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    }
    std::fs::write(&path, out).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestRow>> {
    let path = root.join("manifest.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile { path: path.clone() }
        } else {
            Error::io(&path, e)
        }
    })?;
    let mut lines = text.lines();
    match lines.next() {
        Some("id,width,height,kind,seed") => {}
        other => {
            return Err(Error::Dataset(format!(
                "manifest header mismatch: got {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Dataset(format!(
                "manifest line {}: expected 5 fields, got {}",
                ln + 2,
                fields.len()
            )));
        }
        let bad = |what: &str| Error::Dataset(format!("manifest line {}: bad {what}", ln + 2));
        rows.push(ManifestRow {
            id: fields[0].to_string(),
            width: fields[1].parse().map_err(|_| bad("width"))?,
            height: fields[2].parse().map_err(|_| bad("height"))?,
            kind: SampleKind::parse(fields[3])?,
            seed: fields[4].parse().map_err(|_| bad("seed"))?,
        });
    }
    Ok(rows)
}

/// Load every sample listed in a dataset's manifest, in manifest order.
pub fn load_dataset(root: &Path) -> Result<Vec<Triplet>> {
    let rows = read_manifest(root)?;
    rows.iter().map(|r| load_triplet(&sample_dir(root, &r.id))).collect()
}

pub fn sample_dir(root: &Path, id: &str) -> PathBuf {
    root.join(id)
}

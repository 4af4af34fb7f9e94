//! `compositor` — command-line frontend for the compositing library.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (missing/corrupt
//! files, dimension mismatches), 3 numeric failure (non-finite loss,
//! failed gradient check).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use compositor::augment::{
    degrade_mask, load_dataset, make_syntest, synth_asset, synth_easy_triplets, synth_texture,
    synthesize_dataset, Compositor, DatasetSpec, MattingAsset, Triplet,
};
use compositor::composite::{
    alpha_composite, copy_paste, feather_mask, make_trimap, refine_mask_multiscale,
};
use compositor::error::{Error, Result};
use compositor::eval::{
    emit_report, load_syntest, render_table, run_benchmark, BenchMethod, Region,
};
use compositor::fusion::{
    gradient_suite, net_suite, op_suite, train_compositor, train_refiner, write_loss_log,
    write_refine_log, FeatureExtractor, FusionNet, NeuralRefiner, RefineNet, RefinePair,
    TrainConfig,
};
use compositor::img::{
    load_image, load_mask, resize_bilinear, resize_mask_bilinear, save_image, save_mask, Image,
    SoftMask,
};
use compositor::pyramid::{default_levels, pyramid_blend};

#[derive(Parser)]
#[command(name = "compositor", version, about = "Automatic image compositing")]
struct Cli {
    /// Seed for every random choice; omitted picks one and logs it
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (1 = fully deterministic; default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Plain-text `key=value` defaults; explicit flags win
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Composite a foreground onto a background with a chosen method
    Composite(CompositeArgs),
    /// Feather (blur) a mask
    Feather(FeatherArgs),
    /// Expand a soft mask into a fg/unknown/bg trimap
    Trimap(TrimapArgs),
    /// Refine a raw mask with a trained refinement network
    Refine(RefineArgs),
    /// Laplacian-pyramid blend of two images under a mask
    Blend(BlendArgs),
    /// Full pipeline: segment (if no mask), refine, fuse, save
    Pipeline(PipelineArgs),
    /// Train the fusion compositor
    Train(TrainArgs),
    /// Train the mask refinement network
    TrainRefiner(TrainRefinerArgs),
    /// Synthesize an easy/hard training set on disk
    Augment(AugmentArgs),
    /// Synthesize a held-out test set with trimaps
    Syntest(SyntestArgs),
    /// Score compositing methods on a test set (unknown-region PSNR)
    Eval(EvalArgs),
    /// Compare analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind::{DisplayHelp, DisplayVersion};
            let code = match err.kind() {
                DisplayHelp | DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) => 1,
        Error::NonFiniteLoss { .. } => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    let cfg = FileConfig::load(cli.config.as_deref())?;
    let seed = cli.seed;
    match cli.cmd {
        Cmd::Composite(a) => cmd_composite(a, &cfg),
        Cmd::Feather(a) => cmd_feather(a, &cfg),
        Cmd::Trimap(a) => cmd_trimap(a, &cfg),
        Cmd::Refine(a) => cmd_refine(a, &cfg),
        Cmd::Blend(a) => cmd_blend(a, &cfg),
        Cmd::Pipeline(a) => cmd_pipeline(a, &cfg),
        Cmd::Train(a) => cmd_train(a, &cfg, seed),
        Cmd::TrainRefiner(a) => cmd_train_refiner(a, &cfg, seed),
        Cmd::Augment(a) => cmd_augment(a, &cfg, seed),
        Cmd::Syntest(a) => cmd_syntest(a, &cfg, seed),
        Cmd::Eval(a) => cmd_eval(a, &cfg),
        Cmd::Gradcheck(a) => cmd_gradcheck(a, &cfg),
    }
}

// ---------------------------------------------------------------------------
// config file + flag layering

/// `key=value` pairs from `--config`. Keys mirror the long flag names.
struct FileConfig(BTreeMap<String, String>);

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<FileConfig> {
        let mut map = BTreeMap::new();
        let Some(path) = path else {
            return Ok(FileConfig(map));
        };
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidArgument(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                )));
            };
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(FileConfig(map))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                Error::InvalidArgument(format!("config key {key}: cannot parse {raw:?}"))
            }),
        }
    }
}

/// Explicit flag > config file > built-in default.
fn pick<T: FromStr>(flag: Option<T>, cfg: &FileConfig, key: &str, default: T) -> Result<T> {
    match flag {
        Some(v) => Ok(v),
        None => Ok(cfg.get(key)?.unwrap_or(default)),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

/// The seed every stochastic command runs under. A missing `--seed` picks
/// one at random and logs it so the run can be replayed.
fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.unwrap_or_else(|| {
        let seed: u64 = rand::thread_rng().gen();
        eprintln!("seed: {seed} (pass --seed {seed} to reproduce)");
        seed
    })
}

// ---------------------------------------------------------------------------
// shared helpers

/// Project any loaded image to 3 channels: drop alpha, replicate gray.
fn rgb(img: Image) -> Result<Image> {
    let (w, h) = (img.width(), img.height());
    match img.channels() {
        3 => Ok(img),
        4 | 1 => {
            let mut data = Vec::with_capacity(w * h * 3);
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        data.push(img.get(x, y, c.min(img.channels() - 1)));
                    }
                }
            }
            Image::from_data(w, h, 3, data)
        }
        n => Err(Error::InvalidArgument(format!("cannot interpret a {n}-channel image as RGB"))),
    }
}

fn load_rgb(path: &Path) -> Result<Image> {
    rgb(load_image(path)?)
}

/// Resize `img` to `(w, h)` unless it already matches.
fn fit_image(img: Image, w: usize, h: usize) -> Result<Image> {
    if img.width() == w && img.height() == h {
        Ok(img)
    } else {
        resize_bilinear(&img, w, h)
    }
}

fn fit_mask(mask: SoftMask, w: usize, h: usize) -> Result<SoftMask> {
    if mask.width() == w && mask.height() == h {
        Ok(mask)
    } else {
        resize_mask_bilinear(&mask, w, h)
    }
}

fn parse_scales(raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("bad scale {s:?} in {raw:?}")))
        })
        .collect()
}

/// Fallback segmenter for `pipeline` runs without a mask: distance from
/// the border-median color, eased through a smoothstep. Crude, but it
/// gives the refiner a salient-object guess to start from.
fn fallback_segment(img: &Image) -> SoftMask {
    let (w, h) = (img.width(), img.height());
    let mut border: [Vec<f32>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let push = |x: usize, y: usize, border: &mut [Vec<f32>; 3]| {
        for (c, channel) in border.iter_mut().enumerate() {
            channel.push(img.get(x, y, c));
        }
    };
    for x in 0..w {
        push(x, 0, &mut border);
        push(x, h - 1, &mut border);
    }
    for y in 1..h.saturating_sub(1) {
        push(0, y, &mut border);
        push(w - 1, y, &mut border);
    }
    let mut median = [0.0f32; 3];
    for (c, channel) in border.iter_mut().enumerate() {
        channel.sort_by(f32::total_cmp);
        median[c] = channel[channel.len() / 2];
    }
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut d2 = 0.0f32;
            for (c, m) in median.iter().enumerate() {
                let diff = img.get(x, y, c) - m;
                d2 += diff * diff;
            }
            let d = (d2 / 3.0).sqrt();
            // smoothstep between 0.1 and 0.3: near-border colors -> 0,
            // clearly different colors -> 1, soft ramp between.
            let t = ((d - 0.1) / 0.2).clamp(0.0, 1.0);
            data.push(t * t * (3.0 - 2.0 * t));
        }
    }
    SoftMask::from_data(w, h, data).expect("mask sized off the image")
}

/// Foreground assets for `augment`/`syntest`: RGBA files from a directory,
/// or procedurally generated ones.
#[derive(Args)]
struct AssetSource {
    /// Directory of RGBA cut-outs (alpha channel = mask)
    #[arg(long, value_name = "DIR")]
    assets: Option<PathBuf>,

    /// Number of procedural assets when --assets is not given
    #[arg(long, default_value_t = 4)]
    synth_assets: usize,

    /// Directory of background images
    #[arg(long, value_name = "DIR")]
    backgrounds: Option<PathBuf>,

    /// Number of procedural backgrounds when --backgrounds is not given
    #[arg(long, default_value_t = 4)]
    synth_backgrounds: usize,

    /// Square side of procedural assets and backgrounds
    #[arg(long, default_value_t = 64)]
    synth_size: usize,
}

impl AssetSource {
    fn load(&self, seed: u64) -> Result<(Vec<MattingAsset>, Vec<Image>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let assets = match &self.assets {
            Some(dir) => load_assets(dir)?,
            None => (0..self.synth_assets)
                .map(|_| synth_asset(&mut rng, self.synth_size, self.synth_size))
                .collect(),
        };
        let backgrounds = match &self.backgrounds {
            Some(dir) => {
                list_images(dir)?.iter().map(|p| load_rgb(p)).collect::<Result<Vec<_>>>()?
            }
            None => (0..self.synth_backgrounds)
                .map(|_| synth_texture(&mut rng, self.synth_size, self.synth_size))
                .collect(),
        };
        if assets.is_empty() {
            return Err(Error::InvalidArgument("no assets found".into()));
        }
        if backgrounds.is_empty() {
            return Err(Error::InvalidArgument("no backgrounds found".into()));
        }
        Ok((assets, backgrounds))
    }
}

/// Image files in `dir`, sorted by name for reproducible ordering.
fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        if matches!(ext.as_str(), "png" | "pnm" | "ppm" | "pgm") {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

fn load_assets(dir: &Path) -> Result<Vec<MattingAsset>> {
    let mut assets = Vec::new();
    for path in list_images(dir)? {
        let img = load_image(&path)?;
        if img.channels() != 4 {
            return Err(Error::InvalidArgument(format!(
                "{}: assets need an alpha channel (RGBA), got {} channel(s)",
                path.display(),
                img.channels()
            )));
        }
        let (w, h) = (img.width(), img.height());
        let mut fg = Vec::with_capacity(w * h * 3);
        let mut alpha = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    fg.push(img.get(x, y, c));
                }
                alpha.push(img.get(x, y, 3));
            }
        }
        assets.push(MattingAsset::new(
            Image::from_data(w, h, 3, fg)?,
            SoftMask::from_data(w, h, alpha)?,
        )?);
    }
    Ok(assets)
}

/// In-memory triplets from either an `augment` directory or the built-in
/// synthesizer — the common data half of both training commands.
#[derive(Args)]
struct DataSource {
    /// Training set directory written by `augment`
    #[arg(long, value_name = "DIR", conflicts_with = "synth")]
    data: Option<PathBuf>,

    /// Train on N procedurally generated easy triplets instead
    #[arg(long, value_name = "N")]
    synth: Option<usize>,

    /// Square side of --synth triplets
    #[arg(long, default_value_t = 64)]
    synth_size: usize,
}

impl DataSource {
    fn load(&self, seed: u64) -> Result<Vec<Triplet>> {
        let triplets = match (&self.data, self.synth) {
            (Some(dir), None) => load_dataset(dir)?,
            (None, Some(n)) => synth_easy_triplets(n, self.synth_size, self.synth_size, seed),
            (None, None) => {
                return Err(Error::InvalidArgument("pass --data DIR or --synth N".into()))
            }
            (Some(_), Some(_)) => unreachable!("clap rejects --data with --synth"),
        };
        if triplets.is_empty() {
            return Err(Error::Dataset("training set is empty".into()));
        }
        Ok(triplets)
    }
}

/// Network shape flags shared by `train` and `train-refiner`.
#[derive(Args)]
struct ArchArgs {
    /// Encoder/decoder levels (input sides must divide 2^levels)
    #[arg(long)]
    levels: Option<usize>,

    /// Channels of the first encoder level
    #[arg(long)]
    base: Option<usize>,

    /// Channel growth per dense-block layer
    #[arg(long)]
    growth: Option<usize>,

    /// Layers per dense block
    #[arg(long)]
    db_layers: Option<usize>,
}

impl ArchArgs {
    fn resolve(
        &self,
        cfg: &FileConfig,
        defaults: (usize, usize, usize, usize),
    ) -> Result<(usize, usize, usize, usize)> {
        Ok((
            pick(self.levels, cfg, "levels", defaults.0)?,
            pick(self.base, cfg, "base", defaults.1)?,
            pick(self.growth, cfg, "growth", defaults.2)?,
            pick(self.db_layers, cfg, "db-layers", defaults.3)?,
        ))
    }
}

/// Hyperparameter flags shared by both training commands.
#[derive(Args)]
struct TrainHyper {
    /// ADAM learning rate
    #[arg(long)]
    lr: Option<f64>,

    /// Crops per optimizer step
    #[arg(long)]
    batch_size: Option<usize>,

    /// Square side training crops are resized to
    #[arg(long)]
    crop_size: Option<usize>,

    /// Square side for full-frame evaluation passes
    #[arg(long)]
    test_size: Option<usize>,

    /// Weight of the feature-space loss term
    #[arg(long)]
    lambda_p: Option<f64>,

    /// Optimizer steps (0 = save the initialization untouched)
    #[arg(long)]
    iterations: Option<usize>,

    /// Record a loss row every N iterations
    #[arg(long)]
    log_every: Option<usize>,
}

impl TrainHyper {
    fn resolve(&self, cfg: &FileConfig, seed: u64) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        Ok(TrainConfig {
            lr: pick(self.lr, cfg, "lr", d.lr)?,
            batch_size: pick(self.batch_size, cfg, "batch-size", d.batch_size)?,
            crop_size: pick(self.crop_size, cfg, "crop-size", d.crop_size)?,
            test_size: pick(self.test_size, cfg, "test-size", d.test_size)?,
            lambda_p: pick(self.lambda_p, cfg, "lambda-p", d.lambda_p)?,
            iterations: pick(self.iterations, cfg, "iterations", d.iterations)?,
            seed,
            log_every: pick(self.log_every, cfg, "log-every", d.log_every)?,
        })
    }
}

// ---------------------------------------------------------------------------
// composite / feather / trimap / refine / blend

#[derive(ValueEnum, Clone, Copy, PartialEq)]
enum Method {
    /// Alpha-weighted paste with the mask as-is
    CopyPaste,
    /// Blur the mask, then alpha-composite
    Feather,
    /// Laplacian multi-band blend
    Pyramid,
    /// Trained fusion network (needs --checkpoint)
    Mlf,
}

#[derive(Args)]
struct CompositeArgs {
    #[arg(long)]
    fg: PathBuf,
    #[arg(long)]
    bg: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,

    #[arg(long, value_enum, default_value_t = Method::CopyPaste)]
    method: Method,

    /// Feather radius in pixels
    #[arg(long)]
    sigma: Option<f32>,

    /// Pyramid levels (default: as many as the image supports)
    #[arg(long)]
    levels: Option<usize>,

    /// Fusion-network checkpoint for --method mlf
    #[arg(long)]
    checkpoint: Option<PathBuf>,

    /// Resize bg and mask to the fg dimensions first
    #[arg(long)]
    fit: bool,
}

fn cmd_composite(a: CompositeArgs, cfg: &FileConfig) -> Result<u8> {
    let fg = load_rgb(&a.fg)?;
    let mut bg = load_rgb(&a.bg)?;
    let mut mask = load_mask(&a.mask)?;
    if a.fit {
        bg = fit_image(bg, fg.width(), fg.height())?;
        mask = fit_mask(mask, fg.width(), fg.height())?;
    }
    let out = match a.method {
        Method::CopyPaste => copy_paste(&fg, &bg, &mask)?,
        Method::Feather => {
            let sigma = pick(a.sigma, cfg, "sigma", 2.0)?;
            alpha_composite(&fg, &bg, &feather_mask(&mask, sigma)?)?
        }
        Method::Pyramid => {
            let levels =
                pick(a.levels, cfg, "levels", default_levels(fg.width(), fg.height()))?;
            pyramid_blend(&fg, &bg, &mask, levels)?
        }
        Method::Mlf => {
            let path = a.checkpoint.ok_or_else(|| {
                Error::InvalidArgument("--method mlf needs --checkpoint".into())
            })?;
            FusionNet::from_checkpoint(&path)?.compose_fit(&fg, &mask, &bg)?
        }
    };
    save_image(&out, &a.out)?;
    Ok(0)
}

#[derive(Args)]
struct FeatherArgs {
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Blur radius in pixels
    #[arg(long)]
    sigma: Option<f32>,
}

fn cmd_feather(a: FeatherArgs, cfg: &FileConfig) -> Result<u8> {
    let sigma = pick(a.sigma, cfg, "sigma", 2.0)?;
    let mask = load_mask(&a.mask)?;
    save_mask(&feather_mask(&mask, sigma)?, &a.out)?;
    Ok(0)
}

#[derive(Args)]
struct TrimapArgs {
    #[arg(long)]
    mask: PathBuf,
    /// Output trimap (0 = bg, 128 = unknown, 255 = fg)
    #[arg(long)]
    out: PathBuf,
    /// Unknown-band width in pixels, centered on the mask boundary
    #[arg(long)]
    band: Option<usize>,
    /// Foreground threshold for binarizing the mask
    #[arg(long)]
    threshold: Option<f32>,
}

fn cmd_trimap(a: TrimapArgs, cfg: &FileConfig) -> Result<u8> {
    let band = pick(a.band, cfg, "band", 16)?;
    let threshold = pick(a.threshold, cfg, "threshold", 0.5)?;
    let mask = load_mask(&a.mask)?;
    let trimap = make_trimap(&mask, band, threshold)?;
    save_mask(&trimap.to_mask(), &a.out)?;
    Ok(0)
}

#[derive(Args)]
struct RefineArgs {
    /// Image the mask belongs to
    #[arg(long)]
    img: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Refinement-network checkpoint
    #[arg(long)]
    refiner: PathBuf,
    /// Comma-separated square sides the refiner runs at, coarse to fine
    #[arg(long, default_value = "320,640")]
    scales: String,
}

fn cmd_refine(a: RefineArgs, _cfg: &FileConfig) -> Result<u8> {
    let img = load_rgb(&a.img)?;
    let mask = load_mask(&a.mask)?;
    let net = RefineNet::from_checkpoint(&a.refiner)?;
    let scales = parse_scales(&a.scales)?;
    let refined = refine_mask_multiscale(&img, &mask, &NeuralRefiner { net: &net }, &scales)?;
    save_mask(&refined, &a.out)?;
    Ok(0)
}

#[derive(Args)]
struct BlendArgs {
    #[arg(long)]
    fg: PathBuf,
    #[arg(long)]
    bg: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Pyramid levels (default: as many as the image supports)
    #[arg(long)]
    levels: Option<usize>,
}

fn cmd_blend(a: BlendArgs, cfg: &FileConfig) -> Result<u8> {
    let fg = load_rgb(&a.fg)?;
    let bg = load_rgb(&a.bg)?;
    let mask = load_mask(&a.mask)?;
    let levels = pick(a.levels, cfg, "levels", default_levels(fg.width(), fg.height()))?;
    save_image(&pyramid_blend(&fg, &bg, &mask, levels)?, &a.out)?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// pipeline

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    fg: PathBuf,
    #[arg(long)]
    bg: PathBuf,
    /// Raw foreground mask; omitted runs the built-in color segmenter
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,

    /// Fusion checkpoint, or "oracle" for closed-form alpha compositing
    #[arg(long)]
    net: String,

    /// Refinement checkpoint; omitted uses the raw mask unchanged
    #[arg(long)]
    refiner: Option<PathBuf>,

    /// Comma-separated refiner scales, coarse to fine
    #[arg(long, default_value = "320,640")]
    scales: String,

    /// Square side the fusion pass runs at (0 = native resolution)
    #[arg(long)]
    canvas: Option<usize>,

    /// Also save the refined mask
    #[arg(long)]
    save_mask: Option<PathBuf>,
}

fn cmd_pipeline(a: PipelineArgs, cfg: &FileConfig) -> Result<u8> {
    let fg = load_rgb(&a.fg)?;
    let (w, h) = (fg.width(), fg.height());
    let bg = fit_image(load_rgb(&a.bg)?, w, h)?;
    let raw = match &a.mask {
        Some(path) => fit_mask(load_mask(path)?, w, h)?,
        None => fallback_segment(&fg),
    };

    let refined = match &a.refiner {
        Some(path) => {
            let net = RefineNet::from_checkpoint(path)?;
            let scales = parse_scales(&a.scales)?;
            refine_mask_multiscale(&fg, &raw, &NeuralRefiner { net: &net }, &scales)?
        }
        None => raw,
    };
    if let Some(path) = &a.save_mask {
        save_mask(&refined, path)?;
    }

    let net = match a.net.as_str() {
        "oracle" => None,
        path => Some(FusionNet::from_checkpoint(Path::new(path))?),
    };
    let canvas = pick(a.canvas, cfg, "canvas", 768)?;
    let out = if canvas > 0 && (w, h) != (canvas, canvas) {
        let fg_c = resize_bilinear(&fg, canvas, canvas)?;
        let bg_c = resize_bilinear(&bg, canvas, canvas)?;
        let mask_c = resize_mask_bilinear(&refined, canvas, canvas)?;
        let fused = match &net {
            Some(net) => net.compose_fit(&fg_c, &mask_c, &bg_c)?,
            None => alpha_composite(&fg_c, &bg_c, &mask_c)?,
        };
        resize_bilinear(&fused, w, h)?
    } else {
        match &net {
            Some(net) => net.compose_fit(&fg, &refined, &bg)?,
            None => alpha_composite(&fg, &bg, &refined)?,
        }
    };
    save_image(&out, &a.out)?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// train / train-refiner

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: DataSource,

    /// Checkpoint to write
    #[arg(long)]
    out: PathBuf,

    /// Resume from this checkpoint instead of a fresh initialization
    #[arg(long)]
    init: Option<PathBuf>,

    /// Fuse one concatenated stream instead of two separate ones
    #[arg(long)]
    single_stream: bool,

    #[command(flatten)]
    arch: ArchArgs,

    #[command(flatten)]
    hyper: TrainHyper,

    /// Reuse a saved feature extractor (default: seeded random features)
    #[arg(long)]
    extractor: Option<PathBuf>,

    /// Save the feature extractor next to the checkpoint
    #[arg(long)]
    save_extractor: Option<PathBuf>,

    /// Write the loss log as CSV
    #[arg(long)]
    log: Option<PathBuf>,
}

fn cmd_train(a: TrainArgs, cfg: &FileConfig, seed: Option<u64>) -> Result<u8> {
    let seed = resolve_seed(seed);
    let data = a.source.load(seed)?;
    let hyper = a.hyper.resolve(cfg, seed)?;

    let mut net = match &a.init {
        Some(path) => FusionNet::from_checkpoint(path)?,
        None => {
            let (levels, base, growth, db_layers) = a.arch.resolve(cfg, (4, 16, 8, 2))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if a.single_stream {
                FusionNet::single_stream(levels, base, growth, db_layers, &mut rng)?
            } else {
                FusionNet::two_stream(levels, base, growth, db_layers, &mut rng)?
            }
        }
    };
    let extractor = match &a.extractor {
        Some(path) => FeatureExtractor::from_checkpoint(path)?,
        None => FeatureExtractor::random(seed),
    };

    let rows = train_compositor(&mut net, &extractor, &data, &hyper)?;
    net.save(&a.out)?;
    if let Some(path) = &a.save_extractor {
        extractor.save(path)?;
    }
    if let Some(path) = &a.log {
        write_loss_log(path, &rows)?;
    }
    if let Some(last) = rows.last() {
        println!(
            "iteration {}: l1 {:.6} perceptual {:.6} total {:.6}",
            last.iteration, last.l1, last.perceptual, last.total
        );
    }
    println!("checkpoint: {}", a.out.display());
    Ok(0)
}

#[derive(Args)]
struct TrainRefinerArgs {
    #[command(flatten)]
    source: DataSource,

    /// Checkpoint to write
    #[arg(long)]
    out: PathBuf,

    /// Resume from this checkpoint instead of a fresh initialization
    #[arg(long)]
    init: Option<PathBuf>,

    #[command(flatten)]
    arch: ArchArgs,

    #[command(flatten)]
    hyper: TrainHyper,

    /// Mask-corruption strength for building (raw, truth) pairs
    #[arg(long)]
    degrade_factor: Option<usize>,

    /// Write the loss log as CSV
    #[arg(long)]
    log: Option<PathBuf>,
}

fn cmd_train_refiner(a: TrainRefinerArgs, cfg: &FileConfig, seed: Option<u64>) -> Result<u8> {
    let seed = resolve_seed(seed);
    let factor = pick(a.degrade_factor, cfg, "degrade-factor", 4)?;
    let pairs = a
        .source
        .load(seed)?
        .into_iter()
        .map(|t| {
            Ok(RefinePair {
                raw: degrade_mask(&t.fg_mask, factor)?,
                img: t.target,
                truth: t.fg_mask,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let hyper = a.hyper.resolve(cfg, seed)?;

    let mut net = match &a.init {
        Some(path) => RefineNet::from_checkpoint(path)?,
        None => {
            let (levels, base, growth, db_layers) = a.arch.resolve(cfg, (3, 8, 4, 1))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            RefineNet::new(levels, base, growth, db_layers, &mut rng)?
        }
    };
    let rows = train_refiner(&mut net, &pairs, &hyper)?;
    net.save(&a.out)?;
    if let Some(path) = &a.log {
        write_refine_log(path, &rows)?;
    }
    if let Some(last) = rows.last() {
        println!("iteration {}: cross-entropy {:.6}", last.iteration, last.cross_entropy);
    }
    println!("checkpoint: {}", a.out.display());
    Ok(0)
}

// ---------------------------------------------------------------------------
// augment / syntest

#[derive(Args)]
struct AugmentArgs {
    /// Dataset directory to create
    #[arg(long)]
    out: PathBuf,

    #[command(flatten)]
    assets: AssetSource,

    /// Easy samples: asset pasted onto two backgrounds
    #[arg(long, default_value_t = 8)]
    easy: usize,

    /// Hard samples: the model's own composite becomes the new foreground
    #[arg(long, default_value_t = 0)]
    hard: usize,

    /// Fusion checkpoint that generates hard samples (required if --hard > 0)
    #[arg(long)]
    model: Option<PathBuf>,
}

fn cmd_augment(a: AugmentArgs, _cfg: &FileConfig, seed: Option<u64>) -> Result<u8> {
    let seed = resolve_seed(seed);
    let model = match (&a.model, a.hard) {
        (Some(path), _) => Some(FusionNet::from_checkpoint(path)?),
        (None, 0) => None,
        (None, _) => {
            return Err(Error::InvalidArgument("--hard needs --model CHECKPOINT".into()))
        }
    };
    let (assets, backgrounds) = a.assets.load(seed)?;
    let spec = DatasetSpec {
        assets: &assets,
        backgrounds: &backgrounds,
        colors: &[],
        n_easy: a.easy,
        n_hard: a.hard,
        seed,
    };
    let rows = synthesize_dataset(&a.out, &spec, model.as_ref().map(|m| m as &dyn Compositor))?;
    println!("wrote {} samples to {}", rows.len(), a.out.display());
    Ok(0)
}

#[derive(Args)]
struct SyntestArgs {
    /// Test-set directory to create
    #[arg(long)]
    out: PathBuf,

    #[command(flatten)]
    assets: AssetSource,

    /// Number of test samples
    #[arg(long)]
    n: Option<usize>,

    /// Trimap unknown-band width in pixels
    #[arg(long)]
    band: Option<usize>,
}

fn cmd_syntest(a: SyntestArgs, cfg: &FileConfig, seed: Option<u64>) -> Result<u8> {
    let seed = resolve_seed(seed);
    let n = pick(a.n, cfg, "n", 50)?;
    let band = pick(a.band, cfg, "band", 16)?;
    let (assets, backgrounds) = a.assets.load(seed)?;
    let rows = make_syntest(&a.out, &assets, &backgrounds, n, band, seed)?;
    println!("wrote {} samples to {}", rows.len(), a.out.display());
    Ok(0)
}

// ---------------------------------------------------------------------------
// eval

#[derive(ValueEnum, Clone, Copy)]
enum RegionArg {
    /// Score only pixels inside the trimap's unknown band
    Unknown,
    /// Score every pixel
    Whole,
}

#[derive(Args)]
struct EvalArgs {
    /// Test-set directory written by `syntest`
    #[arg(long)]
    data: PathBuf,

    /// Report directory (default: <data>/report)
    #[arg(long)]
    out: Option<PathBuf>,

    /// Comma-separated methods: oracle-alpha, copy-paste, feather,
    /// pyramid, mlf. Empty string scores nothing and writes an empty report.
    #[arg(long, default_value = "oracle-alpha,copy-paste,feather,pyramid")]
    methods: String,

    /// Fusion checkpoint for the mlf method
    #[arg(long)]
    checkpoint: Option<PathBuf>,

    /// Directory of pre-rendered composites named <sample id>.png;
    /// repeatable, each scored as its own method
    #[arg(long)]
    pred_dir: Vec<PathBuf>,

    /// Feather radius for the feather method
    #[arg(long)]
    sigma: Option<f32>,

    /// Pyramid levels (default: as many as the samples support)
    #[arg(long)]
    levels: Option<usize>,

    #[arg(long, value_enum, default_value_t = RegionArg::Unknown)]
    region: RegionArg,
}

fn cmd_eval(a: EvalArgs, cfg: &FileConfig) -> Result<u8> {
    let out = a.out.clone().unwrap_or_else(|| a.data.join("report"));
    let names: Vec<&str> =
        a.methods.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if names.is_empty() && a.pred_dir.is_empty() {
        emit_report(&[], &out)?;
        println!("no methods requested; empty report at {}", out.display());
        return Ok(0);
    }

    let samples = load_syntest(&a.data)?;
    let sigma = pick(a.sigma, cfg, "sigma", 2.0)?;
    let levels = match pick(a.levels, cfg, "levels", 0)? {
        0 => samples
            .first()
            .map(|s| default_levels(s.triplet.fg.width(), s.triplet.fg.height()))
            .unwrap_or(1),
        n => n,
    };
    let fusion = match names.contains(&"mlf") {
        false => None,
        true => {
            let path = a.checkpoint.as_ref().ok_or_else(|| {
                Error::InvalidArgument("method mlf needs --checkpoint".into())
            })?;
            Some(FusionNet::from_checkpoint(path)?)
        }
    };
    let mut methods = Vec::new();
    for name in names {
        methods.push(match name {
            "oracle-alpha" => BenchMethod::OracleAlpha,
            "copy-paste" => BenchMethod::HardCopyPaste,
            "feather" => BenchMethod::FeatheredCopyPaste { sigma },
            "pyramid" => BenchMethod::PyramidBlend { levels },
            "mlf" => BenchMethod::Fusion { label: "mlf", net: fusion.as_ref().unwrap() },
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown method {other:?} (expected oracle-alpha, copy-paste, feather, \
                     pyramid, or mlf)"
                )))
            }
        });
    }
    for dir in &a.pred_dir {
        methods.push(BenchMethod::PredDir { dir });
    }

    let region = match a.region {
        RegionArg::Unknown => Region::Unknown,
        RegionArg::Whole => Region::Whole,
    };
    let results = run_benchmark(&samples, &methods, region)?;
    emit_report(&results, &out)?;
    print!("{}", render_table(&results));
    println!("report: {}", out.display());
    Ok(0)
}

// ---------------------------------------------------------------------------
// gradcheck

#[derive(ValueEnum, Clone, Copy)]
enum Suite {
    /// Every differentiable op plus the full network
    All,
    /// Per-op checks only
    Ops,
    /// The end-to-end network check only
    Net,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = Suite::All)]
    suite: Suite,

    /// Finite-difference step
    #[arg(long)]
    h: Option<f64>,

    /// Largest acceptable relative error
    #[arg(long)]
    tol: Option<f64>,
}

fn cmd_gradcheck(a: GradcheckArgs, cfg: &FileConfig) -> Result<u8> {
    let h = pick(a.h, cfg, "h", 1e-3)?;
    let tol = pick(a.tol, cfg, "tol", 1e-3)?;
    let entries = match a.suite {
        Suite::All => gradient_suite(h)?,
        Suite::Ops => op_suite(h)?,
        Suite::Net => net_suite(h)?,
    };
    let mut failures = 0;
    for entry in &entries {
        let ok = entry.rel_err < tol;
        println!(
            "{:<28} rel err {:>10.3e}  {}",
            entry.name,
            entry.rel_err,
            if ok { "ok" } else { "FAIL" }
        );
        failures += usize::from(!ok);
    }
    if failures > 0 {
        println!("{failures}/{} checks failed at tol {tol:.1e}", entries.len());
        return Ok(3);
    }
    println!("all {} checks passed at tol {tol:.1e}", entries.len());
    Ok(0)
}

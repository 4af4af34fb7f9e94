//! Seeded training loops for the compositing and refinement networks.
//!
//! All randomness (sample choice, crop geometry) flows from the single
//! seed in [`TrainConfig`], and every numeric step is deterministic, so a
//! repeated run yields bit-identical parameters.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{total_loss_parts, FeatureExtractor};
use super::{FusionNet, RefineNet};
use crate::augment::Triplet;
use crate::composite::invert_mask;
use crate::error::{Error, Result};
use crate::img::{resize_bilinear, resize_mask_bilinear, Image, SoftMask};
use crate::nn::{adam_step, AdamConfig, Graph, Tensor};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Square side every training crop is resized to.
    pub crop_size: usize,
    /// Square side used when evaluating full frames.
    pub test_size: usize,
    /// Weight of the feature-space loss term.
    pub lambda_p: f64,
    pub iterations: usize,
    pub seed: u64,
    /// A loss row is recorded every this many iterations.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            lr: 2e-3,
            batch_size: 1,
            crop_size: 384,
            test_size: 768,
            lambda_p: 0.8,
            iterations: 0,
            seed: 0,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 || self.crop_size == 0 || self.test_size == 0 || self.log_every == 0 {
            return Err(Error::InvalidArgument(
                "batch size, crop size, test size and log interval must be positive".into(),
            ));
        }
        if !(self.lambda_p.is_finite() && self.lambda_p >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "perceptual weight {} must be >= 0",
                self.lambda_p
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub iteration: usize,
    pub l1: f64,
    pub perceptual: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineLossRow {
    pub iteration: usize,
    pub cross_entropy: f64,
}

/// CSV loss log: `iteration,l1,perceptual,total`.
pub fn write_loss_log(path: &Path, rows: &[LossRow]) -> Result<()> {
    let mut out = String::from("iteration,l1,perceptual,total\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.iteration, r.l1, r.perceptual, r.total));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// CSV loss log: `iteration,cross_entropy`.
pub fn write_refine_log(path: &Path, rows: &[RefineLossRow]) -> Result<()> {
    let mut out = String::from("iteration,cross_entropy\n");
    for r in rows {
        out.push_str(&format!("{},{}\n", r.iteration, r.cross_entropy));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct CropRect {
    x0: usize,
    y0: usize,
    side: usize,
}

/// Random square crop with side in `[lo, min(w,h)]`.
fn sample_crop(rng: &mut ChaCha8Rng, w: usize, h: usize, lo: usize) -> CropRect {
    let min_dim = w.min(h);
    let lo = lo.clamp(1, min_dim);
    let side = rng.gen_range(lo..=min_dim);
    let x0 = rng.gen_range(0..=(w - side));
    let y0 = rng.gen_range(0..=(h - side));
    CropRect { x0, y0, side }
}

fn crop_resize_image(img: &Image, rect: &CropRect, out_side: usize) -> Result<Tensor> {
    let c = img.crop(rect.x0, rect.y0, rect.side, rect.side)?;
    let r = resize_bilinear(&c, out_side, out_side)?;
    Ok(Tensor::from_image(&r))
}

fn crop_resize_mask(mask: &SoftMask, rect: &CropRect, out_side: usize) -> Result<(Tensor, Tensor)> {
    let c = mask.crop(rect.x0, rect.y0, rect.side, rect.side)?;
    let r = resize_mask_bilinear(&c, out_side, out_side)?;
    let inv = invert_mask(&r);
    Ok((Tensor::from_mask(&r), Tensor::from_mask(&inv)))
}

/// Concatenate `[1,c,h,w]` tensors along the batch axis.
fn stack_batch(items: &[Tensor]) -> Tensor {
    let [_, c, h, w] = items[0].shape();
    let plane = c * h * w;
    let mut out = Tensor::zeros([items.len(), c, h, w]);
    for (i, t) in items.iter().enumerate() {
        out.data_mut()[i * plane..(i + 1) * plane].copy_from_slice(t.data());
    }
    out
}

fn validate_triplets(data: &[Triplet]) -> Result<()> {
    for (i, t) in data.iter().enumerate() {
        t.validate()
            .map_err(|e| Error::Dataset(format!("triplet {i}: {e}")))?;
    }
    Ok(())
}

/// Fit the compositing network to `data` by sampling random crops,
/// resizing them to `cfg.crop_size`, and stepping ADAM on
/// L1 + λ_P · perceptual against the reference composite.
pub fn train_compositor(
    net: &mut FusionNet,
    extractor: &FeatureExtractor,
    data: &[Triplet],
    cfg: &TrainConfig,
) -> Result<Vec<LossRow>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    validate_triplets(data)?;
    net.arch().check_spatial(cfg.crop_size, cfg.crop_size)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut log = Vec::new();

    for it in 1..=cfg.iterations {
        let mut fgs = Vec::with_capacity(cfg.batch_size);
        let mut fg_masks = Vec::with_capacity(cfg.batch_size);
        let mut bgs = Vec::with_capacity(cfg.batch_size);
        let mut bg_masks = Vec::with_capacity(cfg.batch_size);
        let mut targets = Vec::with_capacity(cfg.batch_size);
        let mut batch_desc = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let idx = rng.gen_range(0..data.len());
            let t = &data[idx];
            let rect = sample_crop(&mut rng, t.fg.width(), t.fg.height(), cfg.crop_size);
            batch_desc.push(format!(
                "sample {idx}, crop {s}x{s}+{x}+{y}",
                s = rect.side,
                x = rect.x0,
                y = rect.y0
            ));
            fgs.push(crop_resize_image(&t.fg, &rect, cfg.crop_size)?);
            bgs.push(crop_resize_image(&t.bg, &rect, cfg.crop_size)?);
            targets.push(crop_resize_image(&t.target, &rect, cfg.crop_size)?);
            let (m, inv) = crop_resize_mask(&t.fg_mask, &rect, cfg.crop_size)?;
            fg_masks.push(m);
            bg_masks.push(inv);
        }

        let mut g = Graph::new();
        let fg_v = g.leaf(stack_batch(&fgs));
        let fgm_v = g.leaf(stack_batch(&fg_masks));
        let bg_v = g.leaf(stack_batch(&bgs));
        let bgm_v = g.leaf(stack_batch(&bg_masks));
        let tgt_v = g.leaf(stack_batch(&targets));

        let pred = net.forward(&mut g, fg_v, fgm_v, bg_v, bgm_v, true)?;
        let (total, l1, perc) = total_loss_parts(&mut g, extractor, pred, tgt_v, cfg.lambda_p)?;
        let total_val = g.scalar(total);
        if !total_val.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                detail: format!("loss {total_val}; batch: {}", batch_desc.join("; ")),
            });
        }
        g.backward(total)?;
        let grads = g.param_grads();
        adam_step(&mut net.params, &grads, &adam)?;

        if it % cfg.log_every == 0 || it == cfg.iterations {
            log.push(LossRow {
                iteration: it,
                l1: g.scalar(l1),
                perceptual: g.scalar(perc),
                total: total_val,
            });
        }
    }
    Ok(log)
}

/// One training example for the mask refiner: an image, the mask to be
/// cleaned up, and the reference mask.
#[derive(Debug, Clone)]
pub struct RefinePair {
    pub img: Image,
    pub raw: SoftMask,
    pub truth: SoftMask,
}

fn validate_pairs(pairs: &[RefinePair]) -> Result<()> {
    for (i, p) in pairs.iter().enumerate() {
        if p.img.channels() != 3 {
            return Err(Error::Dataset(format!("pair {i}: image must have 3 channels")));
        }
        if !p.raw.same_dims_as_image(&p.img) || !p.truth.same_dims_as_image(&p.img) {
            return Err(Error::Dataset(format!("pair {i}: mismatched member dimensions")));
        }
    }
    Ok(())
}

/// Fit the refiner on (image, corrupt mask, reference mask) examples with
/// patch crops of varying size and a cross-entropy objective.
pub fn train_refiner(
    net: &mut RefineNet,
    pairs: &[RefinePair],
    cfg: &TrainConfig,
) -> Result<Vec<RefineLossRow>> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    validate_pairs(pairs)?;
    net.arch().check_spatial(cfg.crop_size, cfg.crop_size)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut log = Vec::new();
    // Patches of various sizes: anything from half the target side up to
    // the full frame, all resized back to the target side.
    let lo_side = (cfg.crop_size / 2).max(2);

    for it in 1..=cfg.iterations {
        let mut imgs = Vec::with_capacity(cfg.batch_size);
        let mut raws = Vec::with_capacity(cfg.batch_size);
        let mut truths = Vec::with_capacity(cfg.batch_size);
        let mut batch_desc = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let idx = rng.gen_range(0..pairs.len());
            let p = &pairs[idx];
            let rect = sample_crop(&mut rng, p.img.width(), p.img.height(), lo_side);
            batch_desc.push(format!(
                "pair {idx}, crop {s}x{s}+{x}+{y}",
                s = rect.side,
                x = rect.x0,
                y = rect.y0
            ));
            imgs.push(crop_resize_image(&p.img, &rect, cfg.crop_size)?);
            let (raw_t, _) = crop_resize_mask(&p.raw, &rect, cfg.crop_size)?;
            let (truth_t, _) = crop_resize_mask(&p.truth, &rect, cfg.crop_size)?;
            raws.push(raw_t);
            truths.push(truth_t);
        }

        let mut g = Graph::new();
        let img_v = g.leaf(stack_batch(&imgs));
        let raw_v = g.leaf(stack_batch(&raws));
        let truth_v = g.leaf(stack_batch(&truths));

        let pred = net.forward(&mut g, img_v, raw_v, true)?;
        let ce = g.cross_entropy(pred, truth_v)?;
        let ce_val = g.scalar(ce);
        if !ce_val.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                detail: format!("loss {ce_val}; batch: {}", batch_desc.join("; ")),
            });
        }
        g.backward(ce)?;
        let grads = g.param_grads();
        adam_step(&mut net.params, &grads, &adam)?;

        if it % cfg.log_every == 0 || it == cfg.iterations {
            log.push(RefineLossRow { iteration: it, cross_entropy: ce_val });
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
        let data = (0..w * h * 3).map(|_| rng.gen_range(0.0f32..1.0)).collect();
        Image::from_data(w, h, 3, data).unwrap()
    }

    fn rand_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> SoftMask {
        let data = (0..w * h).map(|_| rng.gen_range(0.0f32..1.0)).collect();
        SoftMask::from_data(w, h, data).unwrap()
    }

    fn toy_triplets(rng: &mut ChaCha8Rng, n: usize, side: usize) -> Vec<Triplet> {
        (0..n)
            .map(|_| {
                let fg = rand_image(rng, side, side);
                let bg = rand_image(rng, side, side);
                let fg_mask = rand_mask(rng, side, side);
                let target = crate::composite::alpha_composite(&fg, &bg, &fg_mask).unwrap();
                Triplet { fg, bg, target, fg_mask }
            })
            .collect()
    }

    fn toy_cfg(iterations: usize) -> TrainConfig {
        TrainConfig {
            crop_size: 16,
            test_size: 16,
            iterations,
            seed: 99,
            log_every: 1,
            ..TrainConfig::default()
        }
    }

    fn param_bits(store: &crate::nn::ParamStore) -> Vec<u64> {
        let mut bits = Vec::new();
        for name in store.names() {
            bits.extend(store.get(name).unwrap().data().iter().map(|v| v.to_bits()));
        }
        bits
    }

    #[test]
    fn zero_iterations_changes_nothing() {
        let mut r = rng(1);
        let mut net = FusionNet::two_stream(2, 4, 2, 1, &mut r).unwrap();
        let fx = FeatureExtractor::random(7);
        let data = toy_triplets(&mut r, 2, 16);
        let before = param_bits(&net.params);
        let log = train_compositor(&mut net, &fx, &data, &toy_cfg(0)).unwrap();
        assert!(log.is_empty());
        assert_eq!(param_bits(&net.params), before);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut r = rng(2);
        let mut net = FusionNet::two_stream(2, 4, 2, 1, &mut r).unwrap();
        let fx = FeatureExtractor::random(7);
        let err = train_compositor(&mut net, &fx, &[], &toy_cfg(1)).unwrap_err();
        assert!(matches!(err, Error::Dataset(_)));
    }

    #[test]
    fn same_seed_trains_bit_identically() {
        let fx = FeatureExtractor::random(7);
        let mut data_rng = rng(3);
        let data = toy_triplets(&mut data_rng, 2, 16);
        let cfg = toy_cfg(25);

        let run = || {
            let mut init_rng = rng(4);
            let mut net = FusionNet::two_stream(2, 4, 2, 1, &mut init_rng).unwrap();
            let log = train_compositor(&mut net, &fx, &data, &cfg).unwrap();
            (param_bits(&net.params), log)
        };
        let (p1, log1) = run();
        let (p2, log2) = run();
        assert_eq!(p1, p2);
        assert_eq!(log1, log2);
    }

    #[test]
    fn loss_falls_while_overfitting_one_sample() {
        let fx = FeatureExtractor::random(7);
        let mut r = rng(5);
        let data = toy_triplets(&mut r, 1, 16);
        let mut init_rng = rng(6);
        let mut net = FusionNet::two_stream(2, 4, 2, 1, &mut init_rng).unwrap();
        let log = train_compositor(&mut net, &fx, &data, &toy_cfg(150)).unwrap();
        let head: f64 = log[..10].iter().map(|r| r.total).sum::<f64>() / 10.0;
        let tail: f64 = log[log.len() - 10..].iter().map(|r| r.total).sum::<f64>() / 10.0;
        assert!(
            tail < 0.5 * head,
            "expected clear improvement, got {head:.4} -> {tail:.4}"
        );
    }

    #[test]
    fn non_finite_loss_aborts_with_context() {
        let fx = FeatureExtractor::random(7);
        let mut r = rng(7);
        let data = toy_triplets(&mut r, 1, 16);
        let mut init_rng = rng(8);
        let mut net = FusionNet::two_stream(2, 4, 2, 1, &mut init_rng).unwrap();
        let mut poisoned = net.params.get("head.b").unwrap().clone();
        poisoned.data_mut()[0] = f64::NAN;
        net.params.set("head.b", poisoned).unwrap();
        let err = train_compositor(&mut net, &fx, &data, &toy_cfg(5)).unwrap_err();
        match err {
            Error::NonFiniteLoss { iteration, .. } => assert_eq!(iteration, 1),
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn refiner_first_loss_matches_hand_computed_cross_entropy() {
        // Constant frames: every random patch, once resized, reproduces the
        // same tensors, so the first training loss equals the loss of the
        // full frame under the initial weights no matter which crop the
        // sampler draws.
        let data: Vec<f32> = [0.43f32, 0.21, 0.77].into_iter().cycle().take(16 * 16 * 3).collect();
        let img = Image::from_data(16, 16, 3, data).unwrap();
        let raw = SoftMask::splat(16, 16, 0.3).unwrap();
        let truth = SoftMask::splat(16, 16, 0.66).unwrap();
        let pairs = vec![RefinePair { img: img.clone(), raw: raw.clone(), truth: truth.clone() }];

        // Identically seeded twin gives access to the pre-update weights.
        let mut net = RefineNet::new(2, 4, 2, 1, &mut rng(10)).unwrap();
        let twin = RefineNet::new(2, 4, 2, 1, &mut rng(10)).unwrap();

        let cfg = toy_cfg(1);
        let log = train_refiner(&mut net, &pairs, &cfg).unwrap();
        assert_eq!(log.len(), 1);

        let pred = {
            let mut g = Graph::new();
            let img_v = g.leaf(Tensor::from_image(&img));
            let raw_v = g.leaf(Tensor::from_mask(&raw));
            let out = twin.forward(&mut g, img_v, raw_v, false).unwrap();
            g.value(out).clone()
        };
        let truth_t = Tensor::from_mask(&truth);
        let n = pred.numel() as f64;
        let mut oracle = 0.0;
        for (&p, &t) in pred.data().iter().zip(truth_t.data()) {
            let p = p.clamp(1e-7, 1.0 - 1e-7);
            oracle -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        }
        oracle /= n;
        assert!(
            (log[0].cross_entropy - oracle).abs() < 1e-9,
            "{} vs {oracle}",
            log[0].cross_entropy
        );
    }

    #[test]
    fn refiner_same_seed_is_deterministic() {
        let mut r = rng(11);
        let pairs: Vec<RefinePair> = (0..2)
            .map(|_| {
                let img = rand_image(&mut r, 20, 20);
                let truth = rand_mask(&mut r, 20, 20);
                let raw = rand_mask(&mut r, 20, 20);
                RefinePair { img, raw, truth }
            })
            .collect();
        let cfg = TrainConfig { crop_size: 8, iterations: 20, seed: 42, log_every: 5, ..TrainConfig::default() };
        let run = || {
            let mut net = RefineNet::new(2, 4, 2, 1, &mut rng(12)).unwrap();
            let log = train_refiner(&mut net, &pairs, &cfg).unwrap();
            (param_bits(&net.params), log)
        };
        let (p1, l1) = run();
        let (p2, l2) = run();
        assert_eq!(p1, p2);
        assert_eq!(l1, l2);
    }

    #[test]
    fn loss_logs_round_trip_as_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let rows = vec![
            LossRow { iteration: 10, l1: 0.25, perceptual: 0.5, total: 0.65 },
            LossRow { iteration: 20, l1: 0.125, perceptual: 0.25, total: 0.325 },
        ];
        write_loss_log(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iteration,l1,perceptual,total");
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], "10,0.25,0.5,0.65");

        let rpath = dir.path().join("refine.csv");
        write_refine_log(&rpath, &[RefineLossRow { iteration: 5, cross_entropy: 0.75 }]).unwrap();
        let text = std::fs::read_to_string(&rpath).unwrap();
        assert_eq!(text, "iteration,cross_entropy\n5,0.75\n");
    }

    #[test]
    fn crop_size_must_fit_network_levels() {
        let fx = FeatureExtractor::random(7);
        let mut r = rng(13);
        let data = toy_triplets(&mut r, 1, 16);
        let mut net = FusionNet::two_stream(2, 4, 2, 1, &mut rng(14)).unwrap();
        let cfg = TrainConfig { crop_size: 10, iterations: 1, ..TrainConfig::default() };
        assert!(train_compositor(&mut net, &fx, &data, &cfg).is_err());
    }
}

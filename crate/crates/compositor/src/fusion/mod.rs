//! Learned compositing: encoder–decoder networks over dense blocks.
//!
//! [`FusionNet`] composites a masked foreground onto a background. In its
//! two-stream form each input (image + soft mask) is encoded separately
//! and the decoder fuses per-level features from both streams; the
//! single-stream form feeds one concatenated stack through one encoder
//! and exists as an ablation baseline. [`RefineNet`] is the same substrate
//! with a 4-channel input (RGB + raw mask) and a 1-channel sigmoid head,
//! used to clean up coarse masks; [`NeuralRefiner`] adapts it to the
//! multi-scale refinement driver in [`crate::composite`].

mod loss;
mod suite;
mod train;

pub use loss::{perceptual_loss, total_loss, total_loss_parts, FeatureExtractor};
pub use suite::{gradient_suite, net_suite, op_suite, SuiteEntry};
pub use train::{
    train_compositor, train_refiner, write_loss_log, write_refine_log, LossRow, RefineLossRow,
    RefinePair, TrainConfig,
};

use rand_chacha::ChaCha8Rng;
use std::path::Path;

use crate::composite::MaskRefiner;
use crate::error::{Error, Result};
use crate::img::{resize_bilinear, resize_mask_bilinear, Image, SoftMask};
use crate::nn::{load_checkpoint, save_checkpoint, Graph, ParamStore, Tensor, Var};

/// Encoder width is doubled per level until `cap_factor * base`.
const CAP_FACTOR: usize = 8;

/// Shape of one encoder–decoder network; every parameter name and tensor
/// shape is a pure function of this.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arch {
    pub streams: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub levels: usize,
    pub base: usize,
    pub growth: usize,
    pub db_layers: usize,
}

#[derive(Clone, Copy)]
enum ParamKind {
    Conv,
    TConv,
    Bias,
}

struct ParamSpec {
    name: String,
    kind: ParamKind,
    shape: [usize; 4],
}

impl Arch {
    fn validate(&self) -> Result<()> {
        if !(self.streams == 1 || self.streams == 2) {
            return Err(Error::InvalidArgument("stream count must be 1 or 2".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 || self.base == 0 || self.levels == 0 {
            return Err(Error::InvalidArgument(
                "channels, base width and level count must be positive".into(),
            ));
        }
        Ok(())
    }

    fn stream_prefixes(&self) -> &'static [&'static str] {
        if self.streams == 2 {
            &["fg", "bg"]
        } else {
            &["enc"]
        }
    }

    /// Width entering each encoder level, plus the post-encoder width.
    fn widths(&self) -> Vec<usize> {
        let cap = CAP_FACTOR * self.base;
        let mut w = vec![self.base];
        for _ in 0..self.levels {
            w.push((w.last().unwrap() * 2).min(cap));
        }
        w
    }

    fn db_out(&self, cin: usize) -> usize {
        cin + self.db_layers * self.growth
    }

    /// Channels of the level-`k` feature map kept for skip fusion.
    fn skip_channels(&self, k: usize) -> usize {
        self.db_out(self.widths()[k])
    }

    fn dense_block_specs(specs: &mut Vec<ParamSpec>, prefix: &str, cin: usize, layers: usize, growth: usize) {
        let mut c = cin;
        for i in 0..layers {
            specs.push(ParamSpec {
                name: format!("{prefix}.l{i}.w"),
                kind: ParamKind::Conv,
                shape: [growth, c, 3, 3],
            });
            specs.push(ParamSpec {
                name: format!("{prefix}.l{i}.b"),
                kind: ParamKind::Bias,
                shape: [1, growth, 1, 1],
            });
            c += growth;
        }
    }

    /// Every parameter of the network, in canonical order.
    fn param_specs(&self) -> Vec<ParamSpec> {
        let w = self.widths();
        let mut specs = Vec::new();
        for pfx in self.stream_prefixes() {
            specs.push(ParamSpec {
                name: format!("{pfx}.stem.w"),
                kind: ParamKind::Conv,
                shape: [self.base, self.in_channels, 3, 3],
            });
            specs.push(ParamSpec {
                name: format!("{pfx}.stem.b"),
                kind: ParamKind::Bias,
                shape: [1, self.base, 1, 1],
            });
            for k in 0..self.levels {
                Self::dense_block_specs(
                    &mut specs,
                    &format!("{pfx}.db{k}"),
                    w[k],
                    self.db_layers,
                    self.growth,
                );
                specs.push(ParamSpec {
                    name: format!("{pfx}.down{k}.w"),
                    kind: ParamKind::Conv,
                    shape: [w[k + 1], self.db_out(w[k]), 3, 3],
                });
                specs.push(ParamSpec {
                    name: format!("{pfx}.down{k}.b"),
                    kind: ParamKind::Bias,
                    shape: [1, w[k + 1], 1, 1],
                });
            }
        }
        let bottom = w[self.levels];
        specs.push(ParamSpec {
            name: "mid.w".into(),
            kind: ParamKind::Conv,
            shape: [bottom, self.streams * bottom, 1, 1],
        });
        specs.push(ParamSpec {
            name: "mid.b".into(),
            kind: ParamKind::Bias,
            shape: [1, bottom, 1, 1],
        });
        let mut cur = bottom;
        for k in (0..self.levels).rev() {
            specs.push(ParamSpec {
                name: format!("dec.up{k}.w"),
                kind: ParamKind::TConv,
                shape: [cur, self.base, 4, 4],
            });
            specs.push(ParamSpec {
                name: format!("dec.up{k}.b"),
                kind: ParamKind::Bias,
                shape: [1, self.base, 1, 1],
            });
            let cat = self.base + self.streams * self.skip_channels(k);
            specs.push(ParamSpec {
                name: format!("dec.fuse{k}.w"),
                kind: ParamKind::Conv,
                shape: [2 * self.base, cat, 1, 1],
            });
            specs.push(ParamSpec {
                name: format!("dec.fuse{k}.b"),
                kind: ParamKind::Bias,
                shape: [1, 2 * self.base, 1, 1],
            });
            Self::dense_block_specs(
                &mut specs,
                &format!("dec.db{k}"),
                2 * self.base,
                self.db_layers,
                self.growth,
            );
            cur = self.db_out(2 * self.base);
        }
        specs.push(ParamSpec {
            name: "head.w".into(),
            kind: ParamKind::Conv,
            shape: [self.out_channels, cur, 3, 3],
        });
        specs.push(ParamSpec {
            name: "head.b".into(),
            kind: ParamKind::Bias,
            shape: [1, self.out_channels, 1, 1],
        });
        specs
    }

    fn init_params(&self, rng: &mut ChaCha8Rng) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for spec in self.param_specs() {
            match spec.kind {
                ParamKind::Conv => store.init_conv(&spec.name, spec.shape, rng)?,
                ParamKind::TConv => store.init_tconv(&spec.name, spec.shape, rng)?,
                ParamKind::Bias => store.init_bias(&spec.name, spec.shape[1])?,
            }
        }
        Ok(store)
    }

    /// Check that a loaded store holds exactly this architecture.
    fn check_store(&self, store: &ParamStore) -> Result<()> {
        let specs = self.param_specs();
        if store.len() != specs.len() {
            return Err(Error::CheckpointFormat(format!(
                "expected {} parameters, checkpoint has {}",
                specs.len(),
                store.len()
            )));
        }
        for spec in &specs {
            let t = store
                .get(&spec.name)
                .map_err(|_| Error::CheckpointFormat(format!("missing parameter {}", spec.name)))?;
            if t.shape() != spec.shape {
                return Err(Error::CheckpointFormat(format!(
                    "{}: expected shape {:?}, found {:?}",
                    spec.name,
                    spec.shape,
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    fn param_count(&self) -> usize {
        self.param_specs().iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }

    fn meta(&self, label: &str) -> Vec<(String, String)> {
        [
            ("arch", label.to_string()),
            ("streams", self.streams.to_string()),
            ("in_channels", self.in_channels.to_string()),
            ("out_channels", self.out_channels.to_string()),
            ("levels", self.levels.to_string()),
            ("base", self.base.to_string()),
            ("growth", self.growth.to_string()),
            ("db_layers", self.db_layers.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    fn from_meta(meta: &std::collections::BTreeMap<String, String>) -> Result<Arch> {
        let field = |key: &str| -> Result<usize> {
            meta.get(key)
                .ok_or_else(|| Error::CheckpointFormat(format!("missing meta key {key}")))?
                .parse()
                .map_err(|_| Error::CheckpointFormat(format!("meta key {key} is not a number")))
        };
        let arch = Arch {
            streams: field("streams")?,
            in_channels: field("in_channels")?,
            out_channels: field("out_channels")?,
            levels: field("levels")?,
            base: field("base")?,
            growth: field("growth")?,
            db_layers: field("db_layers")?,
        };
        arch.validate()?;
        Ok(arch)
    }

    fn check_spatial(&self, h: usize, w: usize) -> Result<()> {
        let m = 1usize << self.levels;
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::InvalidArgument(format!(
                "input {w}x{h} must be a positive multiple of {m} (one halving per encoder level)"
            )));
        }
        Ok(())
    }
}

/// One densely connected block: each layer sees the concatenation of the
/// block input and all previous layer outputs, produces `growth` new
/// channels via 3×3 conv + ReLU, and the block returns everything
/// concatenated (input channels first). Output channel count is input
/// channels + `layers * growth`.
pub fn dense_block(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    x: Var,
    layers: usize,
    growth: usize,
    trainable: bool,
) -> Result<Var> {
    let mut features = vec![x];
    for i in 0..layers {
        let cat = if features.len() == 1 { features[0] } else { g.concat(&features)? };
        let w = pick(g, store, &format!("{prefix}.l{i}.w"), trainable)?;
        let b = pick(g, store, &format!("{prefix}.l{i}.b"), trainable)?;
        if g.value(w).shape()[0] != growth {
            return Err(Error::shape(
                "dense_block",
                format!(
                    "{prefix}.l{i}.w produces {} channels, expected growth {growth}",
                    g.value(w).shape()[0]
                ),
            ));
        }
        let y = g.conv2d(cat, w, 1, 1)?;
        let y = g.bias_add(y, b)?;
        features.push(g.relu(y));
    }
    if features.len() == 1 {
        Ok(features[0])
    } else {
        g.concat(&features)
    }
}

fn pick(g: &mut Graph, store: &ParamStore, name: &str, trainable: bool) -> Result<Var> {
    if trainable {
        g.param(store, name)
    } else {
        g.frozen_param(store, name)
    }
}

/// Shared forward pass; returns the per-stream encoder bottoms (handy for
/// isolation checks) and the pre-activation head output fed to sigmoid.
fn run_encdec(
    arch: &Arch,
    g: &mut Graph,
    store: &ParamStore,
    stream_inputs: &[Var],
    trainable: bool,
) -> Result<(Vec<Var>, Var)> {
    debug_assert_eq!(stream_inputs.len(), arch.streams);
    for &x in stream_inputs {
        let [_, c, h, w] = g.value(x).shape();
        if c != arch.in_channels {
            return Err(Error::shape(
                "network forward",
                format!("stream input has {c} channels, expected {}", arch.in_channels),
            ));
        }
        arch.check_spatial(h, w)?;
    }

    let mut skips: Vec<Vec<Var>> = Vec::with_capacity(arch.streams);
    let mut bottoms = Vec::with_capacity(arch.streams);
    for (s, &x) in stream_inputs.iter().enumerate() {
        let pfx = arch.stream_prefixes()[s];
        let w = pick(g, store, &format!("{pfx}.stem.w"), trainable)?;
        let b = pick(g, store, &format!("{pfx}.stem.b"), trainable)?;
        let y = g.conv2d(x, w, 1, 1)?;
        let y = g.bias_add(y, b)?;
        let mut cur = g.relu(y);

        let mut stream_skips = Vec::with_capacity(arch.levels);
        for k in 0..arch.levels {
            cur = dense_block(
                g,
                store,
                &format!("{pfx}.db{k}"),
                cur,
                arch.db_layers,
                arch.growth,
                trainable,
            )?;
            stream_skips.push(cur);
            let w = pick(g, store, &format!("{pfx}.down{k}.w"), trainable)?;
            let b = pick(g, store, &format!("{pfx}.down{k}.b"), trainable)?;
            let y = g.conv2d(cur, w, 2, 1)?;
            let y = g.bias_add(y, b)?;
            cur = g.relu(y);
        }
        skips.push(stream_skips);
        bottoms.push(cur);
    }

    let mut cur = if bottoms.len() == 1 { bottoms[0] } else { g.concat(&bottoms)? };
    let w = pick(g, store, "mid.w", trainable)?;
    let b = pick(g, store, "mid.b", trainable)?;
    let y = g.conv2d(cur, w, 1, 0)?;
    let y = g.bias_add(y, b)?;
    cur = g.relu(y);

    for k in (0..arch.levels).rev() {
        let w = pick(g, store, &format!("dec.up{k}.w"), trainable)?;
        let b = pick(g, store, &format!("dec.up{k}.b"), trainable)?;
        let y = g.tconv2d(cur, w, 2, 1)?;
        let y = g.bias_add(y, b)?;
        cur = g.relu(y);

        let mut cat = vec![cur];
        for stream_skips in &skips {
            cat.push(stream_skips[k]);
        }
        cur = g.concat(&cat)?;

        let w = pick(g, store, &format!("dec.fuse{k}.w"), trainable)?;
        let b = pick(g, store, &format!("dec.fuse{k}.b"), trainable)?;
        let y = g.conv2d(cur, w, 1, 0)?;
        let y = g.bias_add(y, b)?;
        cur = g.relu(y);

        cur = dense_block(
            g,
            store,
            &format!("dec.db{k}"),
            cur,
            arch.db_layers,
            arch.growth,
            trainable,
        )?;
    }

    let w = pick(g, store, "head.w", trainable)?;
    let b = pick(g, store, "head.b", trainable)?;
    let y = g.conv2d(cur, w, 1, 1)?;
    let head = g.bias_add(y, b)?;
    Ok((bottoms, head))
}

/// Compositing network: predicts the composite image from a masked
/// foreground and a background.
pub struct FusionNet {
    arch: Arch,
    pub params: ParamStore,
}

impl FusionNet {
    /// Two encoders with identical shapes and disjoint parameters; the
    /// decoder concatenates both streams' per-level features.
    pub fn two_stream(
        levels: usize,
        base: usize,
        growth: usize,
        db_layers: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<FusionNet> {
        let arch = Arch {
            streams: 2,
            in_channels: 4,
            out_channels: 3,
            levels,
            base,
            growth,
            db_layers,
        };
        arch.validate()?;
        let params = arch.init_params(rng)?;
        Ok(FusionNet { arch, params })
    }

    /// Ablation baseline: everything stacked into one 7-channel input
    /// (foreground, its mask, background) through a single encoder. Widen
    /// `base`/`growth` by about √2 to match the two-stream parameter count.
    pub fn single_stream(
        levels: usize,
        base: usize,
        growth: usize,
        db_layers: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<FusionNet> {
        let arch = Arch {
            streams: 1,
            in_channels: 7,
            out_channels: 3,
            levels,
            base,
            growth,
            db_layers,
        };
        arch.validate()?;
        let params = arch.init_params(rng)?;
        Ok(FusionNet { arch, params })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    /// Graph-level forward. `bg_mask` is ignored by the single-stream
    /// variant (it is redundant with `fg_mask` in the standard pipeline).
    pub fn forward(
        &self,
        g: &mut Graph,
        fg: Var,
        fg_mask: Var,
        bg: Var,
        bg_mask: Var,
        trainable: bool,
    ) -> Result<Var> {
        let (_, head) = self.forward_parts(g, fg, fg_mask, bg, bg_mask, trainable)?;
        Ok(g.sigmoid(head))
    }

    fn forward_parts(
        &self,
        g: &mut Graph,
        fg: Var,
        fg_mask: Var,
        bg: Var,
        bg_mask: Var,
        trainable: bool,
    ) -> Result<(Vec<Var>, Var)> {
        let inputs = if self.arch.streams == 2 {
            let a = g.concat(&[fg, fg_mask])?;
            let b = g.concat(&[bg, bg_mask])?;
            vec![a, b]
        } else {
            vec![g.concat(&[fg, fg_mask, bg])?]
        };
        run_encdec(&self.arch, g, &self.params, &inputs, trainable)
    }

    /// Image-level compositing: returns the predicted composite.
    pub fn compose(
        &self,
        fg: &Image,
        fg_mask: &SoftMask,
        bg: &Image,
        bg_mask: &SoftMask,
    ) -> Result<Image> {
        if fg.channels() != 3 || bg.channels() != 3 {
            return Err(Error::dims(
                "compose",
                "3-channel foreground and background",
                format!("{} and {} channels", fg.channels(), bg.channels()),
            ));
        }
        if !fg.same_dims(bg) || !fg_mask.same_dims_as_image(fg) || !bg_mask.same_dims_as_image(bg) {
            return Err(Error::dims(
                "compose",
                format!("all inputs {}x{}", fg.width(), fg.height()),
                "mismatched image/mask dimensions".to_string(),
            ));
        }
        self.arch.check_spatial(fg.height(), fg.width())?;
        let mut g = Graph::new();
        let fg_v = g.leaf(Tensor::from_image(fg));
        let fgm_v = g.leaf(Tensor::from_mask(fg_mask));
        let bg_v = g.leaf(Tensor::from_image(bg));
        let bgm_v = g.leaf(Tensor::from_mask(bg_mask));
        let out = self.forward(&mut g, fg_v, fgm_v, bg_v, bgm_v, false)?;
        g.value(out).to_image()
    }

    /// Compose at arbitrary dimensions with the standard inverted
    /// background mask: frames whose sides are not multiples of the
    /// network stride run through a bilinear round trip.
    pub fn compose_fit(&self, fg: &Image, fg_mask: &SoftMask, bg: &Image) -> Result<Image> {
        let bg_mask = crate::composite::invert_mask(fg_mask);
        let m = 1usize << self.arch.levels;
        let (w, h) = (fg.width(), fg.height());
        let (tw, th) = (w.div_ceil(m) * m, h.div_ceil(m) * m);
        if (tw, th) == (w, h) {
            return self.compose(fg, fg_mask, bg, &bg_mask);
        }
        let out = self.compose(
            &resize_bilinear(fg, tw, th)?,
            &resize_mask_bilinear(fg_mask, tw, th)?,
            &resize_bilinear(bg, tw, th)?,
            &resize_mask_bilinear(&bg_mask, tw, th)?,
        )?;
        resize_bilinear(&out, w, h)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let label = if self.arch.streams == 2 { "fusion" } else { "fusion-single" };
        save_checkpoint(path, &self.params, &self.arch.meta(label))
    }

    pub fn from_checkpoint(path: &Path) -> Result<FusionNet> {
        let (params, meta) = load_checkpoint(path)?;
        let arch = Arch::from_meta(&meta)?;
        if arch.out_channels != 3 {
            return Err(Error::CheckpointFormat(format!(
                "checkpoint is not a compositing network (out_channels {})",
                arch.out_channels
            )));
        }
        arch.check_store(&params)?;
        Ok(FusionNet { arch, params })
    }
}

/// Mask refinement network: RGB + coarse mask in, cleaned mask out.
pub struct RefineNet {
    arch: Arch,
    pub params: ParamStore,
}

impl RefineNet {
    pub fn new(
        levels: usize,
        base: usize,
        growth: usize,
        db_layers: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<RefineNet> {
        let arch = Arch {
            streams: 1,
            in_channels: 4,
            out_channels: 1,
            levels,
            base,
            growth,
            db_layers,
        };
        arch.validate()?;
        let params = arch.init_params(rng)?;
        Ok(RefineNet { arch, params })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    pub fn forward(&self, g: &mut Graph, img: Var, raw: Var, trainable: bool) -> Result<Var> {
        let input = g.concat(&[img, raw])?;
        let (_, head) = run_encdec(&self.arch, g, &self.params, &[input], trainable)?;
        Ok(g.sigmoid(head))
    }

    pub fn refine_mask(&self, img: &Image, raw: &SoftMask) -> Result<SoftMask> {
        if img.channels() != 3 {
            return Err(Error::dims("refine_mask", "3-channel image", format!("{} channels", img.channels())));
        }
        if !raw.same_dims_as_image(img) {
            return Err(Error::dims(
                "refine_mask",
                format!("mask {}x{}", img.width(), img.height()),
                format!("mask {}x{}", raw.width(), raw.height()),
            ));
        }
        self.arch.check_spatial(img.height(), img.width())?;
        let mut g = Graph::new();
        let img_v = g.leaf(Tensor::from_image(img));
        let raw_v = g.leaf(Tensor::from_mask(raw));
        let out = self.forward(&mut g, img_v, raw_v, false)?;
        g.value(out).to_mask()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.params, &self.arch.meta("refiner"))
    }

    pub fn from_checkpoint(path: &Path) -> Result<RefineNet> {
        let (params, meta) = load_checkpoint(path)?;
        let arch = Arch::from_meta(&meta)?;
        if arch.out_channels != 1 || arch.in_channels != 4 || arch.streams != 1 {
            return Err(Error::CheckpointFormat(
                "checkpoint is not a mask refinement network".into(),
            ));
        }
        arch.check_store(&params)?;
        Ok(RefineNet { arch, params })
    }
}

/// Adapter plugging a [`RefineNet`] into the multi-scale mask refinement
/// driver.
pub struct NeuralRefiner<'a> {
    pub net: &'a RefineNet,
}

impl MaskRefiner for NeuralRefiner<'_> {
    fn refine(&self, img: &Image, mask: &SoftMask) -> Result<SoftMask> {
        self.net.refine_mask(img, mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_image(rng: &mut ChaCha8Rng, w: usize, h: usize, ch: usize) -> Image {
        use rand::Rng;
        let data = (0..w * h * ch).map(|_| rng.gen_range(0.0..1.0)).collect();
        Image::from_data(w, h, ch, data).unwrap()
    }

    fn rand_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> SoftMask {
        use rand::Rng;
        let data = (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect();
        SoftMask::from_data(w, h, data).unwrap()
    }

    fn zero_params(store: &mut ParamStore) {
        let names: Vec<String> = store.names().map(String::from).collect();
        for name in names {
            let shape = store.get(&name).unwrap().shape();
            store.set(&name, Tensor::zeros(shape)).unwrap();
        }
    }

    #[test]
    fn dense_block_zero_layers_is_identity() {
        let store = ParamStore::new();
        let mut g = Graph::new();
        let x = g.leaf(Tensor::splat([1, 3, 4, 4], 0.7));
        let y = dense_block(&mut g, &store, "db", x, 0, 8, false).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn dense_block_grows_channels() {
        let mut r = rng(1);
        let mut store = ParamStore::new();
        store.init_conv("db.l0.w", [4, 8, 3, 3], &mut r).unwrap();
        store.init_bias("db.l0.b", 4).unwrap();
        store.init_conv("db.l1.w", [4, 12, 3, 3], &mut r).unwrap();
        store.init_bias("db.l1.b", 4).unwrap();
        let mut g = Graph::new();
        let x = g.leaf(Tensor::splat([1, 8, 6, 6], 0.2));
        let y = dense_block(&mut g, &store, "db", x, 2, 4, false).unwrap();
        assert_eq!(g.value(y).shape(), [1, 16, 6, 6]);
    }

    #[test]
    fn dense_block_zero_weights_passes_input_through() {
        let mut store = ParamStore::new();
        store.register("db.l0.w", Tensor::zeros([4, 8, 3, 3])).unwrap();
        store.init_bias("db.l0.b", 4).unwrap();
        let mut g = Graph::new();
        let x = g.leaf(Tensor::splat([1, 8, 5, 5], 0.9));
        let y = dense_block(&mut g, &store, "db", x, 1, 4, false).unwrap();
        let out = g.value(y);
        assert_eq!(out.shape(), [1, 12, 5, 5]);
        // First 8 channels: untouched input; appended 4: relu(0) = 0.
        for c in 0..8 {
            assert_eq!(out.at(0, c, 2, 2), 0.9);
        }
        for c in 8..12 {
            assert_eq!(out.at(0, c, 2, 2), 0.0);
        }
    }

    #[test]
    fn compose_preserves_shape() {
        let mut r = rng(2);
        let net = FusionNet::two_stream(4, 16, 8, 2, &mut r).unwrap();
        for (w, h) in [(64, 64), (96, 64)] {
            let fg = rand_image(&mut r, w, h, 3);
            let bg = rand_image(&mut r, w, h, 3);
            let m = rand_mask(&mut r, w, h);
            let inv = crate::composite::invert_mask(&m);
            let out = net.compose(&fg, &m, &bg, &inv).unwrap();
            assert_eq!((out.width(), out.height(), out.channels()), (w, h, 3));
        }
    }

    #[test]
    fn zero_weights_yield_half_everywhere() {
        let mut r = rng(3);
        let mut net = FusionNet::two_stream(2, 4, 2, 1, &mut r).unwrap();
        zero_params(&mut net.params);
        let fg = rand_image(&mut r, 16, 16, 3);
        let bg = rand_image(&mut r, 16, 16, 3);
        let m = rand_mask(&mut r, 16, 16);
        let inv = crate::composite::invert_mask(&m);
        let out = net.compose(&fg, &m, &bg, &inv).unwrap();
        for &v in out.data() {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn outputs_stay_strictly_inside_unit_interval() {
        let mut r = rng(4);
        let net = FusionNet::two_stream(2, 4, 2, 1, &mut r).unwrap();
        let fg = rand_image(&mut r, 16, 16, 3);
        let bg = rand_image(&mut r, 16, 16, 3);
        let m = rand_mask(&mut r, 16, 16);
        let inv = crate::composite::invert_mask(&m);

        let mut g = Graph::new();
        let fg_v = g.leaf(Tensor::from_image(&fg));
        let m_v = g.leaf(Tensor::from_mask(&m));
        let bg_v = g.leaf(Tensor::from_image(&bg));
        let inv_v = g.leaf(Tensor::from_mask(&inv));
        let out = net.forward(&mut g, fg_v, m_v, bg_v, inv_v, false).unwrap();
        for &v in g.value(out).data() {
            assert!(v > 0.0 && v < 1.0, "{v} outside (0,1)");
        }
    }

    #[test]
    fn streams_are_parameter_disjoint() {
        // Perturbing a foreground-encoder weight must not change the
        // background stream's encoder output.
        let mut r = rng(5);
        let mut net = FusionNet::two_stream(2, 4, 2, 1, &mut r).unwrap();
        let fg = rand_image(&mut r, 16, 16, 3);
        let bg = rand_image(&mut r, 16, 16, 3);
        let m = rand_mask(&mut r, 16, 16);
        let inv = crate::composite::invert_mask(&m);

        let bottoms = |net: &FusionNet| -> (Tensor, Tensor) {
            let mut g = Graph::new();
            let fg_v = g.leaf(Tensor::from_image(&fg));
            let m_v = g.leaf(Tensor::from_mask(&m));
            let bg_v = g.leaf(Tensor::from_image(&bg));
            let inv_v = g.leaf(Tensor::from_mask(&inv));
            let (b, _) = net.forward_parts(&mut g, fg_v, m_v, bg_v, inv_v, false).unwrap();
            (g.value(b[0]).clone(), g.value(b[1]).clone())
        };

        let (fg_before, bg_before) = bottoms(&net);
        let mut w = net.params.get("fg.stem.w").unwrap().clone();
        w.data_mut()[0] += 10.0;
        net.params.set("fg.stem.w", w).unwrap();
        let (fg_after, bg_after) = bottoms(&net);

        assert_ne!(fg_before.data(), fg_after.data());
        assert_eq!(bg_before.data(), bg_after.data());
    }

    #[test]
    fn rejects_bad_spatial_dims_and_channels() {
        let mut r = rng(6);
        let net = FusionNet::two_stream(2, 4, 2, 1, &mut r).unwrap();
        // 18 is not a multiple of 4.
        let fg = rand_image(&mut r, 18, 16, 3);
        let bg = rand_image(&mut r, 18, 16, 3);
        let m = rand_mask(&mut r, 18, 16);
        assert!(net.compose(&fg, &m, &bg, &m).is_err());

        let fg4 = rand_image(&mut r, 16, 16, 4);
        let bg3 = rand_image(&mut r, 16, 16, 3);
        let m16 = rand_mask(&mut r, 16, 16);
        assert!(net.compose(&fg4, &m16, &bg3, &m16).is_err());

        let small = rand_mask(&mut r, 8, 8);
        assert!(net.compose(&bg3, &small, &bg3, &m16).is_err());
    }

    #[test]
    fn checkpoint_round_trip_reproduces_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let mut r = rng(7);
        let net = FusionNet::two_stream(2, 4, 2, 1, &mut r).unwrap();
        net.save(&path).unwrap();
        let loaded = FusionNet::from_checkpoint(&path).unwrap();
        assert_eq!(loaded.arch(), net.arch());

        let fg = rand_image(&mut r, 16, 16, 3);
        let bg = rand_image(&mut r, 16, 16, 3);
        let m = rand_mask(&mut r, 16, 16);
        let inv = crate::composite::invert_mask(&m);
        let a = net.compose(&fg, &m, &bg, &inv).unwrap();
        let b = loaded.compose(&fg, &m, &bg, &inv).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn refiner_checkpoint_is_not_a_compositor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("refine.ckpt");
        let mut r = rng(8);
        let refiner = RefineNet::new(2, 4, 2, 1, &mut r).unwrap();
        refiner.save(&path).unwrap();
        assert!(FusionNet::from_checkpoint(&path).is_err());
        assert!(RefineNet::from_checkpoint(&path).is_ok());
    }

    #[test]
    fn single_stream_matches_two_stream_parameters_roughly() {
        let mut r = rng(9);
        let two = FusionNet::two_stream(4, 16, 8, 2, &mut r).unwrap();
        // √2-widened single encoder lands near the two-stream count.
        let one = FusionNet::single_stream(4, 23, 11, 2, &mut r).unwrap();
        let (a, b) = (two.param_count() as f64, one.param_count() as f64);
        let ratio = a.max(b) / a.min(b);
        assert!(ratio < 1.25, "parameter counts {a} vs {b} diverge (x{ratio:.2})");
    }

    #[test]
    fn refiner_zero_weights_give_half_mask() {
        let mut r = rng(10);
        let mut net = RefineNet::new(2, 4, 2, 1, &mut r).unwrap();
        zero_params(&mut net.params);
        let img = rand_image(&mut r, 16, 16, 3);
        let raw = rand_mask(&mut r, 16, 16);
        let out = net.refine_mask(&img, &raw).unwrap();
        assert_eq!((out.width(), out.height()), (16, 16));
        for &v in out.data() {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn neural_refiner_plugs_into_multiscale_driver() {
        let mut r = rng(11);
        let net = RefineNet::new(2, 4, 2, 1, &mut r).unwrap();
        let refiner = NeuralRefiner { net: &net };
        let img = rand_image(&mut r, 20, 20, 3);
        let raw = rand_mask(&mut r, 20, 20);
        // Scales divisible by 2^levels keep the network happy.
        let out =
            crate::composite::refine_mask_multiscale(&img, &raw, &refiner, &[16, 32]).unwrap();
        assert_eq!((out.width(), out.height()), (20, 20));
    }
}

//! Composite training loss: pixel L1 plus a feature-space penalty.
//!
//! The feature penalty compares activations of a small *frozen* conv
//! stack at two scales. By default that stack is randomly initialized
//! from a fixed seed (random features still define a useful metric and
//! keep the loss differentiable); externally trained weights can be
//! loaded from a checkpoint instead.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{load_checkpoint, save_checkpoint, Graph, ParamStore, Var};

/// Default feature widths of the two levels.
const LEVEL1_CH: usize = 8;
const LEVEL2_CH: usize = 16;

/// Frozen two-level convolutional feature stack. Level 1 is a full-
/// resolution 3×3 conv + ReLU; level 2 downsamples by 2 (stride-2 conv)
/// and widens. Parameters never receive gradients.
pub struct FeatureExtractor {
    params: ParamStore,
}

impl FeatureExtractor {
    /// Deterministic random-feature extractor.
    pub fn random(seed: u64) -> FeatureExtractor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        params
            .init_conv("f1.w", [LEVEL1_CH, 3, 3, 3], &mut rng)
            .expect("fresh store");
        params.init_bias("f1.b", LEVEL1_CH).expect("fresh store");
        params
            .init_conv("f2.w", [LEVEL2_CH, LEVEL1_CH, 3, 3], &mut rng)
            .expect("fresh store");
        params.init_bias("f2.b", LEVEL2_CH).expect("fresh store");
        FeatureExtractor { params }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = vec![("arch".to_string(), "feature-extractor".to_string())];
        save_checkpoint(path, &self.params, &meta)
    }

    /// Load externally supplied weights. Channel widths are free as long
    /// as the two 3×3 conv layers chain (f1: 3 → c1, f2: c1 → c2).
    pub fn from_checkpoint(path: &Path) -> Result<FeatureExtractor> {
        let (params, _meta) = load_checkpoint(path)?;
        let f1 = params.get("f1.w").map_err(|_| {
            Error::CheckpointFormat("feature extractor needs parameter f1.w".into())
        })?;
        let [c1, in1, k1h, k1w] = f1.shape();
        let f2 = params.get("f2.w").map_err(|_| {
            Error::CheckpointFormat("feature extractor needs parameter f2.w".into())
        })?;
        let [c2, in2, k2h, k2w] = f2.shape();
        if in1 != 3 || in2 != c1 || [k1h, k1w, k2h, k2w] != [3, 3, 3, 3] {
            return Err(Error::CheckpointFormat(format!(
                "feature layers do not chain: f1 {:?}, f2 {:?}",
                f1.shape(),
                f2.shape()
            )));
        }
        for (name, ch) in [("f1.b", c1), ("f2.b", c2)] {
            let b = params.get(name).map_err(|_| {
                Error::CheckpointFormat(format!("feature extractor needs parameter {name}"))
            })?;
            if b.shape() != [1, ch, 1, 1] {
                return Err(Error::CheckpointFormat(format!(
                    "{name} has shape {:?}, expected [1,{ch},1,1]",
                    b.shape()
                )));
            }
        }
        Ok(FeatureExtractor { params })
    }

    /// Two feature maps of a 3-channel input: (full res, half res).
    pub fn features(&self, g: &mut Graph, x: Var) -> Result<(Var, Var)> {
        let w1 = g.frozen_param(&self.params, "f1.w")?;
        let b1 = g.frozen_param(&self.params, "f1.b")?;
        let w2 = g.frozen_param(&self.params, "f2.w")?;
        let b2 = g.frozen_param(&self.params, "f2.b")?;
        let y = g.conv2d(x, w1, 1, 1)?;
        let y = g.bias_add(y, b1)?;
        let f1 = g.relu(y);
        let y = g.conv2d(f1, w2, 2, 1)?;
        let y = g.bias_add(y, b2)?;
        let f2 = g.relu(y);
        Ok((f1, f2))
    }
}

/// Sum over both feature levels of the mean squared feature difference.
pub fn perceptual_loss(
    g: &mut Graph,
    extractor: &FeatureExtractor,
    pred: Var,
    target: Var,
) -> Result<Var> {
    if g.value(pred).shape() != g.value(target).shape() {
        return Err(Error::shape(
            "perceptual_loss",
            format!("{:?} vs {:?}", g.value(pred).shape(), g.value(target).shape()),
        ));
    }
    let (p1, p2) = extractor.features(g, pred)?;
    let (t1, t2) = extractor.features(g, target)?;
    let m1 = g.mse_loss(p1, t1)?;
    let m2 = g.mse_loss(p2, t2)?;
    g.add(m1, m2)
}

/// `l1 + lambda_p * perceptual`, returned together with both components
/// (handy for loss logging).
pub fn total_loss_parts(
    g: &mut Graph,
    extractor: &FeatureExtractor,
    pred: Var,
    target: Var,
    lambda_p: f64,
) -> Result<(Var, Var, Var)> {
    if lambda_p < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "perceptual weight must be >= 0, got {lambda_p}"
        )));
    }
    let l1 = g.l1_loss(pred, target)?;
    let perc = perceptual_loss(g, extractor, pred, target)?;
    let total = if lambda_p == 0.0 {
        // Keep the zero-weight graph exactly equal to plain L1.
        l1
    } else {
        let scaled = g.scale(perc, lambda_p);
        g.add(l1, scaled)?
    };
    Ok((total, l1, perc))
}

/// The training objective: `l1 + lambda_p * perceptual`.
pub fn total_loss(
    g: &mut Graph,
    extractor: &FeatureExtractor,
    pred: Var,
    target: Var,
    lambda_p: f64,
) -> Result<Var> {
    let (total, _, _) = total_loss_parts(g, extractor, pred, target, lambda_p)?;
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check_inputs, Tensor};
    use rand::{Rng, SeedableRng};

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
        let data = (0..shape.iter().product::<usize>())
            .map(|_| rng.gen_range(0.0..1.0))
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn identical_inputs_cost_nothing() {
        let fx = FeatureExtractor::random(7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, [1, 3, 8, 8]);
        let mut g = Graph::new();
        let a = g.leaf(x.clone());
        let b = g.leaf(x);
        let p = perceptual_loss(&mut g, &fx, a, b).unwrap();
        assert_eq!(g.scalar(p), 0.0);
        let t = total_loss(&mut g, &fx, a, b, 0.8).unwrap();
        assert_eq!(g.scalar(t), 0.0);
    }

    #[test]
    fn loss_is_nonnegative() {
        let fx = FeatureExtractor::random(7);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let x = rand_tensor(&mut rng, [1, 3, 8, 8]);
            let y = rand_tensor(&mut rng, [1, 3, 8, 8]);
            let mut g = Graph::new();
            let a = g.leaf(x);
            let b = g.leaf(y);
            let p = perceptual_loss(&mut g, &fx, a, b).unwrap();
            assert!(g.scalar(p) >= 0.0);
        }
    }

    #[test]
    fn zero_weight_equals_plain_l1() {
        let fx = FeatureExtractor::random(7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, [1, 3, 8, 8]);
        let y = rand_tensor(&mut rng, [1, 3, 8, 8]);
        let mut g = Graph::new();
        let a = g.leaf(x);
        let b = g.leaf(y);
        let total = total_loss(&mut g, &fx, a, b, 0.0).unwrap();
        let l1 = g.l1_loss(a, b).unwrap();
        assert_eq!(g.scalar(total).to_bits(), g.scalar(l1).to_bits());
    }

    #[test]
    fn composition_matches_separate_terms() {
        let fx = FeatureExtractor::random(7);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, [1, 3, 8, 8]);
        let y = rand_tensor(&mut rng, [1, 3, 8, 8]);
        let mut g = Graph::new();
        let a = g.leaf(x);
        let b = g.leaf(y);
        let (total, l1, perc) = total_loss_parts(&mut g, &fx, a, b, 0.8).unwrap();
        let expected = g.scalar(l1) + 0.8 * g.scalar(perc);
        assert!((g.scalar(total) - expected).abs() < 1e-9);
        assert!(g.scalar(total) > g.scalar(l1));
    }

    #[test]
    fn gradient_with_respect_to_prediction() {
        let fx = FeatureExtractor::random(7);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pred = rand_tensor(&mut rng, [1, 3, 8, 8]);
        let target = rand_tensor(&mut rng, [1, 3, 8, 8]);
        let err = grad_check_inputs(
            |g, vars| perceptual_loss(g, &fx, vars[0], vars[1]),
            &[pred, target],
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-3, "max rel err {err}");
    }

    #[test]
    fn extractor_is_frozen_and_deterministic() {
        let fx1 = FeatureExtractor::random(7);
        let fx2 = FeatureExtractor::random(7);
        for name in ["f1.w", "f1.b", "f2.w", "f2.b"] {
            assert_eq!(
                fx1.params.get(name).unwrap().data(),
                fx2.params.get(name).unwrap().data()
            );
        }

        // No extractor parameter may surface as trainable.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_tensor(&mut rng, [1, 3, 8, 8]);
        let y = rand_tensor(&mut rng, [1, 3, 8, 8]);
        let mut g = Graph::new();
        let a = g.input(x);
        let b = g.leaf(y);
        let p = perceptual_loss(&mut g, &fx1, a, b).unwrap();
        g.backward(p).unwrap();
        assert!(g.param_grads().is_empty());
        assert!(g.grad(a).is_some());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.ckpt");
        let fx = FeatureExtractor::random(7);
        fx.save(&path).unwrap();
        let loaded = FeatureExtractor::from_checkpoint(&path).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = rand_tensor(&mut rng, [1, 3, 8, 8]);
        let y = rand_tensor(&mut rng, [1, 3, 8, 8]);
        let mut g = Graph::new();
        let a = g.leaf(x);
        let b = g.leaf(y);
        let p1 = perceptual_loss(&mut g, &fx, a, b).unwrap();
        let p2 = perceptual_loss(&mut g, &loaded, a, b).unwrap();
        assert_eq!(g.scalar(p1).to_bits(), g.scalar(p2).to_bits());
    }

    #[test]
    fn rejects_mismatched_shapes_and_bad_weights() {
        let fx = FeatureExtractor::random(7);
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros([1, 3, 8, 8]));
        let b = g.leaf(Tensor::zeros([1, 3, 4, 4]));
        assert!(perceptual_loss(&mut g, &fx, a, b).is_err());

        // A checkpoint whose layers do not chain must be refused.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        store.init_conv("f1.w", [8, 3, 3, 3], &mut rng).unwrap();
        store.init_bias("f1.b", 8).unwrap();
        store.init_conv("f2.w", [16, 4, 3, 3], &mut rng).unwrap();
        store.init_bias("f2.b", 16).unwrap();
        save_checkpoint(&path, &store, &[]).unwrap();
        assert!(FeatureExtractor::from_checkpoint(&path).is_err());
    }
}

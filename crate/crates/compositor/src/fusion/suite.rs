//! Finite-difference audit of the whole differentiable surface.
//!
//! Each entry checks one operation in isolation with its own tiny
//! tensors, so a regression names the exact op that broke; the final
//! entry pushes a complete two-stream network plus the composite loss
//! through the same checker. Inputs are seeded and sized to stay clear
//! of ReLU/L1 kinks at the default probe step, which keeps central
//! differences trustworthy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{run_encdec, total_loss_parts, Arch, FeatureExtractor};
use crate::error::Result;
use crate::nn::{grad_check_inputs, grad_check_params, Graph, ParamStore, Tensor, Var};

/// One named check and the worst relative error it measured.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub rel_err: f64,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).expect("length follows from shape")
}

/// Values in `[lo, hi]` with random sign; keeps ReLU probes away from 0.
fn rand_signed(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.gen_range(lo..hi);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("length follows from shape")
}

/// Reduce an arbitrary tensor to a scalar through MSE against zeros;
/// linear-free so it exercises the checked op's backward non-trivially.
fn to_scalar(g: &mut Graph, y: Var) -> Result<Var> {
    let zeros = g.leaf(Tensor::zeros(g.value(y).shape()));
    g.mse_loss(y, zeros)
}

/// Gradient checks for every graph operation in isolation. `h` is the
/// central-difference step (1e-3 is a good default).
pub fn op_suite(h: f64) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let mut out = Vec::new();

    let x = rand_tensor(&mut rng, [2, 3, 6, 5], -1.0, 1.0);
    let w = rand_tensor(&mut rng, [4, 3, 3, 3], -0.5, 0.5);
    out.push(SuiteEntry {
        name: "conv2d",
        rel_err: grad_check_inputs(
            |g, v| {
                let y = g.conv2d(v[0], v[1], 1, 1)?;
                to_scalar(g, y)
            },
            &[x, w],
            h,
        )?,
    });

    let x = rand_tensor(&mut rng, [1, 3, 8, 8], -1.0, 1.0);
    let w = rand_tensor(&mut rng, [2, 3, 3, 3], -0.5, 0.5);
    out.push(SuiteEntry {
        name: "conv2d-stride2",
        rel_err: grad_check_inputs(
            |g, v| {
                let y = g.conv2d(v[0], v[1], 2, 1)?;
                to_scalar(g, y)
            },
            &[x, w],
            h,
        )?,
    });

    let x = rand_tensor(&mut rng, [1, 4, 4, 4], -1.0, 1.0);
    let w = rand_tensor(&mut rng, [4, 3, 4, 4], -0.5, 0.5);
    out.push(SuiteEntry {
        name: "tconv2d",
        rel_err: grad_check_inputs(
            |g, v| {
                let y = g.tconv2d(v[0], v[1], 2, 1)?;
                to_scalar(g, y)
            },
            &[x, w],
            h,
        )?,
    });

    let x = rand_tensor(&mut rng, [2, 3, 4, 4], -1.0, 1.0);
    let b = rand_tensor(&mut rng, [1, 3, 1, 1], -0.4, 0.4);
    out.push(SuiteEntry {
        name: "bias-add",
        rel_err: grad_check_inputs(
            |g, v| {
                let y = g.bias_add(v[0], v[1])?;
                to_scalar(g, y)
            },
            &[x, b],
            h,
        )?,
    });

    // Magnitudes stay above 20x the probe step so no probe crosses 0.
    let x = rand_signed(&mut rng, [2, 4, 3, 3], 20.0 * h, 1.0f64.max(25.0 * h));
    out.push(SuiteEntry {
        name: "relu",
        rel_err: grad_check_inputs(
            |g, v| {
                let y = g.relu(v[0]);
                to_scalar(g, y)
            },
            &[x],
            h,
        )?,
    });

    let x = rand_tensor(&mut rng, [2, 3, 4, 4], -2.0, 2.0);
    out.push(SuiteEntry {
        name: "sigmoid",
        rel_err: grad_check_inputs(
            |g, v| {
                let y = g.sigmoid(v[0]);
                to_scalar(g, y)
            },
            &[x],
            h,
        )?,
    });

    let a = rand_tensor(&mut rng, [1, 2, 4, 4], -1.0, 1.0);
    let b = rand_tensor(&mut rng, [1, 3, 4, 4], -1.0, 1.0);
    out.push(SuiteEntry {
        name: "concat",
        rel_err: grad_check_inputs(
            |g, v| {
                let y = g.concat(&[v[0], v[1]])?;
                let y = g.scale(y, 1.5);
                to_scalar(g, y)
            },
            &[a, b],
            h,
        )?,
    });

    let a = rand_tensor(&mut rng, [2, 3, 4, 4], -1.0, 1.0);
    let b = rand_tensor(&mut rng, [2, 3, 4, 4], -1.0, 1.0);
    out.push(SuiteEntry {
        name: "add",
        rel_err: grad_check_inputs(
            |g, v| {
                let y = g.add(v[0], v[1])?;
                to_scalar(g, y)
            },
            &[a, b],
            h,
        )?,
    });

    let x = rand_tensor(&mut rng, [2, 3, 4, 4], -1.0, 1.0);
    out.push(SuiteEntry {
        name: "scale",
        rel_err: grad_check_inputs(
            |g, v| {
                let y = g.scale(v[0], -0.7);
                to_scalar(g, y)
            },
            &[x],
            h,
        )?,
    });

    // Disjoint value ranges keep |pred - target| >= 0.2, clear of the
    // kink at equality.
    let p = rand_tensor(&mut rng, [2, 3, 4, 4], 0.1, 0.4);
    let t = rand_tensor(&mut rng, [2, 3, 4, 4], 0.6, 0.9);
    out.push(SuiteEntry {
        name: "l1-loss",
        rel_err: grad_check_inputs(|g, v| g.l1_loss(v[0], v[1]), &[p, t], h)?,
    });

    let p = rand_tensor(&mut rng, [2, 3, 4, 4], -1.0, 1.0);
    let t = rand_tensor(&mut rng, [2, 3, 4, 4], 0.0, 1.0);
    out.push(SuiteEntry {
        name: "mse-loss",
        rel_err: grad_check_inputs(|g, v| g.mse_loss(v[0], v[1]), &[p, t], h)?,
    });

    // Predictions well inside (0, 1) so the epsilon clamp stays inert.
    let p = rand_tensor(&mut rng, [1, 3, 4, 4], 0.15, 0.85);
    let t = rand_tensor(&mut rng, [1, 3, 4, 4], 0.1, 0.9);
    out.push(SuiteEntry {
        name: "cross-entropy",
        rel_err: grad_check_inputs(|g, v| g.cross_entropy(v[0], v[1]), &[p, t], h)?,
    });

    let mut store = ParamStore::new();
    store.init_conv("w", [3, 2, 3, 3], &mut rng)?;
    store.init_bias("b", 3)?;
    store.set("b", rand_tensor(&mut rng, [1, 3, 1, 1], 0.05, 0.2))?;
    let x = rand_tensor(&mut rng, [1, 2, 6, 6], -1.0, 1.0);
    let t = rand_tensor(&mut rng, [1, 3, 6, 6], 0.1, 0.9);
    out.push(SuiteEntry {
        name: "param-path",
        rel_err: grad_check_params(
            |g, store| {
                let xv = g.leaf(x.clone());
                let tv = g.leaf(t.clone());
                let w = g.param(store, "w")?;
                let b = g.param(store, "b")?;
                let y = g.conv2d(xv, w, 1, 1)?;
                let y = g.bias_add(y, b)?;
                let y = g.sigmoid(y);
                g.mse_loss(y, tv)
            },
            &mut store,
            h,
        )?,
    });

    Ok(out)
}

/// Gradient check of a complete two-stream network with the full
/// `l1 + 0.8 * perceptual` objective, probing every trainable parameter.
pub fn net_suite(h: f64) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF00D);
    let arch = Arch {
        streams: 2,
        in_channels: 4,
        out_channels: 3,
        levels: 2,
        base: 2,
        growth: 1,
        db_layers: 1,
    };
    let mut store = arch.init_params(&mut rng)?;
    // Condition the probe point. A fresh init spreads pre-activations
    // across zero, and any probe that pushes one over a ReLU kink makes
    // the central difference report a false mismatch. Shrinking the
    // weights and giving every bias a large mixed-sign offset keeps each
    // pre-activation orders of magnitude further from zero than any
    // single-coordinate probe can reach, while both ReLU branches stay
    // populated.
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    for name in names {
        if name.ends_with(".w") {
            for v in store.get_mut(&name)?.data_mut() {
                *v *= 0.1;
            }
        } else {
            let shape = store.get(&name)?.shape();
            store.set(&name, rand_signed(&mut rng, shape, 0.5, 0.8))?;
        }
    }
    let extractor = FeatureExtractor::random(41);

    let fg = rand_tensor(&mut rng, [1, 3, 8, 8], 0.0, 1.0);
    let fgm = rand_tensor(&mut rng, [1, 1, 8, 8], 0.0, 1.0);
    let bg = rand_tensor(&mut rng, [1, 3, 8, 8], 0.0, 1.0);
    let bgm = rand_tensor(&mut rng, [1, 1, 8, 8], 0.0, 1.0);

    let forward = |g: &mut Graph, store: &ParamStore, trainable: bool| -> Result<Var> {
        let fgv = g.leaf(fg.clone());
        let fgmv = g.leaf(fgm.clone());
        let bgv = g.leaf(bg.clone());
        let bgmv = g.leaf(bgm.clone());
        let s0 = g.concat(&[fgv, fgmv])?;
        let s1 = g.concat(&[bgv, bgmv])?;
        let (_, head) = run_encdec(&arch, g, store, &[s0, s1], trainable)?;
        Ok(g.sigmoid(head))
    };

    // Target = the net's own initial prediction pushed 0.15 away per
    // coordinate: every L1 term then keeps its sign under any probe, so
    // the kink at pred == target is unreachable.
    let target = {
        let mut g = Graph::new();
        let pred = forward(&mut g, &store, false)?;
        let data = g
            .value(pred)
            .data()
            .iter()
            .map(|&p| if p < 0.5 { p + 0.15 } else { p - 0.15 })
            .collect();
        Tensor::from_vec([1, 3, 8, 8], data)?
    };

    let rel_err = grad_check_params(
        |g, store| {
            let pred = forward(g, store, true)?;
            let tv = g.leaf(target.clone());
            let (total, _, _) = total_loss_parts(g, &extractor, pred, tv, 0.8)?;
            Ok(total)
        },
        &mut store,
        h,
    )?;

    Ok(vec![SuiteEntry { name: "two-stream-net-with-loss", rel_err }])
}

/// Everything: the per-op checks followed by the full-network check.
pub fn gradient_suite(h: f64) -> Result<Vec<SuiteEntry>> {
    let mut out = op_suite(h)?;
    out.extend(net_suite(h)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_check_passes_at_default_step() {
        let entries = op_suite(1e-3).unwrap();
        assert_eq!(entries.len(), 13);
        for e in &entries {
            assert!(e.rel_err < 1e-3, "{}: rel err {}", e.name, e.rel_err);
        }
    }

    #[test]
    fn full_network_check_passes_at_default_step() {
        let entries = net_suite(1e-3).unwrap();
        assert_eq!(entries.len(), 1);
        assert!(
            entries[0].rel_err < 1e-3,
            "{}: rel err {}",
            entries[0].name,
            entries[0].rel_err
        );
    }

    #[test]
    fn combined_suite_is_ops_then_net() {
        let all = gradient_suite(1e-3).unwrap();
        assert_eq!(all.len(), 14);
        assert_eq!(all.first().unwrap().name, "conv2d");
        assert_eq!(all.last().unwrap().name, "two-stream-net-with-loss");
    }
}

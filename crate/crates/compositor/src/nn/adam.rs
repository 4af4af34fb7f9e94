//! Bias-corrected ADAM updates.

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 2e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> AdamConfig {
        AdamConfig { lr, ..Default::default() }
    }
}

/// Apply one ADAM step to every `(name, gradient)` pair. Parameters not
/// named keep their state untouched (their step counts do not advance).
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[(String, Tensor)],
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, grad) in grads {
        let p = store.entry_mut(name)?;
        if p.value.shape() != grad.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("{name:?}: param {:?} vs grad {:?}", p.value.shape(), grad.shape()),
            ));
        }
        p.step += 1;
        let t = p.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for ((w, g), (m, v)) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(p.m.iter_mut().zip(p.v.iter_mut()))
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(value: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.register("w", Tensor::scalar(value)).unwrap();
        store
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut store = single_param(0.37);
        adam_step(&mut store, &[("w".into(), Tensor::scalar(0.0))], &AdamConfig::default())
            .unwrap();
        assert_eq!(store.get("w").unwrap().item(), 0.37);
    }

    #[test]
    fn first_step_moves_by_lr_in_gradient_direction() {
        // Bias correction makes m_hat = g and v_hat = g^2 on step one, so
        // the update is lr * g / (|g| + eps) ~= lr * sign(g).
        let cfg = AdamConfig::default();
        for g in [3.0, -0.004] {
            let mut store = single_param(1.0);
            adam_step(&mut store, &[("w".into(), Tensor::scalar(g))], &cfg).unwrap();
            let got = store.get("w").unwrap().item();
            let want = 1.0 - cfg.lr * g.signum();
            assert!((got - want).abs() < 1e-8, "g={g}: {got} vs {want}");
        }
    }

    #[test]
    fn two_steps_match_scalar_reference_trace() {
        // Hand-rolled scalar ADAM, same constants, two steps with a
        // constant gradient.
        let cfg = AdamConfig { lr: 0.1, ..Default::default() };
        let g = 0.5f64;
        let (mut w, mut m, mut v) = (2.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let m_hat = m / (1.0 - cfg.beta1.powi(t));
            let v_hat = v / (1.0 - cfg.beta2.powi(t));
            w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }

        let mut store = single_param(2.0);
        for _ in 0..2 {
            adam_step(&mut store, &[("w".into(), Tensor::scalar(g))], &cfg).unwrap();
        }
        let got = store.get("w").unwrap().item();
        assert!((got - w).abs() < 1e-9, "{got} vs {w}");
    }

    #[test]
    fn step_counts_advance_per_parameter() {
        let mut store = ParamStore::new();
        store.register("a", Tensor::scalar(0.0)).unwrap();
        store.register("b", Tensor::scalar(0.0)).unwrap();
        adam_step(&mut store, &[("a".into(), Tensor::scalar(1.0))], &AdamConfig::default())
            .unwrap();
        assert_eq!(store.entry_mut("a").unwrap().step, 1);
        assert_eq!(store.entry_mut("b").unwrap().step, 0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::zeros([1, 2, 1, 1])).unwrap();
        let bad = adam_step(
            &mut store,
            &[("w".into(), Tensor::zeros([1, 3, 1, 1]))],
            &AdamConfig::default(),
        );
        assert!(bad.is_err());
    }
}

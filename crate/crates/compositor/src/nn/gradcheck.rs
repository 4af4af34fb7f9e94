//! Finite-difference verification of reverse-mode gradients.
//!
//! Both checkers rebuild the graph from scratch for every probe, so the
//! function under test must be deterministic. Cost is `2 * numel` forward
//! passes per checked tensor — keep probe shapes tiny.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn expect_scalar(g: &Graph, v: Var) -> Result<f64> {
    if !g.value(v).is_scalar() {
        return Err(Error::shape(
            "grad_check",
            format!("function must be scalar-valued, got {:?}", g.value(v).shape()),
        ));
    }
    Ok(g.scalar(v))
}

/// Max relative error between backward gradients and central differences,
/// taken over every coordinate of every input tensor. `build` receives
/// the inputs as differentiable graph variables in the given order.
pub fn grad_check_inputs<F>(build: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    // Analytic pass.
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    expect_scalar(&g, out)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| match g.grad(v) {
            Some(grad) => grad.data().to_vec(),
            None => vec![0.0; t.numel()],
        })
        .collect();

    let eval = |probe: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = probe.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        expect_scalar(&g, out)
    };

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let orig = t.data()[j];
            probe[i].data_mut()[j] = orig + h;
            let f_plus = eval(&probe)?;
            probe[i].data_mut()[j] = orig - h;
            let f_minus = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (f_plus - f_minus) / (2.0 * h);
            worst = worst.max(rel_err(analytic[i][j], numeric));
        }
    }
    Ok(worst)
}

/// Same check, but over every parameter the function actually uses
/// (anything reported by [`Graph::param_grads`]). The store is restored
/// to its original values before returning.
pub fn grad_check_params<F>(build: F, store: &mut ParamStore, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = build(&mut g, store)?;
    expect_scalar(&g, out)?;
    g.backward(out)?;
    let grads = g.param_grads();
    if grads.is_empty() {
        return Err(Error::InvalidArgument(
            "grad_check_params: function uses no trainable parameters".into(),
        ));
    }

    let mut worst = 0.0f64;
    for (name, analytic) in &grads {
        for j in 0..analytic.numel() {
            let orig = store.get(name)?.data()[j];

            store.get_mut(name)?.data_mut()[j] = orig + h;
            let mut g = Graph::new();
            let out = build(&mut g, store)?;
            let f_plus = expect_scalar(&g, out)?;

            store.get_mut(name)?.data_mut()[j] = orig - h;
            let mut g = Graph::new();
            let out = build(&mut g, store)?;
            let f_minus = expect_scalar(&g, out)?;

            store.get_mut(name)?.data_mut()[j] = orig;
            let numeric = (f_plus - f_minus) / (2.0 * h);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    Ok(worst)
}

//! Define-by-run reverse-mode differentiation over a flat node arena.
//!
//! Building an op runs its forward pass immediately and appends a node;
//! construction order is therefore already a topological order, and
//! [`Graph::backward`] just walks the arena in reverse. Gradients flow
//! only into subgraphs that need them: parameters registered through
//! [`Graph::param`] and leaves created with [`Graph::input`].

use super::conv::{col2im, conv_out_dim, im2col, matmul, matmul_nt, matmul_tn, tconv_out_dim};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in one [`Graph`]. Only valid for the graph that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(String),
    Conv2d { x: Var, w: Var, stride: usize, pad: usize },
    TConv2d { x: Var, w: Var, stride: usize, pad: usize },
    BiasAdd { x: Var, b: Var },
    Relu { x: Var },
    Sigmoid { x: Var },
    Concat { xs: Vec<Var> },
    Add { a: Var, b: Var },
    Scale { x: Var, k: f64 },
    L1 { a: Var, b: Var },
    Mse { a: Var, b: Var },
    CrossEntropy { p: Var, t: Var },
}

struct Node {
    value: Tensor,
    needs_grad: bool,
    op: Op,
}

/// Probability clamp for the cross-entropy logs.
const CE_EPS: f64 = 1e-7;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> Var {
        self.nodes.push(Node { value, needs_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; no gradient is tracked through it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Differentiable input; receives a gradient on backward.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Trainable parameter: the stored tensor is copied in and its
    /// gradient is reported under `name` by [`Graph::param_grads`].
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store.get(name)?.clone();
        Ok(self.push(value, true, Op::Param(name.to_string())))
    }

    /// Frozen parameter: used in the forward pass, gradients flow *through*
    /// consumers back to other inputs but none is accumulated for it.
    pub fn frozen_param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store.get(name)?.clone();
        Ok(self.push(value, false, Op::Leaf))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// Gradient computed by the last [`Graph::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of all named parameters, in first-use order; a parameter
    /// reused by several nodes gets one summed entry.
    pub fn param_grads(&self) -> Vec<(String, Tensor)> {
        let mut order: Vec<String> = Vec::new();
        let mut acc: std::collections::HashMap<String, Tensor> = std::collections::HashMap::new();
        for (node, grad) in self.nodes.iter().zip(&self.grads) {
            if let (Op::Param(name), Some(g)) = (&node.op, grad) {
                match acc.get_mut(name) {
                    Some(total) => {
                        for (t, v) in total.data_mut().iter_mut().zip(g.data()) {
                            *t += v;
                        }
                    }
                    None => {
                        order.push(name.clone());
                        acc.insert(name.clone(), g.clone());
                    }
                }
            }
        }
        order.into_iter().map(|n| {
            let g = acc.remove(&n).expect("accumulated above");
            (n, g)
        }).collect()
    }

    // ---- forward ops ----

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        let [n, ci, h, wd] = self.value(x).shape();
        let [co, ci_w, kh, kw] = self.value(w).shape();
        if ci != ci_w {
            return Err(Error::shape(
                "conv2d",
                format!("input has {ci} channels, kernel expects {ci_w}"),
            ));
        }
        let oh = conv_out_dim(h, kh, stride, pad).filter(|&d| d > 0);
        let ow = conv_out_dim(wd, kw, stride, pad).filter(|&d| d > 0);
        let (oh, ow) = match (oh, ow) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    format!("kernel {kh}x{kw} stride {stride} pad {pad} does not fit {h}x{wd}"),
                ))
            }
        };
        let mut out = Tensor::zeros([n, co, oh, ow]);
        let xt = self.value(x);
        let wt = self.value(w);
        let in_plane = ci * h * wd;
        let out_plane = co * oh * ow;
        for b in 0..n {
            let cols = im2col(
                &xt.data()[b * in_plane..(b + 1) * in_plane],
                ci, h, wd, kh, kw, stride, pad, oh, ow,
            );
            let y = matmul(wt.data(), &cols, co, ci * kh * kw, oh * ow);
            out.data_mut()[b * out_plane..(b + 1) * out_plane].copy_from_slice(&y);
        }
        let needs = self.needs(x) || self.needs(w);
        Ok(self.push(out, needs, Op::Conv2d { x, w, stride, pad }))
    }

    pub fn tconv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::InvalidArgument("tconv2d stride must be >= 1".into()));
        }
        let [n, ci, h, wd] = self.value(x).shape();
        let [ci_w, co, kh, kw] = self.value(w).shape();
        if ci != ci_w {
            return Err(Error::shape(
                "tconv2d",
                format!("input has {ci} channels, kernel expects {ci_w}"),
            ));
        }
        let oh = tconv_out_dim(h, kh, stride, pad).filter(|&d| d > 0);
        let ow = tconv_out_dim(wd, kw, stride, pad).filter(|&d| d > 0);
        let (oh, ow) = match (oh, ow) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::shape(
                    "tconv2d",
                    format!("kernel {kh}x{kw} stride {stride} pad {pad} collapses {h}x{wd}"),
                ))
            }
        };
        let mut out = Tensor::zeros([n, co, oh, ow]);
        let xt = self.value(x);
        let wt = self.value(w);
        let in_plane = ci * h * wd;
        let out_plane = co * oh * ow;
        for b in 0..n {
            // cols[(co,ky,kx), (iy,ix)] = sum_ci W[ci,(co,ky,kx)] * x[ci,(iy,ix)]
            let cols = matmul_tn(
                wt.data(),
                &xt.data()[b * in_plane..(b + 1) * in_plane],
                co * kh * kw,
                ci,
                h * wd,
            );
            let y = col2im(&cols, co, oh, ow, kh, kw, stride, pad, h, wd);
            out.data_mut()[b * out_plane..(b + 1) * out_plane].copy_from_slice(&y);
        }
        let needs = self.needs(x) || self.needs(w);
        Ok(self.push(out, needs, Op::TConv2d { x, w, stride, pad }))
    }

    /// Add a per-channel bias `[1,c,1,1]`, broadcast over batch and space.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).shape();
        let bs = self.value(b).shape();
        if bs != [1, c, 1, 1] {
            return Err(Error::shape(
                "bias_add",
                format!("bias must be [1,{c},1,1], got {bs:?}"),
            ));
        }
        let mut out = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        let plane = h * w;
        for bi in 0..n {
            for ci in 0..c {
                let base = (bi * c + ci) * plane;
                for v in &mut out.data_mut()[base..base + plane] {
                    *v += bias[ci];
                }
            }
        }
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(out, needs, Op::BiasAdd { x, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let needs = self.needs(x);
        self.push(out, needs, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = 1.0 / (1.0 + (-*v).exp());
        }
        let needs = self.needs(x);
        self.push(out, needs, Op::Sigmoid { x })
    }

    /// Concatenate along the channel axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let [n, _, h, w] = self.value(first).shape();
        let mut channels = 0;
        for &v in xs {
            let [vn, vc, vh, vw] = self.value(v).shape();
            if vn != n || vh != h || vw != w {
                return Err(Error::shape(
                    "concat",
                    format!("want [{n},*,{h},{w}], got {:?}", self.value(v).shape()),
                ));
            }
            channels += vc;
        }
        let mut out = Tensor::zeros([n, channels, h, w]);
        let plane = h * w;
        for b in 0..n {
            let mut c0 = 0;
            for &v in xs {
                let [_, vc, ..] = self.value(v).shape();
                let src = &self.value(v).data()[b * vc * plane..(b + 1) * vc * plane];
                let dst_base = (b * channels + c0) * plane;
                out.data_mut()[dst_base..dst_base + vc * plane].copy_from_slice(src);
                c0 += vc;
            }
        }
        let needs = xs.iter().any(|&v| self.needs(v));
        Ok(self.push(out, needs, Op::Concat { xs: xs.to_vec() }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o += v;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, needs, Op::Add { a, b }))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v *= k;
        }
        let needs = self.needs(x);
        self.push(out, needs, Op::Scale { x, k })
    }

    /// Mean absolute difference (scalar output).
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.check_same("l1_loss", pred, target)?;
        let n = self.value(pred).numel() as f64;
        let sum: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        let needs = self.needs(pred) || self.needs(target);
        Ok(self.push(Tensor::scalar(sum / n), needs, Op::L1 { a: pred, b: target }))
    }

    /// Mean squared difference (scalar output).
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.check_same("mse_loss", pred, target)?;
        let n = self.value(pred).numel() as f64;
        let sum: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let needs = self.needs(pred) || self.needs(target);
        Ok(self.push(Tensor::scalar(sum / n), needs, Op::Mse { a: pred, b: target }))
    }

    /// Mean binary cross-entropy; probabilities are clamped to
    /// `[1e-7, 1-1e-7]` before the logs.
    pub fn cross_entropy(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.check_same("cross_entropy", pred, target)?;
        let n = self.value(pred).numel() as f64;
        let sum: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(&p, &t)| {
                let p = p.clamp(CE_EPS, 1.0 - CE_EPS);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum();
        let needs = self.needs(pred) || self.needs(target);
        Ok(self.push(Tensor::scalar(sum / n), needs, Op::CrossEntropy { p: pred, t: target }))
    }

    fn check_same(&self, context: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                context,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    // ---- backward ----

    /// Reverse sweep from a scalar `loss` node; gradients are then
    /// available via [`Graph::grad`] / [`Graph::param_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.nodes[loss.0].value.shape()),
            ));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..self.nodes.len()).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(gy) = self.grads[idx].take() else { continue };
            self.propagate(idx, &gy);
            // Keep the gradient unless this is an interior node nobody
            // will read; leaves and params are what callers query.
            self.grads[idx] = Some(gy);
        }
        Ok(())
    }

    fn accum(&mut self, v: Var, g: Tensor) {
        match &mut self.grads[v.0] {
            Some(total) => {
                for (t, x) in total.data_mut().iter_mut().zip(g.data()) {
                    *t += x;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&mut self, idx: usize, gy: &Tensor) {
        match &self.nodes[idx].op {
            Op::Leaf | Op::Param(_) => {}
            &Op::Conv2d { x, w, stride, pad } => {
                let [n, ci, h, wd] = self.value(x).shape();
                let [co, _, kh, kw] = self.value(w).shape();
                let [_, _, oh, ow] = gy.shape();
                let in_plane = ci * h * wd;
                let out_plane = co * oh * ow;
                let kdim = ci * kh * kw;
                if self.needs(x) {
                    let mut dx = Tensor::zeros([n, ci, h, wd]);
                    for b in 0..n {
                        let dcols = matmul_tn(
                            self.value(w).data(),
                            &gy.data()[b * out_plane..(b + 1) * out_plane],
                            kdim,
                            co,
                            oh * ow,
                        );
                        let d = col2im(&dcols, ci, h, wd, kh, kw, stride, pad, oh, ow);
                        dx.data_mut()[b * in_plane..(b + 1) * in_plane].copy_from_slice(&d);
                    }
                    self.accum(x, dx);
                }
                if self.needs(w) {
                    let mut dw = Tensor::zeros(self.value(w).shape());
                    for b in 0..n {
                        let cols = im2col(
                            &self.value(x).data()[b * in_plane..(b + 1) * in_plane],
                            ci, h, wd, kh, kw, stride, pad, oh, ow,
                        );
                        let d = matmul_nt(
                            &gy.data()[b * out_plane..(b + 1) * out_plane],
                            &cols,
                            co,
                            oh * ow,
                            kdim,
                        );
                        for (t, v) in dw.data_mut().iter_mut().zip(&d) {
                            *t += v;
                        }
                    }
                    self.accum(w, dw);
                }
            }
            &Op::TConv2d { x, w, stride, pad } => {
                let [n, ci, h, wd] = self.value(x).shape();
                let [_, co, kh, kw] = self.value(w).shape();
                let [_, _, oh, ow] = gy.shape();
                let in_plane = ci * h * wd;
                let out_plane = co * oh * ow;
                let kdim = co * kh * kw;
                let mut dx = self.needs(x).then(|| Tensor::zeros([n, ci, h, wd]));
                let mut dw = self.needs(w).then(|| Tensor::zeros(self.value(w).shape()));
                for b in 0..n {
                    // Both gradients consume the same gathered view of
                    // the output gradient.
                    let cols = im2col(
                        &gy.data()[b * out_plane..(b + 1) * out_plane],
                        co, oh, ow, kh, kw, stride, pad, h, wd,
                    );
                    if let Some(dx) = &mut dx {
                        let d = matmul(self.nodes[w.0].value.data(), &cols, ci, kdim, h * wd);
                        dx.data_mut()[b * in_plane..(b + 1) * in_plane].copy_from_slice(&d);
                    }
                    if let Some(dw) = &mut dw {
                        let d = matmul_nt(
                            &self.nodes[x.0].value.data()[b * in_plane..(b + 1) * in_plane],
                            &cols,
                            ci,
                            h * wd,
                            kdim,
                        );
                        for (t, v) in dw.data_mut().iter_mut().zip(&d) {
                            *t += v;
                        }
                    }
                }
                if let Some(dx) = dx {
                    self.accum(x, dx);
                }
                if let Some(dw) = dw {
                    self.accum(w, dw);
                }
            }
            &Op::BiasAdd { x, b } => {
                let [n, c, h, w] = gy.shape();
                if self.needs(x) {
                    self.accum(x, gy.clone());
                }
                if self.needs(b) {
                    let mut db = Tensor::zeros([1, c, 1, 1]);
                    let plane = h * w;
                    for bi in 0..n {
                        for ci in 0..c {
                            let base = (bi * c + ci) * plane;
                            let s: f64 = gy.data()[base..base + plane].iter().sum();
                            db.data_mut()[ci] += s;
                        }
                    }
                    self.accum(b, db);
                }
            }
            &Op::Relu { x } => {
                let mut dx = gy.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(self.value(x).data()) {
                    if v <= 0.0 {
                        *d = 0.0;
                    }
                }
                self.accum(x, dx);
            }
            &Op::Sigmoid { x } => {
                let mut dx = gy.clone();
                for (d, &s) in dx.data_mut().iter_mut().zip(self.nodes[idx].value.data()) {
                    *d *= s * (1.0 - s);
                }
                self.accum(x, dx);
            }
            Op::Concat { xs } => {
                let xs = xs.clone();
                let [n, _, h, w] = gy.shape();
                let plane = h * w;
                let total: usize = gy.shape()[1];
                let mut c0 = 0;
                for v in xs {
                    let [_, vc, ..] = self.value(v).shape();
                    if self.needs(v) {
                        let mut dv = Tensor::zeros([n, vc, h, w]);
                        for b in 0..n {
                            let src = ((b * total) + c0) * plane;
                            let dst = b * vc * plane;
                            dv.data_mut()[dst..dst + vc * plane]
                                .copy_from_slice(&gy.data()[src..src + vc * plane]);
                        }
                        self.accum(v, dv);
                    }
                    c0 += vc;
                }
            }
            &Op::Add { a, b } => {
                if self.needs(a) {
                    self.accum(a, gy.clone());
                }
                if self.needs(b) {
                    self.accum(b, gy.clone());
                }
            }
            &Op::Scale { x, k } => {
                let mut dx = gy.clone();
                for d in dx.data_mut() {
                    *d *= k;
                }
                self.accum(x, dx);
            }
            &Op::L1 { a, b } => {
                let g = gy.item();
                let n = self.value(a).numel() as f64;
                let diff: Vec<f64> = self
                    .value(a)
                    .data()
                    .iter()
                    .zip(self.value(b).data())
                    .map(|(&x, &y)| {
                        // Subgradient 0 at the kink.
                        if x > y { g / n } else if x < y { -g / n } else { 0.0 }
                    })
                    .collect();
                let shape = self.value(a).shape();
                if self.needs(a) {
                    self.accum(a, Tensor::from_vec(shape, diff.clone()).expect("same len"));
                }
                if self.needs(b) {
                    let neg = diff.iter().map(|v| -v).collect();
                    self.accum(b, Tensor::from_vec(shape, neg).expect("same len"));
                }
            }
            &Op::Mse { a, b } => {
                let g = gy.item();
                let n = self.value(a).numel() as f64;
                let diff: Vec<f64> = self
                    .value(a)
                    .data()
                    .iter()
                    .zip(self.value(b).data())
                    .map(|(&x, &y)| 2.0 * (x - y) * g / n)
                    .collect();
                let shape = self.value(a).shape();
                if self.needs(a) {
                    self.accum(a, Tensor::from_vec(shape, diff.clone()).expect("same len"));
                }
                if self.needs(b) {
                    let neg = diff.iter().map(|v| -v).collect();
                    self.accum(b, Tensor::from_vec(shape, neg).expect("same len"));
                }
            }
            &Op::CrossEntropy { p, t } => {
                let g = gy.item();
                let n = self.value(p).numel() as f64;
                let shape = self.value(p).shape();
                if self.needs(p) {
                    let dp: Vec<f64> = self
                        .value(p)
                        .data()
                        .iter()
                        .zip(self.value(t).data())
                        .map(|(&pv, &tv)| {
                            // Clamped coordinates sit on a constant piece
                            // of the loss; their gradient is zero.
                            if pv < CE_EPS || pv > 1.0 - CE_EPS {
                                0.0
                            } else {
                                (pv - tv) / (pv * (1.0 - pv)) * g / n
                            }
                        })
                        .collect();
                    self.accum(p, Tensor::from_vec(shape, dp).expect("same len"));
                }
                if self.needs(t) {
                    let dt: Vec<f64> = self
                        .value(p)
                        .data()
                        .iter()
                        .map(|&pv| {
                            let pv = pv.clamp(CE_EPS, 1.0 - CE_EPS);
                            -(pv.ln() - (1.0 - pv).ln()) * g / n
                        })
                        .collect();
                    self.accum(t, Tensor::from_vec(shape, dt).expect("same len"));
                }
            }
        }
    }
}

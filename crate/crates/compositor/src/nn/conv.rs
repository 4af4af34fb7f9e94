//! Raw convolution kernels: im2col/col2im plus the three matmul variants
//! the forward and backward passes need.
//!
//! All loops accumulate each output element in a fixed sequential order;
//! parallelism (rayon) only ever splits *disjoint output rows* across
//! threads, so results are bit-identical for any thread count.

use rayon::prelude::*;

/// Work threshold below which threading overhead outweighs the gain.
const PAR_FLOPS: usize = 1 << 22;

/// Geometry of one convolution: spatial output size for the floor rule.
#[inline]
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (input + 2 * pad).checked_sub(kernel).map(|d| d / stride + 1)
}

/// Spatial output size of a stride-`s` transposed convolution.
#[inline]
pub fn tconv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    ((input - 1) * stride + kernel).checked_sub(2 * pad)
}

/// Gather sliding windows: `x` is one batch item `[ch, h, w]`; output is
/// `[ch*kh*kw, oh*ow]` where column `(oy,ox)` holds the window whose
/// top-left sits at `(oy*stride - pad, ox*stride - pad)`; out-of-range
/// taps read zero.
#[allow(clippy::too_many_arguments)]
pub fn im2col(
    x: &[f64],
    ch: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let mut cols = vec![0.0f64; ch * kh * kw * oh * ow];
    let plane = oh * ow;
    for c in 0..ch {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((c * kh + ky) * kw + kx) * plane;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = (c * h + iy as usize) * w;
                    let dst = row + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            cols[dst + ox] = x[src + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add the im2col mapping back: the exact adjoint of [`im2col`]
/// with the same geometry. Out-of-range taps are dropped.
#[allow(clippy::too_many_arguments)]
pub fn col2im(
    cols: &[f64],
    ch: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let mut x = vec![0.0f64; ch * h * w];
    let plane = oh * ow;
    for c in 0..ch {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((c * kh + ky) * kw + kx) * plane;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = (c * h + iy as usize) * w;
                    let src = row + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            x[dst + ix as usize] += cols[src + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// `C[m,n] = A[m,k] * B[k,n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0f64; m * n];
    let body = |(i, crow): (usize, &mut [f64])| {
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    };
    if m * k * n >= PAR_FLOPS && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        c.chunks_mut(n).enumerate().for_each(body);
    }
    c
}

/// `C[m,n] = A[m,k] * B[n,k]^T` — both operands walked row-contiguously.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = vec![0.0f64; m * n];
    let body = |(i, crow): (usize, &mut [f64])| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (av, bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *cv = acc;
        }
    };
    if m * k * n >= PAR_FLOPS && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        c.chunks_mut(n).enumerate().for_each(body);
    }
    c
}

/// `C[m,n] = A[k,m]^T * B[k,n]`, accumulated rank-1 update by rank-1
/// update so the inner loop stays contiguous.
pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0f64; m * n];
    let body = |(i, crow): (usize, &mut [f64])| {
        for kk in 0..k {
            let av = a[kk * m + i];
            let brow = &b[kk * n..(kk + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    };
    if m * k * n >= PAR_FLOPS && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        c.chunks_mut(n).enumerate().for_each(body);
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for kk in 0..k {
                    c[i * n + j] += a[i * k + kk] * b[kk * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_variants_agree_with_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (m, k, n) = (5, 7, 4);
        let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let want = naive_matmul(&a, &b, m, k, n);

        let got = matmul(&a, &b, m, k, n);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }

        // A * B^T with B stored transposed.
        let mut bt = vec![0.0; n * k];
        for kk in 0..k {
            for j in 0..n {
                bt[j * k + kk] = b[kk * n + j];
            }
        }
        let got = matmul_nt(&a, &bt, m, k, n);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }

        // A^T * B with A stored transposed.
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for kk in 0..k {
                at[kk * m + i] = a[i * k + kk];
            }
        }
        let got = matmul_tn(&at, &b, m, k, n);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn im2col_windows_and_padding() {
        // 1 channel, 3x3 input, 2x2 kernel, stride 1, pad 0 -> 4 windows.
        #[rustfmt::skip]
        let x = [1.0, 2.0, 3.0,
                 4.0, 5.0, 6.0,
                 7.0, 8.0, 9.0];
        let cols = im2col(&x, 1, 3, 3, 2, 2, 1, 0, 2, 2);
        // Row (ky=0,kx=0) holds the top-left tap of each window.
        assert_eq!(&cols[0..4], &[1.0, 2.0, 4.0, 5.0]);
        // Row (ky=1,kx=1) holds the bottom-right tap.
        assert_eq!(&cols[12..16], &[5.0, 6.0, 8.0, 9.0]);

        // Pad 1 writes zeros at the border taps.
        let oh = conv_out_dim(3, 2, 1, 1).unwrap();
        assert_eq!(oh, 4);
        let cols = im2col(&x, 1, 3, 3, 2, 2, 1, 1, 4, 4);
        // First window is entirely in the padded corner except its
        // bottom-right tap, which reads x[0,0].
        assert_eq!(cols[0], 0.0);
        assert_eq!(cols[3 * 16], 1.0);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)> for random x, c: the defining
        // property of the adjoint, and exactly what backward relies on.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(ch, h, w, kh, kw, stride, pad) in
            &[(2usize, 5usize, 4usize, 3usize, 3usize, 1usize, 1usize), (1, 6, 6, 2, 2, 2, 0), (3, 5, 5, 3, 3, 2, 1)]
        {
            let oh = conv_out_dim(h, kh, stride, pad).unwrap();
            let ow = conv_out_dim(w, kw, stride, pad).unwrap();
            let x: Vec<f64> = (0..ch * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c: Vec<f64> =
                (0..ch * kh * kw * oh * ow).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ax: Vec<f64> = im2col(&x, ch, h, w, kh, kw, stride, pad, oh, ow);
            let atc: Vec<f64> = col2im(&c, ch, h, w, kh, kw, stride, pad, oh, ow);
            let lhs: f64 = ax.iter().zip(&c).map(|(p, q)| p * q).sum();
            let rhs: f64 = x.iter().zip(&atc).map(|(p, q)| p * q).sum();
            assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn output_dim_formulas() {
        assert_eq!(conv_out_dim(8, 3, 1, 1), Some(8));
        assert_eq!(conv_out_dim(8, 3, 2, 1), Some(4));
        assert_eq!(conv_out_dim(7, 3, 2, 1), Some(4));
        assert_eq!(conv_out_dim(2, 5, 1, 0), None);
        assert_eq!(tconv_out_dim(4, 4, 2, 1), Some(8));
        assert_eq!(tconv_out_dim(4, 2, 2, 0), Some(8));
        assert_eq!(tconv_out_dim(1, 1, 1, 0), Some(1));
    }
}

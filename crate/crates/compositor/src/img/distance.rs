//! Exact Euclidean distance to a mask boundary.
//!
//! Uses the two-pass lower-envelope (parabola) squared-distance transform.
//! Seeds and pixel coordinates are integers, every intermediate stays
//! below 2^53, and envelope-intersection rounding can never flip a
//! parabola choice at an integer abscissa, so the squared distances are
//! *exact* integers — band tests like `d <= r` can be evaluated as
//! `d_sq <= r*r` with no tolerance.

use super::SoftMask;

/// Stand-in for "no seed anywhere" that keeps envelope arithmetic finite
/// and exact (see module docs); any true squared distance is far smaller.
const UNREACHED: f64 = 1.0e15;

/// Per-pixel squared Euclidean distances, `f64::INFINITY` where no target
/// pixel exists (uniform masks).
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    width: usize,
    height: usize,
    sq: Vec<f64>,
}

impl DistanceField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Exact squared distance (an integer value, or `+inf`).
    #[inline]
    pub fn sq(&self, x: usize, y: usize) -> f64 {
        self.sq[y * self.width + x]
    }

    /// Euclidean distance (or `+inf`).
    #[inline]
    pub fn dist(&self, x: usize, y: usize) -> f64 {
        self.sq(x, y).sqrt()
    }

    pub fn is_unbounded(&self) -> bool {
        self.sq.first().is_some_and(|v| v.is_infinite())
    }

    pub fn sq_data(&self) -> &[f64] {
        &self.sq
    }
}

/// For every pixel, the exact Euclidean distance to the nearest pixel on
/// the *opposite* side of the binarization of `mask` at `threshold`
/// (values `>= threshold` count as foreground). A uniform mask has no
/// opposite side anywhere; every distance is then `+inf`.
pub fn boundary_distance(mask: &SoftMask, threshold: f32) -> DistanceField {
    let (w, h) = (mask.width(), mask.height());
    let fg: Vec<bool> = mask.data().iter().map(|&v| v >= threshold).collect();
    let n_fg = fg.iter().filter(|&&b| b).count();

    if n_fg == 0 || n_fg == w * h {
        return DistanceField { width: w, height: h, sq: vec![f64::INFINITY; w * h] };
    }

    let to_fg = squared_distance_to(&fg, w, h, true);
    let to_bg = squared_distance_to(&fg, w, h, false);
    let sq = fg
        .iter()
        .zip(to_fg.iter().zip(&to_bg))
        .map(|(&is_fg, (&dfg, &dbg))| if is_fg { dbg } else { dfg })
        .collect();
    DistanceField { width: w, height: h, sq }
}

/// Squared distance from every pixel to the nearest seed
/// (`fg[i] == seed_value`). Caller guarantees at least one seed.
fn squared_distance_to(fg: &[bool], w: usize, h: usize, seed_value: bool) -> Vec<f64> {
    let mut grid: Vec<f64> = fg
        .iter()
        .map(|&b| if b == seed_value { 0.0 } else { UNREACHED })
        .collect();

    // Pass 1: columns.
    let mut scratch = Scratch::new(w.max(h));
    let mut col = vec![0.0f64; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        let out = scratch.transform(&col[..h]);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    // Pass 2: rows.
    let mut row = vec![0.0f64; w];
    for y in 0..h {
        row.copy_from_slice(&grid[y * w..(y + 1) * w]);
        let out = scratch.transform(&row[..w]);
        grid[y * w..(y + 1) * w].copy_from_slice(out);
    }
    grid
}

/// Reusable buffers for the 1-D lower-envelope transform
/// `d[p] = min_q (p-q)^2 + f[q]`.
struct Scratch {
    v: Vec<usize>,
    z: Vec<f64>,
    d: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch { v: vec![0; n], z: vec![0.0; n + 1], d: vec![0.0; n] }
    }

    fn transform(&mut self, f: &[f64]) -> &[f64] {
        let n = f.len();
        let (v, z) = (&mut self.v, &mut self.z);
        let mut k = 0usize;
        v[0] = 0;
        z[0] = f64::NEG_INFINITY;
        z[1] = f64::INFINITY;
        for q in 1..n {
            loop {
                let p = v[k];
                let s = (f[q] + (q * q) as f64 - f[p] - (p * p) as f64)
                    / (2 * (q - p)) as f64;
                if k > 0 && s <= z[k] {
                    k -= 1;
                } else {
                    k += 1;
                    v[k] = q;
                    z[k] = s;
                    z[k + 1] = f64::INFINITY;
                    break;
                }
            }
        }
        let mut k = 0usize;
        for p in 0..n {
            while z[k + 1] < p as f64 {
                k += 1;
            }
            let q = v[k];
            self.d[p] = (p as isize - q as isize).pow(2) as f64 + f[q];
        }
        &self.d[..n]
    }
}

//! Single-frame layer kernels and their adjoints.
//!
//! Activations are `(channels, rows, cols)` arrays. Every forward function has
//! a matching backward function that maps the output gradient to the input
//! gradient (and accumulates parameter gradients where there are any).

use std::fmt::Debug;
use std::iter::Sum;

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array1, Array2, Array3, ArrayView3, Axis, LinalgScalar};
use num_traits::Float;

/// Scalar type the network can run in: `f32` for training, `f64` for
/// gradient checks.
pub trait Real:
    Float + LinalgScalar + std::ops::AddAssign + Send + Sync + Debug + Sum + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Mirror index `i` into `0..n` without repeating the edge sample
/// (`-1 → 1`, `n → n-2`), folding repeatedly for offsets beyond one period.
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let r = i.rem_euclid(period);
    if r < n as isize {
        r as usize
    } else {
        (period - r) as usize
    }
}

/// Convolution weights: `w` is `(c_out, c_in·k·k)`, one bias per output.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv<T> {
    pub w: Array2<T>,
    pub b: Array1<T>,
    pub k: usize,
}

impl<T: Real> Conv<T> {
    pub fn zeros(c_out: usize, c_in: usize, k: usize) -> Self {
        Conv {
            w: Array2::zeros((c_out, c_in * k * k)),
            b: Array1::zeros(c_out),
            k,
        }
    }

    pub fn c_out(&self) -> usize {
        self.w.nrows()
    }

    pub fn c_in(&self) -> usize {
        self.w.ncols() / (self.k * self.k)
    }

    pub fn len(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Weight of input channel `ci` at kernel tap `(dy, dx)` for output `co`.
    pub fn tap_mut(&mut self, co: usize, ci: usize, dy: usize, dx: usize) -> &mut T {
        let k = self.k;
        &mut self.w[[co, (ci * k + dy) * k + dx]]
    }

    pub fn cast<U: Real>(&self) -> Conv<U> {
        Conv {
            w: self.w.mapv(|v| U::from_f64(v.as_f64())),
            b: self.b.mapv(|v| U::from_f64(v.as_f64())),
            k: self.k,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(self.b.iter()).all(|v| v.is_finite())
    }
}

/// Unfolds `x` into a `(c·k·k, rows·cols)` patch matrix with reflected
/// borders, so that a same-size convolution is one matrix product.
pub fn im2col<T: Real>(x: ArrayView3<T>, k: usize) -> Array2<T> {
    let h = x.dim().1;
    let x = x.as_standard_layout();
    im2col_rows(x.as_slice().expect("standard layout"), x.dim(), k, 0, h)
}

/// Adjoint of [`im2col`]: scatters patch gradients back, summing every
/// reflected copy of a sample.
pub fn col2im<T: Real>(cols: &Array2<T>, c: usize, h: usize, w: usize, k: usize) -> Array3<T> {
    let mut out = Array3::<T>::zeros((c, h, w));
    col2im_rows(cols, out.as_slice_mut().expect("fresh array"), (c, h, w), k, 0, h);
    out
}

fn col_table(w: usize, k: usize) -> Vec<Vec<usize>> {
    let p = (k / 2) as isize;
    (0..k)
        .map(|kx| (0..w).map(|j| reflect(j as isize + kx as isize - p, w)).collect())
        .collect()
}

/// Patch matrix for output rows `r0..r1` only.
fn im2col_rows<T: Real>(
    src: &[T],
    (c, h, w): (usize, usize, usize),
    k: usize,
    r0: usize,
    r1: usize,
) -> Array2<T> {
    let p = (k / 2) as isize;
    let n = (r1 - r0) * w;
    let mut cols = Array2::zeros((c * k * k, n));
    let col_idx = col_table(w, k);
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for (kx, cidx) in col_idx.iter().enumerate() {
                let mut row = cols.row_mut((ci * k + ky) * k + kx);
                let dst = row.as_slice_mut().expect("contiguous row");
                for i in r0..r1 {
                    let si = reflect(i as isize + ky as isize - p, h);
                    let srow = &plane[si * w..(si + 1) * w];
                    let o = (i - r0) * w;
                    for (d, &sj) in dst[o..o + w].iter_mut().zip(cidx) {
                        *d = srow[sj];
                    }
                }
            }
        }
    }
    cols
}

/// Transposed patch matrix `(pixels, c·k·k)` for output rows `r0..r1`;
/// the weight-gradient product runs much faster with this orientation.
fn im2col_rows_t<T: Real>(
    src: &[T],
    (c, h, w): (usize, usize, usize),
    k: usize,
    r0: usize,
    r1: usize,
) -> Array2<T> {
    let p = (k / 2) as isize;
    let ckk = c * k * k;
    let mut out = Array2::zeros(((r1 - r0) * w, ckk));
    let dst = out.as_slice_mut().expect("fresh array");
    let col_idx = col_table(w, k);
    for i in r0..r1 {
        let block = &mut dst[(i - r0) * w * ckk..(i - r0 + 1) * w * ckk];
        for ci in 0..c {
            for ky in 0..k {
                let si = reflect(i as isize + ky as isize - p, h);
                let srow = &src[(ci * h + si) * w..(ci * h + si + 1) * w];
                for (kx, cidx) in col_idx.iter().enumerate() {
                    let q = (ci * k + ky) * k + kx;
                    for (j, &sj) in cidx.iter().enumerate() {
                        block[j * ckk + q] = srow[sj];
                    }
                }
            }
        }
    }
    out
}

fn col2im_rows<T: Real>(
    cols: &Array2<T>,
    dst: &mut [T],
    (c, h, w): (usize, usize, usize),
    k: usize,
    r0: usize,
    r1: usize,
) {
    let p = (k / 2) as isize;
    let col_idx = col_table(w, k);
    for ci in 0..c {
        let plane = &mut dst[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for (kx, cidx) in col_idx.iter().enumerate() {
                let row = cols.row((ci * k + ky) * k + kx);
                let src = row.as_slice().expect("contiguous row");
                for i in r0..r1 {
                    let si = reflect(i as isize + ky as isize - p, h);
                    let drow = &mut plane[si * w..(si + 1) * w];
                    let o = (i - r0) * w;
                    for (&g, &sj) in src[o..o + w].iter().zip(cidx) {
                        drow[sj] += g;
                    }
                }
            }
        }
    }
}

/// Pixels per patch tile: large enough for efficient products, small
/// enough that the patch matrix stays in cache.
const TILE_PIXELS: usize = 512;

fn row_tiles(h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    let step = (TILE_PIXELS / w.max(1)).max(1);
    (0..h).step_by(step).map(move |r0| (r0, (r0 + step).min(h)))
}

pub fn conv_forward<T: Real>(conv: &Conv<T>, x: ArrayView3<T>) -> Array3<T> {
    let (c, h, w) = x.dim();
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let mut out = Array2::zeros((conv.c_out(), h * w));
    for (r0, r1) in row_tiles(h, w) {
        let cols = im2col_rows(src, (c, h, w), conv.k, r0, r1);
        let mut part = out.slice_mut(s![.., r0 * w..r1 * w]);
        general_mat_mul(T::one(), &conv.w, &cols, T::zero(), &mut part);
    }
    for (mut row, &b) in out.rows_mut().into_iter().zip(conv.b.iter()) {
        row.mapv_inplace(|v| v + b);
    }
    out.into_shape_with_order((conv.c_out(), h, w))
        .expect("matching size")
}

/// Accumulates weight and bias gradients into `grad` and returns the input
/// gradient when `need_dx` is set.
pub fn conv_backward<T: Real>(
    conv: &Conv<T>,
    x: ArrayView3<T>,
    dout: ArrayView3<T>,
    grad: &mut Conv<T>,
    need_dx: bool,
) -> Option<Array3<T>> {
    let (c, h, w) = x.dim();
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let dout = dout.as_standard_layout();
    let d2 = dout
        .view()
        .into_shape_with_order((conv.c_out(), h * w))
        .expect("matching size");
    let mut dx = need_dx.then(|| Array3::<T>::zeros((c, h, w)));
    let wt = conv.w.t();
    for (r0, r1) in row_tiles(h, w) {
        let cols_t = im2col_rows_t(src, (c, h, w), conv.k, r0, r1);
        let dpart = d2.slice(s![.., r0 * w..r1 * w]);
        general_mat_mul(T::one(), &dpart, &cols_t, T::one(), &mut grad.w);
        if let Some(dx) = dx.as_mut() {
            let dcols = wt.dot(&dpart);
            let dst = dx.as_slice_mut().expect("fresh array");
            col2im_rows(&dcols, dst, (c, h, w), conv.k, r0, r1);
        }
    }
    for (gb, row) in grad.b.iter_mut().zip(d2.rows()) {
        *gb += row.sum();
    }
    dx
}

pub fn relu_inplace<T: Real>(x: &mut Array3<T>) {
    x.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// Gradient through a rectifier given its output.
pub fn relu_backward<T: Real>(out: ArrayView3<T>, mut dout: Array3<T>) -> Array3<T> {
    ndarray::Zip::from(&mut dout).and(&out).for_each(|d, &o| {
        if o <= T::zero() {
            *d = T::zero();
        }
    });
    dout
}

/// 2×2 max pooling with stride 2. Returns the pooled map and the winning
/// position (0..4, row-major within the window; first maximum on ties).
pub fn maxpool_forward<T: Real>(x: ArrayView3<T>) -> (Array3<T>, Array3<u8>) {
    let (c, h, w) = x.dim();
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Array3::zeros((c, ho, wo));
    let mut arg = Array3::zeros((c, ho, wo));
    for ci in 0..c {
        for i in 0..ho {
            for j in 0..wo {
                let mut best = x[[ci, 2 * i, 2 * j]];
                let mut at = 0u8;
                for q in 1..4u8 {
                    let v = x[[ci, 2 * i + (q / 2) as usize, 2 * j + (q % 2) as usize]];
                    if v > best {
                        best = v;
                        at = q;
                    }
                }
                out[[ci, i, j]] = best;
                arg[[ci, i, j]] = at;
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward<T: Real>(dout: ArrayView3<T>, arg: &Array3<u8>) -> Array3<T> {
    let (c, ho, wo) = dout.dim();
    let mut dx = Array3::zeros((c, 2 * ho, 2 * wo));
    for ((ci, i, j), &g) in dout.indexed_iter() {
        let q = arg[[ci, i, j]] as usize;
        dx[[ci, 2 * i + q / 2, 2 * j + q % 2]] = g;
    }
    dx
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample_forward<T: Real>(x: ArrayView3<T>) -> Array3<T> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, 2 * h, 2 * w), |(ci, i, j)| x[[ci, i / 2, j / 2]])
}

pub fn upsample_backward<T: Real>(dout: ArrayView3<T>) -> Array3<T> {
    let (c, h2, w2) = dout.dim();
    let mut dx = Array3::zeros((c, h2 / 2, w2 / 2));
    for ((ci, i, j), &g) in dout.indexed_iter() {
        let d = &mut dx[[ci, i / 2, j / 2]];
        *d = *d + g;
    }
    dx
}

/// Channel concatenation `[a, b]`.
pub fn concat_forward<T: Real>(a: ArrayView3<T>, b: ArrayView3<T>) -> Array3<T> {
    concatenate(Axis(0), &[a, b]).expect("matching spatial size")
}

/// Splits a concatenated gradient back into the parts for `a` and `b`.
pub fn concat_backward<T: Real>(dout: ArrayView3<T>, c_a: usize) -> (Array3<T>, Array3<T>) {
    (
        dout.slice(s![..c_a, .., ..]).to_owned(),
        dout.slice(s![c_a.., .., ..]).to_owned(),
    )
}

//! Primitive differentiable ops: convolution, group normalization, linear,
//! pooling, upsampling. Each op reads its parameters from a flat slice via
//! pre-allocated ranges and accumulates parameter gradients into a caller
//! buffer of the same layout.

use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayViewMut2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ParamAlloc, Scalar};

/// 2-D convolution with square kernel and zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub w: Range<usize>,
    pub b: Range<usize>,
}

impl Conv2d {
    pub fn new(
        alloc: &mut ParamAlloc,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let w = alloc.alloc(out_c * in_c * k * k);
        let b = alloc.alloc(out_c);
        Self {
            in_c,
            out_c,
            k,
            stride,
            pad,
            w,
            b,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn init<F: Scalar>(&self, params: &mut [F], rng: &mut ChaCha8Rng) {
        let bound = 1.0 / ((self.in_c * self.k * self.k) as f64).sqrt();
        for v in &mut params[self.w.clone()] {
            *v = F::of(rng.gen_range(-bound..bound));
        }
        for v in &mut params[self.b.clone()] {
            *v = F::zero();
        }
    }

    fn im2col<F: Scalar>(&self, x: &Array3<F>) -> Array2<F> {
        let (in_c, h, w) = x.dim();
        debug_assert_eq!(in_c, self.in_c);
        let (oh, ow) = self.out_hw(h, w);
        let xs = x.as_slice().expect("standard layout");
        let mut cols = Array2::<F>::zeros((in_c * self.k * self.k, oh * ow));
        let cs = cols.as_slice_mut().unwrap();
        for ic in 0..in_c {
            let x_base = ic * h * w;
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ic * self.k + ky) * self.k + kx;
                    let dst_base = row * oh * ow;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = x_base + iy as usize * w;
                        let dst_row = dst_base + oy * ow;
                        if self.stride == 1 {
                            // valid ox range for contiguous copy
                            let off = kx as isize - self.pad as isize;
                            let ox_lo = (-off).max(0) as usize;
                            let ox_hi = ((w as isize - off).min(ow as isize)).max(0) as usize;
                            if ox_lo < ox_hi {
                                let src_lo = (ox_lo as isize + off) as usize;
                                cs[dst_row + ox_lo..dst_row + ox_hi].copy_from_slice(
                                    &xs[src_row + src_lo..src_row + src_lo + (ox_hi - ox_lo)],
                                );
                            }
                        } else {
                            for ox in 0..ow {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    cs[dst_row + ox] = xs[src_row + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<F: Scalar>(&self, gcols: &Array2<F>, h: usize, w: usize) -> Array3<F> {
        let (oh, ow) = self.out_hw(h, w);
        let mut gx = Array3::<F>::zeros((self.in_c, h, w));
        let gs = gx.as_slice_mut().unwrap();
        let cs = gcols.as_slice().expect("standard layout");
        for ic in 0..self.in_c {
            let x_base = ic * h * w;
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ic * self.k + ky) * self.k + kx;
                    let src_base = row * oh * ow;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = x_base + iy as usize * w;
                        let src_row = src_base + oy * ow;
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                gs[dst_row + ix as usize] += cs[src_row + ox];
                            }
                        }
                    }
                }
            }
        }
        gx
    }

    pub fn forward<F: Scalar>(&self, params: &[F], x: &Array3<F>) -> Array3<F> {
        let (_, h, w) = x.dim();
        let (oh, ow) = self.out_hw(h, w);
        let cols = self.im2col(x);
        let wmat = ArrayView2::from_shape(
            (self.out_c, self.in_c * self.k * self.k),
            &params[self.w.clone()],
        )
        .unwrap();
        let mut y = Array2::<F>::zeros((self.out_c, oh * ow));
        general_mat_mul(F::one(), &wmat, &cols, F::zero(), &mut y);
        let bias = &params[self.b.clone()];
        for (oc, mut row) in y.rows_mut().into_iter().enumerate() {
            let b = bias[oc];
            row.mapv_inplace(|v| v + b);
        }
        y.into_shape((self.out_c, oh, ow)).unwrap()
    }

    /// Returns the gradient w.r.t. the input; parameter gradients are
    /// accumulated into `grads`.
    pub fn backward<F: Scalar>(
        &self,
        params: &[F],
        x: &Array3<F>,
        gy: &Array3<F>,
        grads: &mut [F],
    ) -> Array3<F> {
        let (_, h, w) = x.dim();
        let (oh, ow) = self.out_hw(h, w);
        let cols = self.im2col(x);
        let gy_mat = ArrayView2::from_shape(
            (self.out_c, oh * ow),
            gy.as_slice().expect("standard layout"),
        )
        .unwrap();

        for (oc, row) in gy_mat.rows().into_iter().enumerate() {
            grads[self.b.start + oc] += row.sum();
        }

        {
            let mut gw = ArrayViewMut2::from_shape(
                (self.out_c, self.in_c * self.k * self.k),
                &mut grads[self.w.clone()],
            )
            .unwrap();
            general_mat_mul(F::one(), &gy_mat, &cols.t(), F::one(), &mut gw);
        }

        let wmat = ArrayView2::from_shape(
            (self.out_c, self.in_c * self.k * self.k),
            &params[self.w.clone()],
        )
        .unwrap();
        let mut gcols = Array2::<F>::zeros((self.in_c * self.k * self.k, oh * ow));
        general_mat_mul(F::one(), &wmat.t(), &gy_mat, F::zero(), &mut gcols);
        self.col2im(&gcols, h, w)
    }
}

/// Group normalization with per-channel affine parameters; statistics are
/// per sample, so inference matches training and EMA stays well defined.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub channels: usize,
    pub groups: usize,
    pub gamma: Range<usize>,
    pub beta: Range<usize>,
    pub eps: f64,
}

impl GroupNorm {
    pub fn new(alloc: &mut ParamAlloc, channels: usize, groups: usize) -> Self {
        assert!(channels % groups == 0, "channels must divide into groups");
        let gamma = alloc.alloc(channels);
        let beta = alloc.alloc(channels);
        Self {
            channels,
            groups,
            gamma,
            beta,
            eps: 1e-5,
        }
    }

    pub fn init<F: Scalar>(&self, params: &mut [F]) {
        for v in &mut params[self.gamma.clone()] {
            *v = F::one();
        }
        for v in &mut params[self.beta.clone()] {
            *v = F::zero();
        }
    }

    fn stats<F: Scalar>(&self, x: &Array3<F>) -> Vec<(F, F)> {
        let (c, h, w) = x.dim();
        let cpg = c / self.groups;
        let m = F::of((cpg * h * w) as f64);
        let xs = x.as_slice().unwrap();
        (0..self.groups)
            .map(|g| {
                let lo = g * cpg * h * w;
                let hi = lo + cpg * h * w;
                let mut sum = F::zero();
                let mut sq = F::zero();
                for &v in &xs[lo..hi] {
                    sum += v;
                    sq += v * v;
                }
                let mean = sum / m;
                let var = (sq / m - mean * mean).max(F::zero());
                let inv_std = F::one() / (var + F::of(self.eps)).sqrt();
                (mean, inv_std)
            })
            .collect()
    }

    pub fn forward<F: Scalar>(&self, params: &[F], x: &Array3<F>) -> Array3<F> {
        let (c, h, w) = x.dim();
        debug_assert_eq!(c, self.channels);
        let stats = self.stats(x);
        let cpg = c / self.groups;
        let gamma = &params[self.gamma.clone()];
        let beta = &params[self.beta.clone()];
        let mut y = x.clone();
        {
            let ys = y.as_slice_mut().unwrap();
            for ch in 0..c {
                let (mean, inv_std) = stats[ch / cpg];
                let (g, b) = (gamma[ch], beta[ch]);
                for v in &mut ys[ch * h * w..(ch + 1) * h * w] {
                    *v = (*v - mean) * inv_std * g + b;
                }
            }
        }
        y
    }

    pub fn backward<F: Scalar>(
        &self,
        params: &[F],
        x: &Array3<F>,
        gy: &Array3<F>,
        grads: &mut [F],
    ) -> Array3<F> {
        let (c, h, w) = x.dim();
        let cpg = c / self.groups;
        let stats = self.stats(x);
        let gamma = &params[self.gamma.clone()];
        let xs = x.as_slice().unwrap();
        let gys = gy.as_slice().unwrap();
        let mut gx = Array3::<F>::zeros((c, h, w));
        let gxs = gx.as_slice_mut().unwrap();
        let m = F::of((cpg * h * w) as f64);

        for g in 0..self.groups {
            let (mean, inv_std) = stats[g];
            let lo = g * cpg * h * w;
            // accumulate affine grads and the two reduction terms
            let mut s1 = F::zero(); // sum of gxhat
            let mut s2 = F::zero(); // sum of gxhat * xhat
            for ch in g * cpg..(g + 1) * cpg {
                let ga = gamma[ch];
                let base = ch * h * w;
                let mut gg = F::zero();
                let mut gb = F::zero();
                for i in base..base + h * w {
                    let xhat = (xs[i] - mean) * inv_std;
                    let gyv = gys[i];
                    gg += gyv * xhat;
                    gb += gyv;
                    let gxhat = gyv * ga;
                    s1 += gxhat;
                    s2 += gxhat * xhat;
                }
                grads[self.gamma.start + ch] += gg;
                grads[self.beta.start + ch] += gb;
            }
            let (c1, c2) = (s1 / m, s2 / m);
            for ch in g * cpg..(g + 1) * cpg {
                let ga = gamma[ch];
                let base = ch * h * w;
                for i in base..base + h * w {
                    let xhat = (xs[i] - mean) * inv_std;
                    let gxhat = gys[i] * ga;
                    gxs[i - lo + lo] = (gxhat - c1 - xhat * c2) * inv_std;
                    gxs[i] = (gxhat - c1 - xhat * c2) * inv_std;
                }
            }
        }
        gx
    }
}

/// Fully connected layer on 1-D feature vectors.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Range<usize>,
    pub b: Range<usize>,
}

impl Linear {
    pub fn new(alloc: &mut ParamAlloc, in_dim: usize, out_dim: usize) -> Self {
        let w = alloc.alloc(out_dim * in_dim);
        let b = alloc.alloc(out_dim);
        Self {
            in_dim,
            out_dim,
            w,
            b,
        }
    }

    pub fn param_count(&self) -> usize {
        self.out_dim * self.in_dim + self.out_dim
    }

    pub fn init<F: Scalar>(&self, params: &mut [F], rng: &mut ChaCha8Rng) {
        let bound = 1.0 / (self.in_dim as f64).sqrt();
        for v in &mut params[self.w.clone()] {
            *v = F::of(rng.gen_range(-bound..bound));
        }
        for v in &mut params[self.b.clone()] {
            *v = F::zero();
        }
    }

    pub fn forward<F: Scalar>(&self, params: &[F], x: &Array1<F>) -> Array1<F> {
        debug_assert_eq!(x.len(), self.in_dim);
        let wmat =
            ArrayView2::from_shape((self.out_dim, self.in_dim), &params[self.w.clone()]).unwrap();
        let mut y = wmat.dot(x);
        for (o, v) in y.iter_mut().enumerate() {
            *v += params[self.b.start + o];
        }
        y
    }

    pub fn backward<F: Scalar>(
        &self,
        params: &[F],
        x: &Array1<F>,
        gy: &Array1<F>,
        grads: &mut [F],
    ) -> Array1<F> {
        for o in 0..self.out_dim {
            grads[self.b.start + o] += gy[o];
            let row = self.w.start + o * self.in_dim;
            let g = gy[o];
            for i in 0..self.in_dim {
                grads[row + i] += g * x[i];
            }
        }
        let wmat =
            ArrayView2::from_shape((self.out_dim, self.in_dim), &params[self.w.clone()]).unwrap();
        wmat.t().dot(gy)
    }
}

pub fn relu<F: Scalar>(x: &Array3<F>) -> Array3<F> {
    x.mapv(|v| v.max(F::zero()))
}

/// ReLU gradient from the cached output: passes gradient where y > 0.
pub fn relu_backward<F: Scalar>(y: &Array3<F>, gy: &Array3<F>) -> Array3<F> {
    let mut gx = gy.clone();
    gx.zip_mut_with(y, |g, &yv| {
        if yv <= F::zero() {
            *g = F::zero();
        }
    });
    gx
}

/// 2x2 max pooling with stride 2. Requires even spatial dims.
pub fn max_pool2<F: Scalar>(x: &Array3<F>) -> Array3<F> {
    let (c, h, w) = x.dim();
    assert!(h % 2 == 0 && w % 2 == 0, "max_pool2 needs even dims, got {h}x{w}");
    let mut y = Array3::<F>::zeros((c, h / 2, w / 2));
    for ch in 0..c {
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                let m = x[[ch, 2 * oy, 2 * ox]]
                    .max(x[[ch, 2 * oy, 2 * ox + 1]])
                    .max(x[[ch, 2 * oy + 1, 2 * ox]])
                    .max(x[[ch, 2 * oy + 1, 2 * ox + 1]]);
                y[[ch, oy, ox]] = m;
            }
        }
    }
    y
}

/// Routes gradient to the first maximum in scan order (ties resolved
/// top-left first), recomputed from the cached input.
pub fn max_pool2_backward<F: Scalar>(x: &Array3<F>, gy: &Array3<F>) -> Array3<F> {
    let (c, h, w) = x.dim();
    let mut gx = Array3::<F>::zeros((c, h, w));
    for ch in 0..c {
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                let mut best = (2 * oy, 2 * ox);
                let mut best_v = x[[ch, 2 * oy, 2 * ox]];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let (iy, ix) = (2 * oy + dy, 2 * ox + dx);
                    if x[[ch, iy, ix]] > best_v {
                        best_v = x[[ch, iy, ix]];
                        best = (iy, ix);
                    }
                }
                gx[[ch, best.0, best.1]] += gy[[ch, oy, ox]];
            }
        }
    }
    gx
}

pub fn avg_pool2<F: Scalar>(x: &Array3<F>) -> Array3<F> {
    let (c, h, w) = x.dim();
    assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even dims, got {h}x{w}");
    let quarter = F::of(0.25);
    let mut y = Array3::<F>::zeros((c, h / 2, w / 2));
    for ch in 0..c {
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                y[[ch, oy, ox]] = (x[[ch, 2 * oy, 2 * ox]]
                    + x[[ch, 2 * oy, 2 * ox + 1]]
                    + x[[ch, 2 * oy + 1, 2 * ox]]
                    + x[[ch, 2 * oy + 1, 2 * ox + 1]])
                    * quarter;
            }
        }
    }
    y
}

pub fn avg_pool2_backward<F: Scalar>(in_dim: (usize, usize, usize), gy: &Array3<F>) -> Array3<F> {
    let (c, h, w) = in_dim;
    let quarter = F::of(0.25);
    let mut gx = Array3::<F>::zeros((c, h, w));
    for ch in 0..c {
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                let g = gy[[ch, oy, ox]] * quarter;
                gx[[ch, 2 * oy, 2 * ox]] = g;
                gx[[ch, 2 * oy, 2 * ox + 1]] = g;
                gx[[ch, 2 * oy + 1, 2 * ox]] = g;
                gx[[ch, 2 * oy + 1, 2 * ox + 1]] = g;
            }
        }
    }
    gx
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample_nearest2<F: Scalar>(x: &Array3<F>) -> Array3<F> {
    let (c, h, w) = x.dim();
    let mut y = Array3::<F>::zeros((c, 2 * h, 2 * w));
    for ch in 0..c {
        for iy in 0..h {
            for ix in 0..w {
                let v = x[[ch, iy, ix]];
                y[[ch, 2 * iy, 2 * ix]] = v;
                y[[ch, 2 * iy, 2 * ix + 1]] = v;
                y[[ch, 2 * iy + 1, 2 * ix]] = v;
                y[[ch, 2 * iy + 1, 2 * ix + 1]] = v;
            }
        }
    }
    y
}

pub fn upsample_nearest2_backward<F: Scalar>(gy: &Array3<F>) -> Array3<F> {
    let (c, h2, w2) = gy.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut gx = Array3::<F>::zeros((c, h, w));
    for ch in 0..c {
        for iy in 0..h {
            for ix in 0..w {
                gx[[ch, iy, ix]] = gy[[ch, 2 * iy, 2 * ix]]
                    + gy[[ch, 2 * iy, 2 * ix + 1]]
                    + gy[[ch, 2 * iy + 1, 2 * ix]]
                    + gy[[ch, 2 * iy + 1, 2 * ix + 1]];
            }
        }
    }
    gx
}

pub fn global_avg_pool<F: Scalar>(x: &Array3<F>) -> Array1<F> {
    let (c, h, w) = x.dim();
    let m = F::of((h * w) as f64);
    Array1::from_iter((0..c).map(|ch| {
        let mut s = F::zero();
        for iy in 0..h {
            for ix in 0..w {
                s += x[[ch, iy, ix]];
            }
        }
        s / m
    }))
}

pub fn global_avg_pool_backward<F: Scalar>(
    in_dim: (usize, usize, usize),
    gy: &Array1<F>,
) -> Array3<F> {
    let (c, h, w) = in_dim;
    let m = F::of((h * w) as f64);
    let mut gx = Array3::<F>::zeros((c, h, w));
    for ch in 0..c {
        let g = gy[ch] / m;
        gx.index_axis_mut(ndarray::Axis(0), ch).fill(g);
    }
    gx
}

/// Channel concatenation: `[a; b]`.
pub fn concat_channels<F: Scalar>(a: &Array3<F>, b: &Array3<F>) -> Array3<F> {
    ndarray::concatenate(ndarray::Axis(0), &[a.view(), b.view()]).unwrap()
}

pub fn split_channels<F: Scalar>(g: &Array3<F>, c_a: usize) -> (Array3<F>, Array3<F>) {
    let a = g.slice(ndarray::s![..c_a, .., ..]).to_owned();
    let b = g.slice(ndarray::s![c_a.., .., ..]).to_owned();
    (a, b)
}

//! Layers with hand-written forward and backward passes.
//!
//! Every layer caches what its backward pass needs during `forward`; a
//! backward call consumes the most recent forward. Parameter gradients
//! accumulate into the parameters' gradient buffers. Tensors are passed by
//! value so element-wise layers work in place and caches take ownership
//! instead of copying: at 32³ with a batch of 15 a single activation is
//! ~40 MB, and fresh allocations of that size cost more than the arithmetic.

use rand::{Rng, RngCore};
use rayon::prelude::*;

use crate::tensor::Tensor;
use crate::NetError;

/// Zero-padded layout: every `(D, H, W)` channel is stored as
/// `(D+2, H+2, W+2)` with a one-voxel halo. A 3×3×3 tap then becomes one
/// constant flat offset, so each tap is a single long contiguous loop
/// instead of many short rows.
#[derive(Debug, Clone, Copy)]
struct Padded {
    dims: [usize; 3],
    /// Stride of one padded row and one padded plane.
    row: usize,
    plane: usize,
    /// Values per padded channel.
    len: usize,
    /// Flat span covering every interior output position `z·plane + y·row + x`.
    span: usize,
}

impl Padded {
    fn new([d, h, w]: [usize; 3]) -> Self {
        let row = w + 2;
        let plane = (h + 2) * row;
        Self {
            dims: [d, h, w],
            row,
            plane,
            len: (d + 2) * plane,
            span: (d - 1) * plane + (h - 1) * row + w,
        }
    }

    fn offset(&self, tap: usize) -> usize {
        (tap / 9) * self.plane + (tap / 3 % 3) * self.row + tap % 3
    }

    /// Pad `channels` consecutive `(D, H, W)` blocks.
    fn pad(&self, data: &[f64], channels: usize) -> Vec<f64> {
        let [d, h, w] = self.dims;
        let mut out = vec![0.0; channels * self.len];
        for (src, dst) in data.chunks_exact(d * h * w).zip(out.chunks_exact_mut(self.len)) {
            for z in 0..d {
                for y in 0..h {
                    let o = (z + 1) * self.plane + (y + 1) * self.row + 1;
                    dst[o..o + w].copy_from_slice(&src[(z * h + y) * w..][..w]);
                }
            }
        }
        out
    }

    /// Copy the interior positions of an accumulator laid out with plane and
    /// row strides (origin at the first interior voxel) into `(D, H, W)`.
    fn unpad_into(&self, acc: &[f64], out: &mut [f64]) {
        let [d, h, w] = self.dims;
        for z in 0..d {
            for y in 0..h {
                out[(z * h + y) * w..][..w].copy_from_slice(&acc[z * self.plane + y * self.row..][..w]);
            }
        }
    }
}

/// Positions per cache block in the tap loops.
const BLOCK: usize = 1024;

/// `acc[j] += Σ_t k[t]·xp[j + offset(t)]` for `j < span`: a correlation over
/// one padded channel. Every output sums its taps in the same order whatever
/// the instruction set, so results are bit-identical with and without AVX2.
fn correlate_padded(acc: &mut [f64], xp: &[f64], k: &[f64], p: &Padded) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        return unsafe { correlate_avx2(acc, xp, k, p) };
    }
    correlate_generic(acc, xp, k, p)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn correlate_avx2(acc: &mut [f64], xp: &[f64], k: &[f64], p: &Padded) {
    correlate_generic(acc, xp, k, p)
}

#[inline(always)]
fn correlate_generic(acc: &mut [f64], xp: &[f64], k: &[f64], p: &Padded) {
    let n = p.span;
    for j0 in (0..n).step_by(BLOCK) {
        let m = BLOCK.min(n - j0);
        let acc = &mut acc[j0..j0 + m];
        for kd in 0..3 {
            let base = j0 + kd * p.plane;
            let s = |kh: usize, kw: usize| &xp[base + kh * p.row + kw..][..m];
            let (s0, s1, s2, s3, s4, s5, s6, s7, s8) = (
                s(0, 0),
                s(0, 1),
                s(0, 2),
                s(1, 0),
                s(1, 1),
                s(1, 2),
                s(2, 0),
                s(2, 1),
                s(2, 2),
            );
            let k: [f64; 9] = k[kd * 9..kd * 9 + 9].try_into().unwrap();
            for j in 0..m {
                acc[j] += k[0] * s0[j]
                    + k[1] * s1[j]
                    + k[2] * s2[j]
                    + k[3] * s3[j]
                    + k[4] * s4[j]
                    + k[5] * s5[j]
                    + k[6] * s6[j]
                    + k[7] * s7[j]
                    + k[8] * s8[j];
            }
        }
    }
}

/// `out[t] = Σ_j g[j]·x[j + offset(t)]` for all 27 taps. Four fixed lanes
/// per tap, reduced at the end, so the order does not depend on the platform.
fn tap_dots(g: &[f64], x: &[f64], p: &Padded) -> [f64; 27] {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        return unsafe { tap_dots_avx2(g, x, p) };
    }
    tap_dots_generic(g, x, p)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn tap_dots_avx2(g: &[f64], x: &[f64], p: &Padded) -> [f64; 27] {
    tap_dots_generic(g, x, p)
}

#[inline(always)]
fn tap_dots_generic(g: &[f64], x: &[f64], p: &Padded) -> [f64; 27] {
    const L: usize = 4;
    let n = p.span;
    let full = n / L * L;
    let mut lanes = [[0.0; L]; 27];
    for j0 in (0..full).step_by(BLOCK) {
        let m = BLOCK.min(full - j0);
        let g = &g[j0..j0 + m];
        for row in 0..9 {
            let o = j0 + p.offset(row * 3);
            let (x0, x1, x2) = (&x[o..o + m], &x[o + 1..o + 1 + m], &x[o + 2..o + 2 + m]);
            let (mut a0, mut a1, mut a2) = (lanes[row * 3], lanes[row * 3 + 1], lanes[row * 3 + 2]);
            for (((gc, c0), c1), c2) in g
                .chunks_exact(L)
                .zip(x0.chunks_exact(L))
                .zip(x1.chunks_exact(L))
                .zip(x2.chunks_exact(L))
            {
                for l in 0..L {
                    a0[l] += gc[l] * c0[l];
                    a1[l] += gc[l] * c1[l];
                    a2[l] += gc[l] * c2[l];
                }
            }
            lanes[row * 3] = a0;
            lanes[row * 3 + 1] = a1;
            lanes[row * 3 + 2] = a2;
        }
    }
    let mut out = [0.0; 27];
    for (t, o) in out.iter_mut().enumerate() {
        let off = p.offset(t);
        let tail: f64 = (full..n).map(|j| g[j] * x[j + off]).sum();
        *o = lanes[t].iter().sum::<f64>() + tail;
    }
    out
}

/// He-uniform: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
fn he_uniform(rng: &mut dyn RngCore, n: usize, fan_in: usize) -> Vec<f64> {
    let b = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-b..b)).collect()
}

/// 3×3×3 convolution, stride 1, zero padding 1.
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `(out, in, 3, 3, 3)`.
    pub weight: Tensor,
    /// `(out)`, absent when a batch norm follows.
    pub bias: Option<Tensor>,
    /// Padded input of the last forward pass and its `(N, C, D, H, W)`.
    input: Option<(Vec<f64>, [usize; 5])>,
}

impl Conv3d {
    pub fn new(in_channels: usize, out_channels: usize, bias: bool, rng: &mut dyn RngCore) -> Self {
        let n = out_channels * in_channels * 27;
        Self {
            in_channels,
            out_channels,
            weight: Tensor::raw(
                vec![out_channels, in_channels, 3, 3, 3],
                he_uniform(rng, n, in_channels * 27),
            ),
            bias: bias.then(|| Tensor::zeros(&[out_channels])),
            input: None,
        }
    }

    pub fn forward(&mut self, x: Tensor) -> Tensor {
        let shape = x.dims5().expect("checked by the model");
        let [n, ci, d, h, w] = shape;
        let co = self.out_channels;
        let vol = d * h * w;
        let p = Padded::new([d, h, w]);
        let xp = p.pad(x.data(), n * ci);
        drop(x);
        let mut out = vec![0.0; n * co * vol];
        let wt = self.weight.data();
        let bias = self.bias.as_ref().map(|b| b.data());
        out.par_chunks_mut(vol).enumerate().for_each(|(nc, o)| {
            let (b, oc) = (nc / co, nc % co);
            let mut acc = vec![bias.map_or(0.0, |bias| bias[oc]); d * p.plane];
            for ic in 0..ci {
                let k = &wt[(oc * ci + ic) * 27..][..27];
                correlate_padded(&mut acc, &xp[(b * ci + ic) * p.len..][..p.len], k, &p);
            }
            p.unpad_into(&acc, o);
        });
        self.input = Some((xp, shape));
        Tensor::raw(vec![n, co, d, h, w], out)
    }

    /// Accumulate parameter gradients and return the input gradient.
    pub fn backward(&mut self, g: Tensor) -> Tensor {
        let gp = self.padded_grad(&g);
        drop(g);
        self.accumulate_params(&gp);
        self.input_grad(&gp)
    }

    /// Parameter gradients only; for a first layer, whose input gradient
    /// nobody reads.
    pub fn backward_params(&mut self, g: &Tensor) {
        let gp = self.padded_grad(g);
        self.accumulate_params(&gp);
    }

    fn padded_grad(&self, g: &Tensor) -> Vec<f64> {
        let [n, _, d, h, w] = self.input.as_ref().expect("backward follows forward").1;
        Padded::new([d, h, w]).pad(g.data(), n * self.out_channels)
    }

    fn accumulate_params(&mut self, gp: &[f64]) {
        let (xp, [n, ci, d, h, w]) = self.input.as_ref().expect("backward follows forward");
        let (n, ci) = (*n, *ci);
        let co = self.out_channels;
        let p = Padded::new([*d, *h, *w]);
        // output position j sits at padded index j + interior
        let interior = p.plane + p.row + 1;

        if let Some(bias) = &mut self.bias {
            let gb = bias.grad_mut();
            for b in 0..n {
                for (oc, gbo) in gb.iter_mut().enumerate() {
                    // the halo is zero, so the padded channel sums the same values
                    *gbo += gp[(b * co + oc) * p.len..][..p.len].iter().sum::<f64>();
                }
            }
        }

        // one task per (out, in) pair, batch summed in order
        let mut gw = vec![0.0; co * ci * 27];
        gw.par_chunks_mut(27).enumerate().for_each(|(pair, gk)| {
            let (oc, ic) = (pair / ci, pair % ci);
            for b in 0..n {
                let g = &gp[(b * co + oc) * p.len + interior..][..p.span];
                let x = &xp[(b * ci + ic) * p.len..][..p.len];
                for (a, d) in gk.iter_mut().zip(tap_dots(g, x, &p)) {
                    *a += d;
                }
            }
        });
        for (a, b) in self.weight.grad_mut().iter_mut().zip(&gw) {
            *a += b;
        }
    }

    /// The transposed convolution: correlate the padded gradient with the
    /// point-reflected kernel.
    fn input_grad(&mut self, gp: &[f64]) -> Tensor {
        let (_, [n, ci, d, h, w]) = self.input.take().expect("backward follows forward");
        let co = self.out_channels;
        let vol = d * h * w;
        let p = Padded::new([d, h, w]);
        let wt = self.weight.data();
        let mut gx = vec![0.0; n * ci * vol];
        gx.par_chunks_mut(vol).enumerate().for_each(|(nc, gxi)| {
            let (b, ic) = (nc / ci, nc % ci);
            let mut acc = vec![0.0; d * p.plane];
            for oc in 0..co {
                let k = &wt[(oc * ci + ic) * 27..][..27];
                let flipped: Vec<f64> = k.iter().rev().copied().collect();
                correlate_padded(&mut acc, &gp[(b * co + oc) * p.len..][..p.len], &flipped, &p);
            }
            p.unpad_into(&acc, gxi);
        });
        Tensor::raw(vec![n, ci, d, h, w], gx)
    }
}

/// Σ f(v) with eight interleaved partial sums, so the reduction vectorizes
/// while its order stays fixed.
fn lane_sum(v: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let mut acc = [0.0; 8];
    let chunks = v.chunks_exact(8);
    let tail: f64 = chunks.remainder().iter().map(|&x| f(x)).sum();
    for c in chunks {
        for l in 0..8 {
            acc[l] += f(c[l]);
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn lane_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Per-channel batch normalization over `(N, D, H, W)`.
#[derive(Debug, Clone)]
pub struct BatchNorm3d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: [usize; 5],
    train: bool,
}

impl BatchNorm3d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::raw(vec![channels], vec![1.0; channels]),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::raw(vec![channels], vec![1.0; channels]),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: Tensor, train: bool) -> Tensor {
        let shape = x.dims5().expect("checked by the model");
        let [n, c, d, h, w] = shape;
        let vol = d * h * w;
        let m = (n * vol) as f64;
        let xd = x.data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        if train {
            for ch in 0..c {
                let mut s = 0.0;
                for b in 0..n {
                    s += lane_sum(&xd[(b * c + ch) * vol..][..vol], |v| v);
                }
                mean[ch] = s / m;
                let mu = mean[ch];
                let mut q = 0.0;
                for b in 0..n {
                    q += lane_sum(&xd[(b * c + ch) * vol..][..vol], |v| (v - mu) * (v - mu));
                }
                var[ch] = q / m;
            }
            let unbiased = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            let rm = self.running_mean.data_mut();
            for ch in 0..c {
                rm[ch] = (1.0 - self.momentum) * rm[ch] + self.momentum * mean[ch];
            }
            let rv = self.running_var.data_mut();
            for ch in 0..c {
                rv[ch] = (1.0 - self.momentum) * rv[ch] + self.momentum * var[ch] * unbiased;
            }
        } else {
            mean.copy_from_slice(self.running_mean.data());
            var.copy_from_slice(self.running_var.data());
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut x_hat = x.into_data();
        let mut out = vec![0.0; x_hat.len()];
        let (gamma, beta) = (self.gamma.data(), self.beta.data());
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * vol;
                let (xh, o) = (&mut x_hat[off..off + vol], &mut out[off..off + vol]);
                let (mu, k, gm, bt) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
                for (v, o) in xh.iter_mut().zip(o) {
                    *v = (*v - mu) * k;
                    *o = gm * *v + bt;
                }
            }
        }
        self.cache = Some(BnCache {
            x_hat,
            inv_std,
            shape,
            train,
        });
        Tensor::raw(shape.to_vec(), out)
    }

    pub fn backward(&mut self, g: Tensor) -> Tensor {
        let cache = self.cache.take().expect("backward follows forward");
        let [n, c, d, h, w] = cache.shape;
        let vol = d * h * w;
        let m = (n * vol) as f64;
        let gd = g.data();
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * vol;
                let (gs, xh) = (&gd[off..off + vol], &cache.x_hat[off..off + vol]);
                sum_g[ch] += lane_sum(gs, |v| v);
                sum_gx[ch] += lane_dot(gs, xh);
            }
        }
        for (a, s) in self.gamma.grad_mut().iter_mut().zip(&sum_gx) {
            *a += s;
        }
        for (a, s) in self.beta.grad_mut().iter_mut().zip(&sum_g) {
            *a += s;
        }
        let gamma = self.gamma.data();
        let mut gx = g.into_data();
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * vol;
                let k = gamma[ch] * cache.inv_std[ch];
                let gs = &mut gx[off..off + vol];
                if cache.train {
                    let (mg, mgx) = (sum_g[ch] / m, sum_gx[ch] / m);
                    for (v, &xh) in gs.iter_mut().zip(&cache.x_hat[off..off + vol]) {
                        *v = k * (*v - mg - xh * mgx);
                    }
                } else {
                    gs.iter_mut().for_each(|v| *v *= k);
                }
            }
        }
        Tensor::raw(cache.shape.to_vec(), gx)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    pub fn forward(&mut self, mut x: Tensor) -> Tensor {
        self.mask = x.data().iter().map(|&v| v > 0.0).collect();
        x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        x
    }

    pub fn backward(&mut self, mut g: Tensor) -> Tensor {
        for (v, &m) in g.data_mut().iter_mut().zip(&self.mask) {
            if !m {
                *v = 0.0;
            }
        }
        g
    }
}

/// Max pooling with a cubic window equal to its stride; output extents are
/// floored. Ties go to the first voxel in memory order.
#[derive(Debug, Clone)]
pub struct MaxPool3d {
    pub size: usize,
    argmax: Vec<usize>,
    input_shape: [usize; 5],
}

impl MaxPool3d {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            argmax: Vec::new(),
            input_shape: [0; 5],
        }
    }

    pub fn output_dims(&self, dhw: [usize; 3]) -> [usize; 3] {
        dhw.map(|v| v / self.size)
    }

    pub fn forward(&mut self, x: Tensor) -> Tensor {
        let shape = x.dims5().expect("checked by the model");
        let [n, c, d, h, w] = shape;
        let s = self.size;
        let [od, oh, ow] = self.output_dims([d, h, w]);
        let xd = x.data();
        let mut out = Vec::with_capacity(n * c * od * oh * ow);
        let mut argmax = Vec::with_capacity(out.capacity());
        for nc in 0..n * c {
            let base = nc * d * h * w;
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut best = (f64::NEG_INFINITY, 0usize);
                        for dz in 0..s {
                            for dy in 0..s {
                                for dx in 0..s {
                                    let i = base + ((z * s + dz) * h + y * s + dy) * w + xx * s + dx;
                                    if xd[i] > best.0 {
                                        best = (xd[i], i);
                                    }
                                }
                            }
                        }
                        out.push(best.0);
                        argmax.push(best.1);
                    }
                }
            }
        }
        self.argmax = argmax;
        self.input_shape = shape;
        Tensor::raw(vec![n, c, od, oh, ow], out)
    }

    pub fn backward(&mut self, g: Tensor) -> Tensor {
        let mut gx = vec![0.0; self.input_shape.iter().product()];
        for (&i, &v) in self.argmax.iter().zip(g.data()) {
            gx[i] += v;
        }
        Tensor::raw(self.input_shape.to_vec(), gx)
    }
}

/// Fully connected layer on `(N, in)` inputs.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// `(out, in)`.
    pub weight: Tensor,
    pub bias: Tensor,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut dyn RngCore) -> Self {
        Self {
            in_features,
            out_features,
            weight: Tensor::raw(
                vec![out_features, in_features],
                he_uniform(rng, in_features * out_features, in_features),
            ),
            bias: Tensor::zeros(&[out_features]),
            input: None,
        }
    }

    pub fn forward(&mut self, x: Tensor) -> Tensor {
        let n = x.shape()[0];
        let (fi, fo) = (self.in_features, self.out_features);
        let (w, b) = (self.weight.data(), self.bias.data());
        let mut out = Vec::with_capacity(n * fo);
        for row in x.data().chunks(fi) {
            for o in 0..fo {
                let wr = &w[o * fi..][..fi];
                out.push(b[o] + wr.iter().zip(row).map(|(a, v)| a * v).sum::<f64>());
            }
        }
        self.input = Some(x);
        Tensor::raw(vec![n, fo], out)
    }

    pub fn backward(&mut self, g: Tensor) -> Tensor {
        let x = self.input.take().expect("backward follows forward");
        let n = x.shape()[0];
        let (fi, fo) = (self.in_features, self.out_features);
        let gd = g.data();
        {
            let gw = self.weight.grad_mut();
            for b in 0..n {
                let xr = &x.data()[b * fi..][..fi];
                for o in 0..fo {
                    let go = gd[b * fo + o];
                    for (a, &v) in gw[o * fi..][..fi].iter_mut().zip(xr) {
                        *a += go * v;
                    }
                }
            }
        }
        {
            let gb = self.bias.grad_mut();
            for b in 0..n {
                for o in 0..fo {
                    gb[o] += gd[b * fo + o];
                }
            }
        }
        let w = self.weight.data();
        let mut gx = vec![0.0; n * fi];
        for b in 0..n {
            let gxr = &mut gx[b * fi..][..fi];
            for o in 0..fo {
                let go = gd[b * fo + o];
                for (a, &wv) in gxr.iter_mut().zip(&w[o * fi..][..fi]) {
                    *a += go * wv;
                }
            }
        }
        Tensor::raw(x.shape().to_vec(), gx)
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - p)` in training,
/// identity at evaluation.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub p: f64,
    scale: Vec<f64>,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        Self { p, scale: Vec::new() }
    }

    pub fn forward(&mut self, mut x: Tensor, train: bool, rng: &mut dyn RngCore) -> Tensor {
        if !train || self.p == 0.0 {
            self.scale = vec![1.0; x.len()];
            return x;
        }
        let keep = 1.0 / (1.0 - self.p);
        self.scale = (0..x.len())
            .map(|_| if rng.random::<f64>() < self.p { 0.0 } else { keep })
            .collect();
        x.data_mut().iter_mut().zip(&self.scale).for_each(|(v, s)| *v *= s);
        x
    }

    pub fn backward(&mut self, mut g: Tensor) -> Tensor {
        g.data_mut().iter_mut().zip(&self.scale).for_each(|(v, s)| *v *= s);
        g
    }
}

/// Mean over the spatial axes: `(N, C, D, H, W) → (N, C)`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    input_shape: [usize; 5],
}

impl GlobalAvgPool {
    pub fn forward(&mut self, x: Tensor) -> Tensor {
        let shape = x.dims5().expect("checked by the model");
        let vol = shape[2] * shape[3] * shape[4];
        let out = x
            .data()
            .chunks(vol)
            .map(|c| c.iter().sum::<f64>() / vol as f64)
            .collect();
        self.input_shape = shape;
        Tensor::raw(vec![shape[0], shape[1]], out)
    }

    pub fn backward(&mut self, g: Tensor) -> Tensor {
        let vol = self.input_shape[2] * self.input_shape[3] * self.input_shape[4];
        let mut out = Vec::with_capacity(g.len() * vol);
        for &v in g.data() {
            out.extend(std::iter::repeat_n(v / vol as f64, vol));
        }
        Tensor::raw(self.input_shape.to_vec(), out)
    }
}

/// Row-major flatten `(N, ...) → (N, prod)`.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    input_shape: Vec<usize>,
}

impl Flatten {
    pub fn forward(&mut self, x: Tensor) -> Tensor {
        self.input_shape = x.shape().to_vec();
        let n = x.shape()[0];
        let width = x.len() / n.max(1);
        Tensor::raw(vec![n, width], x.into_data())
    }

    pub fn backward(&mut self, g: Tensor) -> Tensor {
        Tensor::raw(self.input_shape.clone(), g.into_data())
    }
}

/// Shape check shared by the model: 5-D input with `channels` channels.
pub(crate) fn expect_channels(layer: &str, x: &Tensor, channels: usize) -> Result<(), NetError> {
    match x.dims5() {
        Some([_, c, ..]) if c == channels => Ok(()),
        Some([_, c, ..]) => Err(NetError::Shape(format!(
            "{layer}: expected {channels} input channels, got {c}"
        ))),
        None => Err(NetError::Shape(format!(
            "{layer}: expected a 5-D (N, C, D, H, W) input, got {:?}",
            x.shape()
        ))),
    }
}

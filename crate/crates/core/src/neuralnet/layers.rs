//! Layer kernels.
//!
//! Activations travel channel-major as `[C][B][H][W]`: one row per channel
//! (or per feature, with `H = W = 1`) holding the whole mini-batch. Batch
//! normalization statistics are then reductions over contiguous rows, and a
//! convolution is a single GEMM against the im2col matrix.

use crate::error::{Error, Result};

use super::real::Real;

/// Channel-major activation block.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations<T> {
    pub channels: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> Activations<T> {
    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            batch,
            height,
            width,
            data: vec![T::zero(); channels * batch * height * width],
        }
    }

    /// Length of one channel row.
    pub fn row_len(&self) -> usize {
        self.batch * self.height * self.width
    }

    /// Packs per-sample `C × H × W` buffers into a channel-major block.
    pub fn from_samples<S: Copy + Into<f64>>(
        samples: &[&[S]],
        channels: usize,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let plane = height * width;
        let mut out = Self::zeros(channels, samples.len(), height, width);
        let row = out.row_len();
        for (b, s) in samples.iter().enumerate() {
            if s.len() != channels * plane {
                return Err(Error::Structural(format!(
                    "sample {b} has {} values, expected {}x{}x{}",
                    s.len(),
                    channels,
                    height,
                    width
                )));
            }
            for c in 0..channels {
                let src = &s[c * plane..(c + 1) * plane];
                let dst = &mut out.data[c * row + b * plane..c * row + (b + 1) * plane];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d = T::of((*v).into());
                }
            }
        }
        Ok(out)
    }

    /// Values of sample `b` in `C × H × W` order.
    pub fn sample(&self, b: usize) -> Vec<T> {
        let plane = self.height * self.width;
        let row = self.row_len();
        let mut out = Vec::with_capacity(self.channels * plane);
        for c in 0..self.channels {
            out.extend_from_slice(&self.data[c * row + b * plane..c * row + (b + 1) * plane]);
        }
        out
    }
}

/// Zero padding on each border.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn symmetric(ph: usize, pw: usize) -> Self {
        Self {
            top: ph,
            bottom: ph,
            left: pw,
            right: pw,
        }
    }

    /// Stride-1 padding that keeps the spatial size. Even kernels put the
    /// extra row/column at the bottom/right.
    pub fn same(kh: usize, kw: usize) -> Self {
        let th = kh - 1;
        let tw = kw - 1;
        Self {
            top: th / 2,
            bottom: th - th / 2,
            left: tw / 2,
            right: tw - tw / 2,
        }
    }
}

/// Output extent along one axis: `floor((len + pads - kernel) / stride) + 1`.
pub fn conv_output_len(len: usize, kernel: usize, pad_lo: usize, pad_hi: usize, stride: usize) -> Option<usize> {
    let padded = len + pad_lo + pad_hi;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: Padding,
    /// `out × in × kh × kw`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Vec<T>,
    cache: Option<ConvCache<T>>,
}

#[derive(Debug, Clone, PartialEq)]
struct ConvCache<T> {
    cols: Vec<T>,
    in_shape: (usize, usize, usize, usize),
    out_hw: (usize, usize),
}

impl<T: Real> Conv2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: Padding,
    ) -> Self {
        let wlen = out_channels * in_channels * kernel_h * kernel_w;
        Self {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
            weight: vec![T::zero(); wlen],
            bias: vec![T::zero(); out_channels],
            grad_weight: vec![T::zero(); wlen],
            grad_bias: vec![T::zero(); out_channels],
            cache: None,
        }
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let p = self.padding;
        match (
            conv_output_len(h, self.kernel_h, p.top, p.bottom, self.stride),
            conv_output_len(w, self.kernel_w, p.left, p.right, self.stride),
        ) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::Structural(format!(
                "{}x{} kernel (stride {}) does not fit a padded {h}x{w} input",
                self.kernel_h, self.kernel_w, self.stride
            ))),
        }
    }

    fn im2col(&self, x: &Activations<T>, oh: usize, ow: usize) -> Vec<T> {
        let (kh, kw, s) = (self.kernel_h, self.kernel_w, self.stride);
        let (h, w) = (x.height, x.width);
        let cols = x.batch * oh * ow;
        let row = x.row_len();
        let mut out = vec![T::zero(); self.patch_len() * cols];
        for c in 0..x.channels {
            for i in 0..kh {
                for j in 0..kw {
                    let r = (c * kh + i) * kw + j;
                    let dst = &mut out[r * cols..(r + 1) * cols];
                    for b in 0..x.batch {
                        let src = &x.data[c * row + b * h * w..c * row + (b + 1) * h * w];
                        for y in 0..oh {
                            let iy = (y * s + i) as isize - self.padding.top as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let base = (b * oh + y) * ow;
                            let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                            for xo in 0..ow {
                                let ix = (xo * s + j) as isize - self.padding.left as isize;
                                if ix >= 0 && ix < w as isize {
                                    dst[base + xo] = srow[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn col2im(&self, dcols: &[T], shape: (usize, usize, usize, usize), oh: usize, ow: usize) -> Activations<T> {
        let (channels, batch, h, w) = shape;
        let (kh, kw, s) = (self.kernel_h, self.kernel_w, self.stride);
        let mut dx = Activations::zeros(channels, batch, h, w);
        let cols = batch * oh * ow;
        let row = dx.row_len();
        for c in 0..channels {
            for i in 0..kh {
                for j in 0..kw {
                    let r = (c * kh + i) * kw + j;
                    let src = &dcols[r * cols..(r + 1) * cols];
                    for b in 0..batch {
                        for y in 0..oh {
                            let iy = (y * s + i) as isize - self.padding.top as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let base = (b * oh + y) * ow;
                            let drow = c * row + b * h * w + iy as usize * w;
                            for xo in 0..ow {
                                let ix = (xo * s + j) as isize - self.padding.left as isize;
                                if ix >= 0 && ix < w as isize {
                                    dx.data[drow + ix as usize] += src[base + xo];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn apply(&self, x: &Activations<T>) -> Result<(Activations<T>, Vec<T>, (usize, usize))> {
        if x.channels != self.in_channels {
            return Err(Error::Structural(format!(
                "conv expects {} input channels, got {}",
                self.in_channels, x.channels
            )));
        }
        let (oh, ow) = self.output_hw(x.height, x.width)?;
        let cols = self.im2col(x, oh, ow);
        let mut y = Activations::zeros(self.out_channels, x.batch, oh, ow);
        let n = y.row_len();
        for (o, chunk) in y.data.chunks_mut(n.max(1)).enumerate() {
            chunk.fill(self.bias[o]);
        }
        T::gemm(
            self.out_channels,
            self.patch_len(),
            n,
            T::one(),
            &self.weight,
            false,
            &cols,
            false,
            T::one(),
            &mut y.data,
        );
        Ok((y, cols, (oh, ow)))
    }

    pub fn infer(&self, x: &Activations<T>) -> Result<Activations<T>> {
        self.apply(x).map(|(y, _, _)| y)
    }

    pub fn forward(&mut self, x: &Activations<T>) -> Result<Activations<T>> {
        let (y, cols, out_hw) = self.apply(x)?;
        self.cache = Some(ConvCache {
            cols,
            in_shape: (x.channels, x.batch, x.height, x.width),
            out_hw,
        });
        Ok(y)
    }

    /// Stores parameter gradients; returns the input gradient when asked.
    pub fn backward(&mut self, dy: &Activations<T>, need_input_grad: bool) -> Option<Activations<T>> {
        let cache = self.cache.take().expect("conv backward without forward");
        let n = dy.row_len();
        let plen = self.patch_len();
        for (o, row) in dy.data.chunks(n.max(1)).enumerate() {
            self.grad_bias[o] = row.iter().copied().sum();
        }
        T::gemm(
            self.out_channels,
            n,
            plen,
            T::one(),
            &dy.data,
            false,
            &cache.cols,
            true,
            T::zero(),
            &mut self.grad_weight,
        );
        if !need_input_grad {
            return None;
        }
        let mut dcols = vec![T::zero(); plen * n];
        T::gemm(
            plen,
            self.out_channels,
            n,
            T::one(),
            &self.weight,
            true,
            &dy.data,
            false,
            T::zero(),
            &mut dcols,
        );
        let (oh, ow) = cache.out_hw;
        Some(self.col2im(&dcols, cache.in_shape, oh, ow))
    }
}

/// Single-sample convolution of an `in × H × W` buffer.
pub fn conv2d_forward<T: Real>(
    input: &[T],
    height: usize,
    width: usize,
    layer: &Conv2d<T>,
) -> Result<(Vec<T>, usize, usize)> {
    let x = Activations::from_samples::<f64>(
        &[&input.iter().map(|v| v.f64()).collect::<Vec<_>>()],
        layer.in_channels,
        height,
        width,
    )?;
    let y = layer.infer(&x)?;
    Ok((y.data, y.height, y.width))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `out × in`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Vec<T>,
    cache: Option<Vec<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
            grad_weight: vec![T::zero(); inputs * outputs],
            grad_bias: vec![T::zero(); outputs],
            cache: None,
        }
    }

    pub fn infer(&self, x: &Activations<T>) -> Result<Activations<T>> {
        let features = x.channels * x.height * x.width;
        if features != self.inputs || x.height != 1 || x.width != 1 {
            return Err(Error::Structural(format!(
                "linear layer expects {} flat features, got {}x{}x{}",
                self.inputs, x.channels, x.height, x.width
            )));
        }
        let b = x.batch;
        let mut y = Activations::zeros(self.outputs, b, 1, 1);
        for (o, row) in y.data.chunks_mut(b.max(1)).enumerate() {
            row.fill(self.bias[o]);
        }
        T::gemm(
            self.outputs,
            self.inputs,
            b,
            T::one(),
            &self.weight,
            false,
            &x.data,
            false,
            T::one(),
            &mut y.data,
        );
        Ok(y)
    }

    pub fn forward(&mut self, x: &Activations<T>) -> Result<Activations<T>> {
        let y = self.infer(x)?;
        self.cache = Some(x.data.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Activations<T>, need_input_grad: bool) -> Option<Activations<T>> {
        let x = self.cache.take().expect("linear backward without forward");
        let b = dy.batch;
        for (o, row) in dy.data.chunks(b.max(1)).enumerate() {
            self.grad_bias[o] = row.iter().copied().sum();
        }
        T::gemm(
            self.outputs,
            b,
            self.inputs,
            T::one(),
            &dy.data,
            false,
            &x,
            true,
            T::zero(),
            &mut self.grad_weight,
        );
        if !need_input_grad {
            return None;
        }
        let mut dx = Activations::zeros(self.inputs, b, 1, 1);
        T::gemm(
            self.inputs,
            self.outputs,
            b,
            T::one(),
            &self.weight,
            true,
            &dy.data,
            false,
            T::zero(),
            &mut dx.data,
        );
        Some(dx)
    }
}

/// `W * alpha + bias` for one input vector.
pub fn linear_forward<T: Real>(alpha: &[T], layer: &Linear<T>) -> Result<Vec<T>> {
    if alpha.len() != layer.inputs {
        return Err(Error::Structural(format!(
            "linear layer expects {} inputs, got {}",
            layer.inputs,
            alpha.len()
        )));
    }
    let x = Activations {
        channels: alpha.len(),
        batch: 1,
        height: 1,
        width: 1,
        data: alpha.to_vec(),
    };
    Ok(layer.infer(&x)?.data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub features: usize,
    pub gamma: Vec<T>,
    pub shift: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
    pub grad_gamma: Vec<T>,
    pub grad_shift: Vec<T>,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone, PartialEq)]
struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(features: usize, momentum: f64, eps: f64) -> Self {
        Self {
            features,
            gamma: vec![T::one(); features],
            shift: vec![T::zero(); features],
            running_mean: vec![T::zero(); features],
            running_var: vec![T::one(); features],
            momentum,
            eps,
            grad_gamma: vec![T::zero(); features],
            grad_shift: vec![T::zero(); features],
            cache: None,
        }
    }

    fn check(&self, x: &Activations<T>) -> Result<()> {
        if x.channels != self.features {
            return Err(Error::Structural(format!(
                "batch norm over {} features got {}",
                self.features, x.channels
            )));
        }
        Ok(())
    }

    pub fn infer(&self, x: &Activations<T>) -> Result<Activations<T>> {
        self.check(x)?;
        let mut y = x.clone();
        let n = x.row_len();
        let eps = T::of(self.eps);
        for (f, row) in y.data.chunks_mut(n.max(1)).enumerate() {
            let scale = self.gamma[f] / (self.running_var[f] + eps).sqrt();
            let mean = self.running_mean[f];
            let shift = self.shift[f];
            for v in row.iter_mut() {
                *v = (*v - mean) * scale + shift;
            }
        }
        Ok(y)
    }

    /// Normalizes with batch statistics and folds them into the running
    /// estimates (unbiased variance).
    pub fn forward(&mut self, x: &Activations<T>) -> Result<Activations<T>> {
        self.check(x)?;
        let n = x.row_len();
        let mut y = x.clone();
        let mut xhat = vec![T::zero(); x.data.len()];
        let mut inv_std = vec![T::zero(); self.features];
        let mom = T::of(self.momentum);
        let nf = T::of(n as f64);
        for f in 0..self.features {
            let row = &x.data[f * n..(f + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + T::of(self.eps)).sqrt();
            inv_std[f] = is;
            let (g, s) = (self.gamma[f], self.shift[f]);
            for i in 0..n {
                let h = (row[i] - mean) * is;
                xhat[f * n + i] = h;
                y.data[f * n + i] = g * h + s;
            }
            let unbiased = if n > 1 { var * nf / (nf - T::one()) } else { var };
            self.running_mean[f] = (T::one() - mom) * self.running_mean[f] + mom * mean;
            self.running_var[f] = (T::one() - mom) * self.running_var[f] + mom * unbiased;
        }
        self.cache = Some(BnCache { xhat, inv_std });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Activations<T>) -> Activations<T> {
        let cache = self.cache.take().expect("batch norm backward without forward");
        let n = dy.row_len();
        let nf = T::of(n as f64);
        let mut dx = dy.clone();
        for f in 0..self.features {
            let d = &dy.data[f * n..(f + 1) * n];
            let h = &cache.xhat[f * n..(f + 1) * n];
            let sum_d: T = d.iter().copied().sum();
            let sum_dh: T = d.iter().zip(h).map(|(a, b)| *a * *b).sum();
            self.grad_gamma[f] = sum_dh;
            self.grad_shift[f] = sum_d;
            let g = self.gamma[f];
            let k = g * cache.inv_std[f] / nf;
            for i in 0..n {
                dx.data[f * n + i] = k * (nf * d[i] - sum_d - h[i] * sum_dh);
            }
        }
        dx
    }
}

/// Batch normalization of a `features × batch` block in the given phase.
pub fn batchnorm_forward<T: Real>(
    x: &Activations<T>,
    layer: &mut BatchNorm<T>,
    phase: Phase,
) -> Result<Activations<T>> {
    match phase {
        Phase::Train => layer.forward(x),
        Phase::Infer => layer.infer(x),
    }
}

pub fn relu<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|v| v.max(T::zero())).collect()
}

pub(crate) fn relu_in_place<T: Real>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Overflow-free logistic function.
#[inline]
pub fn sigmoid_scalar(r: f64) -> f64 {
    if r >= 0.0 {
        1.0 / (1.0 + (-r).exp())
    } else {
        let e = r.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid<T: Real>(r: &[T]) -> Vec<f64> {
    r.iter().map(|v| sigmoid_scalar(v.f64())).collect()
}

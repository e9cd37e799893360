//! Neural network building blocks on `(N, C, H, W)` tensors.
//!
//! Every layer owns its parameters, gradients, and SGD momentum state, and
//! implements an explicit `forward` / `backward` pair.  Convolutions are
//! evaluated one image at a time through an im2col buffer and a single `f32`
//! matrix product, which keeps peak memory proportional to one feature map
//! while still using the vectorized GEMM kernel.  All computations are
//! sequential and deterministic: identical inputs, parameters, and RNG state
//! produce bit-identical outputs.

use ndarray::{Array1, Array2, Array3, Array4, ArrayView2, ArrayView3, Axis};
use rand_chacha::ChaCha8Rng;

use crate::error::NetError;

/// Whether a forward pass should cache intermediates and apply stochastic
/// layers.
///
/// `Train` caches everything `backward` needs and samples dropout masks;
/// `Eval` is cache-free and deterministic (dropout becomes the identity).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Variance-scaling normal draw: `N(0, 2 / fan_in)`, suited to layers
    /// followed by a rectifier.
    HeNormal,
    /// All zeros (used for biases).
    Zeros,
}

/// Draws one standard normal sample via the Box-Muller transform.
///
/// Uses two uniform draws per sample; deterministic for a fixed RNG state.
pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    // Guard the logarithm away from u == 0.
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn he_normal(shape: (usize, usize, usize, usize), fan_in: usize, rng: &mut ChaCha8Rng) -> Array4<f32> {
    let std = (2.0 / fan_in as f64).sqrt();
    let mut w = Array4::zeros(shape);
    for v in w.iter_mut() {
        *v = (standard_normal(rng) * std) as f32;
    }
    w
}

/// Output spatial size of a correlation with the given geometry.
pub(crate) fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Unfolds one `(C, H, W)` image into a `(C*kh*kw, oh*ow)` patch matrix.
///
/// Row `(c*kh + ky)*kw + kx`, column `oy*ow + ox` holds
/// `x[c, oy*stride + ky - pad, ox*stride + kx - pad]`, with zeros outside the
/// image.  The stride-1 fast path copies whole row segments.
pub(crate) fn im2col(
    x: ArrayView3<f32>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array2<f32> {
    let (c_in, h, w) = x.dim();
    let oh = conv_out_dim(h, k, stride, pad);
    let ow = conv_out_dim(w, k, stride, pad);
    let mut cols = Array2::<f32>::zeros((c_in * k * k, oh * ow));
    for c in 0..c_in {
        let plane = x.index_axis(Axis(0), c);
        for ky in 0..k {
            for kx in 0..k {
                let row_idx = (c * k + ky) * k + kx;
                let mut row = cols.row_mut(row_idx);
                let row_slice = row.as_slice_mut().expect("cols row is contiguous");
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = plane.index_axis(Axis(0), iy as usize);
                    let src = src.as_slice().expect("input row is contiguous");
                    let dst = &mut row_slice[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        // ix = ox + kx - pad stays in [0, w): clip both ends.
                        let shift = kx as isize - pad as isize;
                        let ox_lo = (-shift).max(0) as usize;
                        let ox_hi = ((w as isize - shift).min(ow as isize)).max(0) as usize;
                        if ox_lo < ox_hi {
                            let ix_lo = (ox_lo as isize + shift) as usize;
                            dst[ox_lo..ox_hi]
                                .copy_from_slice(&src[ix_lo..ix_lo + (ox_hi - ox_lo)]);
                        }
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds a patch matrix back into a `(C, H, W)` image,
/// summing every contribution that maps to the same pixel.
///
/// For all `x` and `m` of matching geometry,
/// `<im2col(x), m> == <x, col2im(m)>`.
pub(crate) fn col2im(
    cols: ArrayView2<f32>,
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array3<f32> {
    let oh = conv_out_dim(h, k, stride, pad);
    let ow = conv_out_dim(w, k, stride, pad);
    debug_assert_eq!(cols.dim(), (c_in * k * k, oh * ow));
    let mut x = Array3::<f32>::zeros((c_in, h, w));
    for c in 0..c_in {
        let mut plane = x.index_axis_mut(Axis(0), c);
        for ky in 0..k {
            for kx in 0..k {
                let row_idx = (c * k + ky) * k + kx;
                let row = cols.row(row_idx);
                let row_slice = row.as_slice().expect("cols row is contiguous");
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let mut dst = plane.index_axis_mut(Axis(0), iy as usize);
                    let dst = dst.as_slice_mut().expect("image row is contiguous");
                    let src = &row_slice[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        let shift = kx as isize - pad as isize;
                        let ox_lo = (-shift).max(0) as usize;
                        let ox_hi = ((w as isize - shift).min(ow as isize)).max(0) as usize;
                        for ox in ox_lo..ox_hi {
                            dst[(ox as isize + shift) as usize] += src[ox];
                        }
                    } else {
                        for (ox, s) in src.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += *s;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// Momentum SGD update applied in place to one parameter tensor.
///
/// `v = momentum * v + g`, then `w -= lr * v`, where `g` is the stored
/// gradient plus `2 * weight_decay * w` (the derivative of an L2 penalty).
fn sgd_update(
    w: &mut [f32],
    grad: &[f32],
    vel: &mut [f32],
    lr: f32,
    momentum: f32,
    weight_decay: f32,
) {
    for i in 0..w.len() {
        let g = grad[i] + 2.0 * weight_decay * w[i];
        vel[i] = momentum * vel[i] + g;
        w[i] -= lr * vel[i];
    }
}

fn sum_sq(values: &[f32]) -> f64 {
    values.iter().map(|&v| (v as f64) * (v as f64)).sum()
}

/// 2D correlation layer with square kernels.
///
/// Weights have shape `(c_out, c_in, k, k)`; the optional bias has one entry
/// per output channel.  Backward recomputes the im2col expansion from the
/// cached input instead of storing it, trading FLOPs for memory.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Array4<f32>,
    pub b: Option<Array1<f32>>,
    stride: usize,
    pad: usize,
    grad_w: Array4<f32>,
    grad_b: Option<Array1<f32>>,
    vel_w: Array4<f32>,
    vel_b: Option<Array1<f32>>,
    cache_x: Option<Array4<f32>>,
}

impl Conv2d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = c_in * k * k;
        let w = match init {
            Init::HeNormal => he_normal((c_out, c_in, k, k), fan_in, rng),
            Init::Zeros => Array4::zeros((c_out, c_in, k, k)),
        };
        Conv2d {
            grad_w: Array4::zeros(w.raw_dim()),
            vel_w: Array4::zeros(w.raw_dim()),
            w,
            b: bias.then(|| Array1::zeros(c_out)),
            grad_b: bias.then(|| Array1::zeros(c_out)),
            vel_b: bias.then(|| Array1::zeros(c_out)),
            stride,
            pad,
            cache_x: None,
        }
    }

    fn w_mat(&self) -> ArrayView2<'_, f32> {
        let (co, ci, kh, kw) = self.w.dim();
        self.w
            .view()
            .into_shape_with_order((co, ci * kh * kw))
            .expect("conv weight is standard layout")
    }

    pub fn out_channels(&self) -> usize {
        self.w.dim().0
    }

    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Array4<f32> {
        let (n, c_in, h, w) = x.dim();
        let (c_out, ci_w, k, _) = self.w.dim();
        assert_eq!(c_in, ci_w, "conv input channels");
        let oh = conv_out_dim(h, k, self.stride, self.pad);
        let ow = conv_out_dim(w, k, self.stride, self.pad);
        let mut y = Array4::<f32>::zeros((n, c_out, oh, ow));
        let w_mat = self.w_mat();
        for i in 0..n {
            let cols = im2col(x.index_axis(Axis(0), i), k, self.stride, self.pad);
            let out = w_mat.dot(&cols);
            let mut y_i = y.index_axis_mut(Axis(0), i);
            let mut y_flat = y_i
                .view_mut()
                .into_shape_with_order((c_out, oh * ow))
                .expect("output is standard layout");
            y_flat.assign(&out);
        }
        if let Some(b) = &self.b {
            for c in 0..c_out {
                y.index_axis_mut(Axis(1), c).mapv_inplace(|v| v + b[c]);
            }
        }
        if mode == Mode::Train {
            self.cache_x = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, gy: &Array4<f32>) -> Array4<f32> {
        let x = self.cache_x.take().expect("conv backward without forward");
        let (n, c_in, h, w) = x.dim();
        let (c_out, _, k, _) = self.w.dim();
        let (gn, gc, oh, ow) = gy.dim();
        assert_eq!((gn, gc), (n, c_out), "conv gradient batch/channels");
        let mut gx = Array4::<f32>::zeros((n, c_in, h, w));
        let w_mat = self.w_mat().to_owned();
        let mut grad_w_mat = Array2::<f32>::zeros((c_out, c_in * k * k));
        for i in 0..n {
            let cols = im2col(x.index_axis(Axis(0), i), k, self.stride, self.pad);
            let gy_i = gy.index_axis(Axis(0), i);
            let gy_flat = gy_i
                .into_shape_with_order((c_out, oh * ow))
                .expect("gradient is standard layout");
            grad_w_mat = grad_w_mat + gy_flat.dot(&cols.t());
            let gcols = w_mat.t().dot(&gy_flat);
            let gx_i = col2im(gcols.view(), c_in, h, w, k, self.stride, self.pad);
            gx.index_axis_mut(Axis(0), i).assign(&gx_i);
        }
        let grad_w4 = grad_w_mat
            .into_shape_with_order((c_out, c_in, k, k))
            .expect("gradient reshapes to kernel layout");
        self.grad_w += &grad_w4;
        if let Some(gb) = &mut self.grad_b {
            for c in 0..c_out {
                gb[c] += gy.index_axis(Axis(1), c).sum();
            }
        }
        gx
    }

    pub fn zero_grad(&mut self) {
        self.grad_w.fill(0.0);
        if let Some(gb) = &mut self.grad_b {
            gb.fill(0.0);
        }
    }

    pub fn step(&mut self, lr: f32, momentum: f32, weight_decay: f32) {
        sgd_update(
            self.w.as_slice_mut().expect("standard layout"),
            self.grad_w.as_slice().expect("standard layout"),
            self.vel_w.as_slice_mut().expect("standard layout"),
            lr,
            momentum,
            weight_decay,
        );
        if let (Some(b), Some(gb), Some(vb)) = (&mut self.b, &self.grad_b, &mut self.vel_b) {
            // Biases never carry the L2 penalty.
            sgd_update(
                b.as_slice_mut().expect("standard layout"),
                gb.as_slice().expect("standard layout"),
                vb.as_slice_mut().expect("standard layout"),
                lr,
                momentum,
                0.0,
            );
        }
    }

    /// Sum of squared kernel weights (bias excluded), for the L2 penalty.
    pub fn kernel_sum_sq(&self) -> f64 {
        sum_sq(self.w.as_slice().expect("standard layout"))
    }

    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        let mut out = vec![(
            "w".to_string(),
            self.w.shape().to_vec(),
            self.w.as_slice().expect("standard layout"),
        )];
        if let Some(b) = &self.b {
            out.push((
                "b".to_string(),
                b.shape().to_vec(),
                b.as_slice().expect("standard layout"),
            ));
        }
        out
    }

    /// Accumulated gradients in the same order as [`Conv2d::tensors`].
    pub fn grad_tensors(&self) -> Vec<(String, &[f32])> {
        let mut out = vec![(
            "w".to_string(),
            self.grad_w.as_slice().expect("standard layout"),
        )];
        if let Some(gb) = &self.grad_b {
            out.push(("b".to_string(), gb.as_slice().expect("standard layout")));
        }
        out
    }

    pub fn load_tensor(&mut self, name: &str, data: &[f32]) -> Result<(), NetError> {
        let target: &mut [f32] = match name {
            "w" => self.w.as_slice_mut().expect("standard layout"),
            "b" => self
                .b
                .as_mut()
                .ok_or_else(|| NetError::Shape("conv has no bias tensor".into()))?
                .as_slice_mut()
                .expect("standard layout"),
            _ => return Err(NetError::Shape(format!("unknown conv tensor {name}"))),
        };
        if target.len() != data.len() {
            return Err(NetError::Shape(format!(
                "conv tensor {name}: expected {} values, got {}",
                target.len(),
                data.len()
            )));
        }
        target.copy_from_slice(data);
        Ok(())
    }
}

/// Transposed 2D convolution (fractionally strided correlation).
///
/// Weights have shape `(c_in, c_out, k, k)`.  The forward pass scatters each
/// input pixel through the kernel, exactly inverting the geometry of a
/// stride-`s` correlation: an `(H, W)` input becomes
/// `(s*(H-1) + k - 2*pad, ...)`, which for `k=4, s=2, pad=1` is `(2H, 2W)`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub w: Array4<f32>,
    pub b: Array1<f32>,
    stride: usize,
    pad: usize,
    grad_w: Array4<f32>,
    grad_b: Array1<f32>,
    vel_w: Array4<f32>,
    vel_b: Array1<f32>,
    cache_x: Option<Array4<f32>>,
}

impl ConvTranspose2d {
    /// Builds a transposed convolution whose kernels perform bilinear
    /// interpolation.
    ///
    /// Each output channel reads only its matching input channel (kernels are
    /// zero across channels); the per-channel kernel is the outer product of
    /// `[0.25, 0.75, 0.75, 0.25]` with itself, the exact weights of 2x
    /// bilinear upsampling.  Requires `c_in == c_out` and `k=4, s=2, pad=1`.
    pub fn new_bilinear(channels: usize) -> Self {
        let k = 4usize;
        let taps = [0.25f32, 0.75, 0.75, 0.25];
        let mut w = Array4::<f32>::zeros((channels, channels, k, k));
        for c in 0..channels {
            for ky in 0..k {
                for kx in 0..k {
                    w[[c, c, ky, kx]] = taps[ky] * taps[kx];
                }
            }
        }
        ConvTranspose2d {
            grad_w: Array4::zeros(w.raw_dim()),
            vel_w: Array4::zeros(w.raw_dim()),
            w,
            b: Array1::zeros(channels),
            grad_b: Array1::zeros(channels),
            vel_b: Array1::zeros(channels),
            stride: 2,
            pad: 1,
        cache_x: None,
        }
    }

    fn w_mat(&self) -> ArrayView2<'_, f32> {
        let (ci, co, kh, kw) = self.w.dim();
        self.w
            .view()
            .into_shape_with_order((ci, co * kh * kw))
            .expect("deconv weight is standard layout")
    }

    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Array4<f32> {
        let (n, c_in, h, w) = x.dim();
        let (ci_w, c_out, k, _) = self.w.dim();
        assert_eq!(c_in, ci_w, "deconv input channels");
        let oh = self.stride * (h - 1) + k - 2 * self.pad;
        let ow = self.stride * (w - 1) + k - 2 * self.pad;
        let mut y = Array4::<f32>::zeros((n, c_out, oh, ow));
        let w_mat = self.w_mat();
        for i in 0..n {
            let x_i = x.index_axis(Axis(0), i);
            let x_flat = x_i
                .into_shape_with_order((c_in, h * w))
                .expect("input is standard layout");
            let cols = w_mat.t().dot(&x_flat);
            let y_i = col2im(cols.view(), c_out, oh, ow, k, self.stride, self.pad);
            y.index_axis_mut(Axis(0), i).assign(&y_i);
        }
        for c in 0..c_out {
            y.index_axis_mut(Axis(1), c).mapv_inplace(|v| v + self.b[c]);
        }
        if mode == Mode::Train {
            self.cache_x = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, gy: &Array4<f32>) -> Array4<f32> {
        let x = self.cache_x.take().expect("deconv backward without forward");
        let (n, c_in, h, w) = x.dim();
        let (_, c_out, k, _) = self.w.dim();
        let mut gx = Array4::<f32>::zeros((n, c_in, h, w));
        let w_mat = self.w_mat().to_owned();
        let mut grad_w_mat = Array2::<f32>::zeros((c_in, c_out * k * k));
        for i in 0..n {
            // The adjoint of scatter-by-kernel is gather-by-kernel: unfold the
            // output gradient with the forward geometry.
            let gcols = im2col(gy.index_axis(Axis(0), i), k, self.stride, self.pad);
            let x_i = x.index_axis(Axis(0), i);
            let x_flat = x_i
                .into_shape_with_order((c_in, h * w))
                .expect("input is standard layout");
            grad_w_mat = grad_w_mat + x_flat.dot(&gcols.t());
            let gx_i = w_mat.dot(&gcols);
            let gx_i = gx_i
                .into_shape_with_order((c_in, h, w))
                .expect("gradient reshapes to image");
            gx.index_axis_mut(Axis(0), i).assign(&gx_i);
        }
        let grad_w4 = grad_w_mat
            .into_shape_with_order((c_in, c_out, k, k))
            .expect("gradient reshapes to kernel layout");
        self.grad_w += &grad_w4;
        for c in 0..c_out {
            self.grad_b[c] += gy.index_axis(Axis(1), c).sum();
        }
        gx
    }

    pub fn zero_grad(&mut self) {
        self.grad_w.fill(0.0);
        self.grad_b.fill(0.0);
    }

    pub fn step(&mut self, lr: f32, momentum: f32, weight_decay: f32) {
        sgd_update(
            self.w.as_slice_mut().expect("standard layout"),
            self.grad_w.as_slice().expect("standard layout"),
            self.vel_w.as_slice_mut().expect("standard layout"),
            lr,
            momentum,
            weight_decay,
        );
        sgd_update(
            self.b.as_slice_mut().expect("standard layout"),
            self.grad_b.as_slice().expect("standard layout"),
            self.vel_b.as_slice_mut().expect("standard layout"),
            lr,
            momentum,
            0.0,
        );
    }

    pub fn kernel_sum_sq(&self) -> f64 {
        sum_sq(self.w.as_slice().expect("standard layout"))
    }

    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        vec![
            (
                "w".to_string(),
                self.w.shape().to_vec(),
                self.w.as_slice().expect("standard layout"),
            ),
            (
                "b".to_string(),
                self.b.shape().to_vec(),
                self.b.as_slice().expect("standard layout"),
            ),
        ]
    }

    /// Accumulated gradients in the same order as
    /// [`ConvTranspose2d::tensors`].
    pub fn grad_tensors(&self) -> Vec<(String, &[f32])> {
        vec![
            ("w".to_string(), self.grad_w.as_slice().expect("standard layout")),
            ("b".to_string(), self.grad_b.as_slice().expect("standard layout")),
        ]
    }

    pub fn load_tensor(&mut self, name: &str, data: &[f32]) -> Result<(), NetError> {
        let target: &mut [f32] = match name {
            "w" => self.w.as_slice_mut().expect("standard layout"),
            "b" => self.b.as_slice_mut().expect("standard layout"),
            _ => return Err(NetError::Shape(format!("unknown deconv tensor {name}"))),
        };
        if target.len() != data.len() {
            return Err(NetError::Shape(format!(
                "deconv tensor {name}: expected {} values, got {}",
                target.len(),
                data.len()
            )));
        }
        target.copy_from_slice(data);
        Ok(())
    }
}

/// Per-channel batch normalization over `(N, H, W)`.
///
/// Training normalizes with the biased batch statistics and folds them into
/// the running averages as `running = 0.9 * running + 0.1 * batch`; inference
/// normalizes with the running averages.  Epsilon is `1e-5`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Array1<f32>,
    pub beta: Array1<f32>,
    pub running_mean: Array1<f32>,
    pub running_var: Array1<f32>,
    grad_gamma: Array1<f32>,
    grad_beta: Array1<f32>,
    vel_gamma: Array1<f32>,
    vel_beta: Array1<f32>,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    x_hat: Array4<f32>,
    inv_std: Array1<f32>,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            grad_gamma: Array1::zeros(channels),
            grad_beta: Array1::zeros(channels),
            vel_gamma: Array1::zeros(channels),
            vel_beta: Array1::zeros(channels),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.gamma.len(), "batchnorm channels");
        let mut y = Array4::<f32>::zeros((n, c, h, w));
        match mode {
            Mode::Train => {
                let m = (n * h * w) as f64;
                let mut x_hat = Array4::<f32>::zeros((n, c, h, w));
                let mut inv_std = Array1::<f32>::zeros(c);
                for ch in 0..c {
                    let xc = x.index_axis(Axis(1), ch);
                    let mean = xc.iter().map(|&v| v as f64).sum::<f64>() / m;
                    let var = xc
                        .iter()
                        .map(|&v| {
                            let d = v as f64 - mean;
                            d * d
                        })
                        .sum::<f64>()
                        / m;
                    let istd = 1.0 / (var + BN_EPS).sqrt();
                    inv_std[ch] = istd as f32;
                    self.running_mean[ch] =
                        (BN_MOMENTUM * self.running_mean[ch] as f64 + (1.0 - BN_MOMENTUM) * mean) as f32;
                    self.running_var[ch] =
                        (BN_MOMENTUM * self.running_var[ch] as f64 + (1.0 - BN_MOMENTUM) * var) as f32;
                    let g = self.gamma[ch];
                    let b = self.beta[ch];
                    let mut xh = x_hat.index_axis_mut(Axis(1), ch);
                    let mut yc = y.index_axis_mut(Axis(1), ch);
                    ndarray::Zip::from(&mut xh).and(&mut yc).and(&xc).for_each(
                        |xh_v, y_v, &x_v| {
                            let normalized = ((x_v as f64 - mean) * istd) as f32;
                            *xh_v = normalized;
                            *y_v = g * normalized + b;
                        },
                    );
                }
                self.cache = Some(BnCache { x_hat, inv_std });
            }
            Mode::Eval => {
                for ch in 0..c {
                    let mean = self.running_mean[ch] as f64;
                    let istd = 1.0 / (self.running_var[ch] as f64 + BN_EPS).sqrt();
                    let g = self.gamma[ch] as f64;
                    let b = self.beta[ch] as f64;
                    let xc = x.index_axis(Axis(1), ch);
                    let mut yc = y.index_axis_mut(Axis(1), ch);
                    ndarray::Zip::from(&mut yc).and(&xc).for_each(|y_v, &x_v| {
                        *y_v = (g * ((x_v as f64 - mean) * istd) + b) as f32;
                    });
                }
            }
        }
        y
    }

    pub fn backward(&mut self, gy: &Array4<f32>) -> Array4<f32> {
        let cache = self.cache.take().expect("batchnorm backward without forward");
        let (n, c, h, w) = gy.dim();
        let m = (n * h * w) as f64;
        let mut gx = Array4::<f32>::zeros((n, c, h, w));
        for ch in 0..c {
            let gyc = gy.index_axis(Axis(1), ch);
            let xh = cache.x_hat.index_axis(Axis(1), ch);
            let sum_gy: f64 = gyc.iter().map(|&v| v as f64).sum();
            let sum_gy_xh: f64 = gyc
                .iter()
                .zip(xh.iter())
                .map(|(&g, &x)| g as f64 * x as f64)
                .sum();
            self.grad_gamma[ch] += sum_gy_xh as f32;
            self.grad_beta[ch] += sum_gy as f32;
            let scale = self.gamma[ch] as f64 * cache.inv_std[ch] as f64;
            let mean_gy = sum_gy / m;
            let mean_gy_xh = sum_gy_xh / m;
            let mut gxc = gx.index_axis_mut(Axis(1), ch);
            ndarray::Zip::from(&mut gxc).and(&gyc).and(&xh).for_each(|gx_v, &gy_v, &xh_v| {
                *gx_v = (scale * (gy_v as f64 - mean_gy - xh_v as f64 * mean_gy_xh)) as f32;
            });
        }
        gx
    }

    pub fn zero_grad(&mut self) {
        self.grad_gamma.fill(0.0);
        self.grad_beta.fill(0.0);
    }

    pub fn step(&mut self, lr: f32, momentum: f32) {
        sgd_update(
            self.gamma.as_slice_mut().expect("standard layout"),
            self.grad_gamma.as_slice().expect("standard layout"),
            self.vel_gamma.as_slice_mut().expect("standard layout"),
            lr,
            momentum,
            0.0,
        );
        sgd_update(
            self.beta.as_slice_mut().expect("standard layout"),
            self.grad_beta.as_slice().expect("standard layout"),
            self.vel_beta.as_slice_mut().expect("standard layout"),
            lr,
            momentum,
            0.0,
        );
    }

    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        [
            ("gamma", &self.gamma),
            ("beta", &self.beta),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ]
        .into_iter()
        .map(|(name, a)| {
            (
                name.to_string(),
                a.shape().to_vec(),
                a.as_slice().expect("standard layout"),
            )
        })
        .collect()
    }

    /// Gradients of the trainable parameters (running statistics have none).
    pub fn grad_tensors(&self) -> Vec<(String, &[f32])> {
        vec![
            (
                "gamma".to_string(),
                self.grad_gamma.as_slice().expect("standard layout"),
            ),
            (
                "beta".to_string(),
                self.grad_beta.as_slice().expect("standard layout"),
            ),
        ]
    }

    pub fn load_tensor(&mut self, name: &str, data: &[f32]) -> Result<(), NetError> {
        let target = match name {
            "gamma" => &mut self.gamma,
            "beta" => &mut self.beta,
            "running_mean" => &mut self.running_mean,
            "running_var" => &mut self.running_var,
            _ => return Err(NetError::Shape(format!("unknown batchnorm tensor {name}"))),
        };
        if target.len() != data.len() {
            return Err(NetError::Shape(format!(
                "batchnorm tensor {name}: expected {} values, got {}",
                target.len(),
                data.len()
            )));
        }
        target
            .as_slice_mut()
            .expect("standard layout")
            .copy_from_slice(data);
        Ok(())
    }
}

/// Rectified linear unit; caches the activation sign for backward.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Relu::default()
    }

    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Array4<f32> {
        let y = x.mapv(|v| v.max(0.0));
        if mode == Mode::Train {
            self.mask = Some(x.iter().map(|&v| v > 0.0).collect());
        }
        y
    }

    pub fn backward(&mut self, gy: &Array4<f32>) -> Array4<f32> {
        let mask = self.mask.take().expect("relu backward without forward");
        let mut gx = gy.clone();
        for (g, &keep) in gx.iter_mut().zip(mask.iter()) {
            if !keep {
                *g = 0.0;
            }
        }
        gx
    }
}

/// 2x2 max pooling with stride 2, recording argmax switches.
///
/// Requires even spatial dimensions.  Switches store the winning position
/// inside each 2x2 block (row-major 0..=3, first maximum wins on ties) so the
/// matching unpooling stage can invert the operation.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    switches: Option<Switches>,
}

/// Pooling switches: the winning intra-block offsets plus the pre-pool size.
#[derive(Debug, Clone)]
pub struct Switches {
    pub index: Array4<u8>,
    pub input_hw: (usize, usize),
}

impl MaxPool2 {
    pub fn new() -> Self {
        MaxPool2::default()
    }

    pub fn forward(&mut self, x: &Array4<f32>) -> Result<Array4<f32>, NetError> {
        let (n, c, h, w) = x.dim();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(NetError::Shape(format!(
                "max pooling needs even spatial dims, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut y = Array4::<f32>::zeros((n, c, oh, ow));
        let mut idx = Array4::<u8>::zeros((n, c, oh, ow));
        for i in 0..n {
            for ch in 0..c {
                let plane = x.index_axis(Axis(0), i);
                let plane = plane.index_axis(Axis(0), ch);
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_k = 0u8;
                        for (k, (dy, dx)) in
                            [(0usize, 0usize), (0, 1), (1, 0), (1, 1)].into_iter().enumerate()
                        {
                            let v = plane[[2 * oy + dy, 2 * ox + dx]];
                            if v > best {
                                best = v;
                                best_k = k as u8;
                            }
                        }
                        y[[i, ch, oy, ox]] = best;
                        idx[[i, ch, oy, ox]] = best_k;
                    }
                }
            }
        }
        self.switches = Some(Switches {
            index: idx,
            input_hw: (h, w),
        });
        Ok(y)
    }

    /// The switches recorded by the most recent forward pass.
    pub fn take_switches(&mut self) -> Option<Switches> {
        self.switches.clone()
    }

    pub fn backward(&mut self, gy: &Array4<f32>) -> Array4<f32> {
        let sw = self.switches.take().expect("pool backward without forward");
        pool_scatter(gy, &sw)
    }
}

/// Scatters `values` (pooled resolution) to pre-pool resolution at the switch
/// positions, zeros elsewhere.  Shared by max-pool backward and unpooling
/// forward, which are the same linear map.
pub(crate) fn pool_scatter(values: &Array4<f32>, sw: &Switches) -> Array4<f32> {
    let (n, c, oh, ow) = values.dim();
    let (h, w) = sw.input_hw;
    let mut out = Array4::<f32>::zeros((n, c, h, w));
    for i in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let k = sw.index[[i, ch, oy, ox]] as usize;
                    let (dy, dx) = (k / 2, k % 2);
                    out[[i, ch, 2 * oy + dy, 2 * ox + dx]] = values[[i, ch, oy, ox]];
                }
            }
        }
    }
    out
}

/// Gathers pre-pool-resolution gradients back down to pooled resolution at the
/// switch positions: the adjoint of [`pool_scatter`], used by unpool backward.
pub(crate) fn pool_gather(grad: &Array4<f32>, sw: &Switches) -> Array4<f32> {
    let (n, c, oh, ow) = sw.index.dim();
    let mut out = Array4::<f32>::zeros((n, c, oh, ow));
    for i in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let k = sw.index[[i, ch, oy, ox]] as usize;
                    let (dy, dx) = (k / 2, k % 2);
                    out[[i, ch, oy, ox]] = grad[[i, ch, 2 * oy + dy, 2 * ox + dx]];
                }
            }
        }
    }
    out
}

/// Sampling weights for one axis of a 2x bilinear upsample.
///
/// Output sample `o` reads source coordinate `(o + 0.5)/2 - 0.5`; the two
/// nearest integer taps are blended and clamped at the borders.
fn bilinear_axis_taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f32, f32)> {
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) / 2.0 - 0.5;
            let i0 = src.floor();
            let t = src - i0;
            let lo = (i0.max(0.0) as usize).min(in_len - 1);
            let hi = ((i0 + 1.0).max(0.0) as usize).min(in_len - 1);
            (lo, hi, (1.0 - t) as f32, t as f32)
        })
        .collect()
}

/// Parameter-free 2x bilinear upsampling.
#[derive(Debug, Clone, Default)]
pub struct BilinearUp2 {
    cache_in_hw: Option<(usize, usize)>,
}

impl BilinearUp2 {
    pub fn new() -> Self {
        BilinearUp2::default()
    }

    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        let (oh, ow) = (2 * h, 2 * w);
        let ty = bilinear_axis_taps(oh, h);
        let tx = bilinear_axis_taps(ow, w);
        let mut y = Array4::<f32>::zeros((n, c, oh, ow));
        for i in 0..n {
            for ch in 0..c {
                let src = x.index_axis(Axis(0), i);
                let src = src.index_axis(Axis(0), ch);
                for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                        y[[i, ch, oy, ox]] = wy0 * wx0 * src[[y0, x0]]
                            + wy0 * wx1 * src[[y0, x1]]
                            + wy1 * wx0 * src[[y1, x0]]
                            + wy1 * wx1 * src[[y1, x1]];
                    }
                }
            }
        }
        if mode == Mode::Train {
            self.cache_in_hw = Some((h, w));
        }
        y
    }

    pub fn backward(&mut self, gy: &Array4<f32>) -> Array4<f32> {
        let (h, w) = self.cache_in_hw.take().expect("upsample backward without forward");
        let (n, c, oh, ow) = gy.dim();
        let ty = bilinear_axis_taps(oh, h);
        let tx = bilinear_axis_taps(ow, w);
        let mut gx = Array4::<f32>::zeros((n, c, h, w));
        for i in 0..n {
            for ch in 0..c {
                let mut dst = gx.index_axis_mut(Axis(0), i);
                let mut dst = dst.index_axis_mut(Axis(0), ch);
                for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                        let g = gy[[i, ch, oy, ox]];
                        dst[[y0, x0]] += wy0 * wx0 * g;
                        dst[[y0, x1]] += wy0 * wx1 * g;
                        dst[[y1, x0]] += wy1 * wx0 * g;
                        dst[[y1, x1]] += wy1 * wx1 * g;
                    }
                }
            }
        }
        gx
    }
}

/// Inverted dropout: keeps each activation with probability `1 - p` and
/// rescales by `1/(1 - p)` so expectations match inference.
///
/// Masks are drawn from the RNG passed to `forward`, in element order, so a
/// fixed RNG state yields a fixed mask.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub p: f64,
    mask: Option<Vec<f32>>,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout probability in [0, 1)");
        Dropout { p, mask: None }
    }

    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode, rng: &mut ChaCha8Rng) -> Array4<f32> {
        match mode {
            Mode::Eval => x.clone(),
            Mode::Train => {
                use rand::Rng;
                let keep = 1.0 - self.p;
                let scale = (1.0 / keep) as f32;
                let mask: Vec<f32> = (0..x.len())
                    .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
                    .collect();
                let mut y = x.clone();
                for (v, &m) in y.iter_mut().zip(mask.iter()) {
                    *v *= m;
                }
                self.mask = Some(mask);
                y
            }
        }
    }

    pub fn backward(&mut self, gy: &Array4<f32>) -> Array4<f32> {
        let mask = self.mask.take().expect("dropout backward without forward");
        let mut gx = gy.clone();
        for (g, &m) in gx.iter_mut().zip(mask.iter()) {
            *g *= m;
        }
        gx
    }
}

/// Fusion layer collapsing the per-slice score maps into one map.
///
/// A 1x1 convolution across the stack axis: `y[b,h,w] = sum_s w[s] *
/// x[b,s,h,w] + bias`.  Initialized to the stack mean (`w = 1/S`, `bias = 0`).
#[derive(Debug, Clone)]
pub struct StackFusion {
    pub w: Array1<f32>,
    pub b: f32,
    grad_w: Array1<f32>,
    grad_b: f32,
    vel_w: Array1<f32>,
    vel_b: f32,
    cache_x: Option<Array4<f32>>,
}

impl StackFusion {
    pub fn new(stack_size: usize) -> Self {
        StackFusion {
            w: Array1::from_elem(stack_size, 1.0 / stack_size as f32),
            b: 0.0,
            grad_w: Array1::zeros(stack_size),
            grad_b: 0.0,
            vel_w: Array1::zeros(stack_size),
            vel_b: 0.0,
            cache_x: None,
        }
    }

    /// Forward over `(B, S, H, W)` score maps, producing `(B, H, W)`.
    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Array3<f32> {
        let (b, s, h, w) = x.dim();
        assert_eq!(s, self.w.len(), "fusion stack size");
        let mut y = Array3::<f32>::from_elem((b, h, w), self.b);
        for si in 0..s {
            let ws = self.w[si];
            let xs = x.index_axis(Axis(1), si);
            ndarray::Zip::from(&mut y).and(&xs).for_each(|y_v, &x_v| {
                *y_v += ws * x_v;
            });
        }
        if mode == Mode::Train {
            self.cache_x = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, gy: &Array3<f32>) -> Array4<f32> {
        let x = self.cache_x.take().expect("fusion backward without forward");
        let (b, s, h, w) = x.dim();
        let mut gx = Array4::<f32>::zeros((b, s, h, w));
        for si in 0..s {
            let xs = x.index_axis(Axis(1), si);
            let dw: f64 = gy
                .iter()
                .zip(xs.iter())
                .map(|(&g, &v)| g as f64 * v as f64)
                .sum();
            self.grad_w[si] += dw as f32;
            let ws = self.w[si];
            let mut gxs = gx.index_axis_mut(Axis(1), si);
            ndarray::Zip::from(&mut gxs).and(gy).for_each(|gx_v, &g| {
                *gx_v = ws * g;
            });
        }
        self.grad_b += gy.iter().map(|&g| g as f64).sum::<f64>() as f32;
        gx
    }

    pub fn zero_grad(&mut self) {
        self.grad_w.fill(0.0);
        self.grad_b = 0.0;
    }

    pub fn step(&mut self, lr: f32, momentum: f32, weight_decay: f32) {
        sgd_update(
            self.w.as_slice_mut().expect("standard layout"),
            self.grad_w.as_slice().expect("standard layout"),
            self.vel_w.as_slice_mut().expect("standard layout"),
            lr,
            momentum,
            weight_decay,
        );
        let g = self.grad_b;
        self.vel_b = momentum * self.vel_b + g;
        self.b -= lr * self.vel_b;
    }

    pub fn kernel_sum_sq(&self) -> f64 {
        sum_sq(self.w.as_slice().expect("standard layout"))
    }

    /// Accumulated gradients of the fusion weights and bias.
    pub fn grads(&self) -> (&[f32], f32) {
        (
            self.grad_w.as_slice().expect("standard layout"),
            self.grad_b,
        )
    }
}

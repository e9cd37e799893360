//! Encoder-decoder network regressing per-pixel disparity from a focal stack.
//!
//! Every slice of the stack passes independently through a 13-convolution
//! encoder (two convolutions per stage at full and half resolution, three per
//! stage below that, each 3x3 with batch normalization and ReLU, followed by
//! 2x2 max pooling) and a mirrored decoder that restores resolution stage by
//! stage.  The final decoder convolution maps to a single score map per
//! slice; a 1x1 fusion convolution across the stack axis then produces the
//! disparity map.
//!
//! With width multiplier `w`, stage channel counts are
//! `c_k = max(1, round(w * base_k))` for `base = [64, 128, 256, 512, 512]`:
//!
//! | stage | encoder convs            | pooled size | decoder convs                  |
//! |-------|--------------------------|-------------|--------------------------------|
//! | 1     | conv1_1, conv1_2 (c1)    | H/2         | conv1_2d (c1), conv1_1d (-> 1) |
//! | 2     | conv2_1, conv2_2 (c2)    | H/4         | conv2_2d (c2), conv2_1d (-> c1)|
//! | 3     | conv3_1..conv3_3 (c3)    | H/8         | conv3_3d..conv3_1d (-> c2)     |
//! | 4     | conv4_1..conv4_3 (c4)    | H/16        | conv4_3d..conv4_1d (-> c3)     |
//! | 5     | conv5_1..conv5_3 (c5)    | H/32        | conv5_3d..conv5_1d (-> c4)     |
//!
//! The upsampling step `up_k` between decoder stages is chosen by the
//! [`Variant`]: switch unpooling, fixed bilinear interpolation, or a learned
//! 4x4 stride-2 transposed convolution initialized as bilinear interpolation.
//! Concatenation variants additionally merge encoder features (`conv1_2`,
//! `conv2_2`, `conv3_3` outputs) into the matching decoder stage, doubling the
//! input channels of its first convolution.  Dropout (p = 0.5) sits after the
//! three deepest poolings and before the three deepest upsamplings.
//!
//! Inputs are `(B, S, H, W, C)` stacks with `H, W >= 32`; sizes that are not
//! multiples of 32 are reflect-padded (bottom and right, edge sample not
//! repeated) so all five poolings halve exactly, and the output is cropped
//! back to `(B, H, W)`.

use std::collections::HashMap;

use ndarray::{Array3, Array4, Array5, Axis, s};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::NetError;
use crate::layers::{
    pool_gather, pool_scatter, BatchNorm2d, BilinearUp2, Conv2d, ConvTranspose2d, Dropout, Init,
    MaxPool2, Mode, Relu, StackFusion, Switches,
};

/// Base channel widths of the five encoder stages before scaling.
pub const STAGE_BASE_CHANNELS: [usize; 5] = [64, 128, 256, 512, 512];

/// Convolutions per stage (shared by encoder and decoder).
pub const STAGE_CONV_COUNTS: [usize; 5] = [2, 2, 3, 3, 3];

/// Spatial downsampling factor across the whole encoder.
pub const TOTAL_STRIDE: usize = 32;

/// Decoder upsampling strategy and skip wiring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Invert each pooling by placing values at the recorded switch
    /// positions.
    Unpool,
    /// Fixed (parameter-free) 2x bilinear interpolation.
    Bilinear,
    /// Learned 4x4 stride-2 transposed convolutions, bilinear-initialized.
    Upconv,
    /// `Upconv` plus a skip concatenation from `conv1_2`.
    Cc1,
    /// `Upconv` plus skip concatenations from `conv1_2` and `conv2_2`.
    Cc2,
    /// `Upconv` plus skip concatenations from `conv1_2`, `conv2_2`, and
    /// `conv3_3`.
    Cc3,
}

impl Variant {
    /// Number of encoder stages that feed a skip concatenation (stages
    /// `1..=n`).
    pub fn skip_stages(self) -> usize {
        match self {
            Variant::Unpool | Variant::Bilinear | Variant::Upconv => 0,
            Variant::Cc1 => 1,
            Variant::Cc2 => 2,
            Variant::Cc3 => 3,
        }
    }

    /// Whether upsampling is a learned transposed convolution.
    pub fn learned_upsampling(self) -> bool {
        !matches!(self, Variant::Unpool | Variant::Bilinear)
    }
}

/// Structural description of a model: enough to build it from scratch.
/// Every field has a default, so partially specified configurations fill in
/// the rest; unknown keys are still rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    pub variant: Variant,
    /// Number of focal stack slices consumed per sample.
    pub stack_size: usize,
    /// Channel width multiplier applied to every stage.
    pub width: f64,
    /// Channels per input slice (3 for RGB).
    pub input_channels: usize,
    /// Drop probability of the deep-stage dropout layers.
    pub dropout_p: f64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            variant: Variant::Cc3,
            stack_size: 10,
            width: 1.0,
            input_channels: 3,
            dropout_p: 0.5,
        }
    }
}

impl NetworkSpec {
    /// Channel count of stage `k` (0-based) under the width multiplier.
    pub fn stage_channels(&self, stage: usize) -> usize {
        let scaled = (self.width * STAGE_BASE_CHANNELS[stage] as f64).round();
        (scaled as usize).max(1)
    }

    /// Validates the structural invariants.
    pub fn validate(&self) -> Result<(), NetError> {
        if self.stack_size == 0 {
            return Err(NetError::Parameter("stack_size must be at least 1".into()));
        }
        if self.input_channels == 0 {
            return Err(NetError::Parameter("input_channels must be at least 1".into()));
        }
        if !self.width.is_finite() || self.width <= 0.0 {
            return Err(NetError::Parameter(format!(
                "width must be positive and finite, got {}",
                self.width
            )));
        }
        if (self.width * STAGE_BASE_CHANNELS[0] as f64).round() < 1.0 {
            return Err(NetError::Parameter(format!(
                "width {} rounds the first stage below one channel",
                self.width
            )));
        }
        if !self.dropout_p.is_finite() || !(0.0..1.0).contains(&self.dropout_p) {
            return Err(NetError::Parameter(format!(
                "dropout_p must lie in [0, 1), got {}",
                self.dropout_p
            )));
        }
        Ok(())
    }
}

/// A convolution with optional batch normalization and rectification.
#[derive(Debug, Clone)]
struct ConvBlock {
    conv: Conv2d,
    bn: Option<BatchNorm2d>,
    relu: Option<Relu>,
}

impl ConvBlock {
    fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Array4<f32> {
        let mut y = self.conv.forward(x, mode);
        if let Some(bn) = &mut self.bn {
            y = bn.forward(&y, mode);
        }
        if let Some(relu) = &mut self.relu {
            y = relu.forward(&y, mode);
        }
        y
    }

    fn backward(&mut self, gy: &Array4<f32>) -> Array4<f32> {
        let mut g = gy.clone();
        if let Some(relu) = &mut self.relu {
            g = relu.backward(&g);
        }
        if let Some(bn) = &mut self.bn {
            g = bn.backward(&g);
        }
        self.conv.backward(&g)
    }
}

/// One step of the trunk: the per-slice encoder-decoder chain.
#[derive(Debug, Clone)]
enum Node {
    Block(ConvBlock),
    Pool { pool: MaxPool2, stage: usize },
    Unpool { stage: usize, cache: Option<Switches> },
    Upconv { deconv: ConvTranspose2d, bn: BatchNorm2d, relu: Relu },
    Bilinear(BilinearUp2),
    Drop(Dropout),
    SaveSkip { stage: usize },
    ConcatSkip { stage: usize, main_channels: usize },
}

/// The full model: trunk applied per slice, then stack fusion.
#[derive(Debug, Clone)]
pub struct DdffNet {
    spec: NetworkSpec,
    nodes: Vec<(String, Node)>,
    fusion: StackFusion,
    dropout_rng: ChaCha8Rng,
    train_ctx: Option<PassCtx>,
}

/// Builds a freshly initialized model.
///
/// Convolution kernels draw from a variance-scaling normal distribution,
/// transposed convolutions start as exact bilinear interpolation, batch
/// normalization starts at identity, and the fusion layer starts as the stack
/// mean.  All draws come from a generator seeded with `seed`, so equal
/// `(spec, seed)` pairs produce bit-identical models.
pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<DdffNet, NetError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes: Vec<(String, Node)> = Vec::new();
    let c: Vec<usize> = (0..5).map(|k| spec.stage_channels(k)).collect();
    let skips = spec.variant.skip_stages();

    let conv_block = |c_in: usize, c_out: usize, rng: &mut ChaCha8Rng| ConvBlock {
        conv: Conv2d::new(c_in, c_out, 3, 1, 1, false, Init::HeNormal, rng),
        bn: Some(BatchNorm2d::new(c_out)),
        relu: Some(Relu::new()),
    };

    // Encoder: convolutions, skip taps, pooling, and deep-stage dropout.
    let mut prev = spec.input_channels;
    for stage in 0..5 {
        let n_convs = STAGE_CONV_COUNTS[stage];
        for i in 0..n_convs {
            let c_in = if i == 0 { prev } else { c[stage] };
            nodes.push((
                format!("conv{}_{}", stage + 1, i + 1),
                Node::Block(conv_block(c_in, c[stage], &mut rng)),
            ));
        }
        if stage < skips {
            nodes.push((format!("skip{}", stage + 1), Node::SaveSkip { stage }));
        }
        nodes.push((
            format!("pool{}", stage + 1),
            Node::Pool {
                pool: MaxPool2::new(),
                stage,
            },
        ));
        if stage >= 2 {
            nodes.push((format!("drop{}", stage + 1), Node::Drop(Dropout::new(spec.dropout_p))));
        }
        prev = c[stage];
    }

    // Decoder: dropout, upsampling, optional skip concatenation, mirrored
    // convolutions.  The last convolution of each stage hands off to the next
    // shallower stage's channel count; the very last maps to one score map.
    for stage in (0..5).rev() {
        if stage >= 2 {
            nodes.push((
                format!("drop{}d", stage + 1),
                Node::Drop(Dropout::new(spec.dropout_p)),
            ));
        }
        let up_name = format!("up{}", stage + 1);
        let up_node = match spec.variant {
            Variant::Unpool => Node::Unpool { stage, cache: None },
            Variant::Bilinear => Node::Bilinear(BilinearUp2::new()),
            _ => Node::Upconv {
                deconv: ConvTranspose2d::new_bilinear(c[stage]),
                bn: BatchNorm2d::new(c[stage]),
                relu: Relu::new(),
            },
        };
        nodes.push((up_name, up_node));
        let mut next_in = c[stage];
        if stage < skips {
            nodes.push((
                format!("merge{}", stage + 1),
                Node::ConcatSkip {
                    stage,
                    main_channels: c[stage],
                },
            ));
            next_in = 2 * c[stage];
        }
        let n_convs = STAGE_CONV_COUNTS[stage];
        for i in (0..n_convs).rev() {
            let name = format!("conv{}_{}d", stage + 1, i + 1);
            let c_in = if i == n_convs - 1 { next_in } else { c[stage] };
            let node = if stage == 0 && i == 0 {
                // Final regression convolution: one output map, plain bias,
                // no normalization or rectification.
                Node::Block(ConvBlock {
                    conv: Conv2d::new(c_in, 1, 3, 1, 1, true, Init::HeNormal, &mut rng),
                    bn: None,
                    relu: None,
                })
            } else {
                let c_out = if i == 0 { c[stage - 1] } else { c[stage] };
                Node::Block(conv_block(c_in, c_out, &mut rng))
            };
            nodes.push((name, node));
        }
    }

    Ok(DdffNet {
        spec: spec.clone(),
        nodes,
        fusion: StackFusion::new(spec.stack_size),
        dropout_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15),
        train_ctx: None,
    })
}

/// Reflect-pads the bottom and right edges so both spatial dims become
/// multiples of [`TOTAL_STRIDE`].  The reflection does not repeat the edge
/// sample; `H >= 32` guarantees enough interior to reflect from.
fn pad_to_stride(x: &Array4<f32>) -> Array4<f32> {
    let (n, c, h, w) = x.dim();
    let th = h.div_ceil(TOTAL_STRIDE) * TOTAL_STRIDE;
    let tw = w.div_ceil(TOTAL_STRIDE) * TOTAL_STRIDE;
    if th == h && tw == w {
        return x.clone();
    }
    let reflect = |i: usize, n: usize| if i < n { i } else { 2 * n - 2 - i };
    let mut out = Array4::<f32>::zeros((n, c, th, tw));
    for ni in 0..n {
        for ci in 0..c {
            let src = x.index_axis(Axis(0), ni);
            let src = src.index_axis(Axis(0), ci);
            let mut dst = out.index_axis_mut(Axis(0), ni);
            let mut dst = dst.index_axis_mut(Axis(0), ci);
            for y in 0..th {
                let sy = reflect(y, h);
                for xx in 0..tw {
                    dst[[y, xx]] = src[[sy, reflect(xx, w)]];
                }
            }
        }
    }
    out
}

/// Per-pass side state: pooling switches and skip activations, keyed by
/// stage.
#[derive(Debug, Clone, Default)]
struct PassCtx {
    switches: HashMap<usize, Switches>,
    skips: HashMap<usize, Array4<f32>>,
    skip_grads: HashMap<usize, Array4<f32>>,
}

impl DdffNet {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Reseeds the dropout mask generator (training determinism hook).
    pub fn set_dropout_seed(&mut self, seed: u64) {
        self.dropout_rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn trunk_forward(&mut self, x: &Array4<f32>, mode: Mode, ctx: &mut PassCtx) -> Array4<f32> {
        let mut cur = x.clone();
        for (_, node) in self.nodes.iter_mut() {
            cur = match node {
                Node::Block(block) => block.forward(&cur, mode),
                Node::Pool { pool, stage } => {
                    let y = pool.forward(&cur).expect("trunk spatial dims stay even");
                    let sw = pool.take_switches().expect("pooling records switches");
                    ctx.switches.insert(*stage, sw);
                    y
                }
                Node::Unpool { stage, cache } => {
                    let sw = ctx
                        .switches
                        .get(stage)
                        .expect("matching pooling ran earlier in this pass");
                    let y = pool_scatter(&cur, sw);
                    if mode == Mode::Train {
                        *cache = Some(sw.clone());
                    }
                    y
                }
                Node::Upconv { deconv, bn, relu } => {
                    let y = deconv.forward(&cur, mode);
                    let y = bn.forward(&y, mode);
                    relu.forward(&y, mode)
                }
                Node::Bilinear(up) => up.forward(&cur, mode),
                Node::Drop(drop) => drop.forward(&cur, mode, &mut self.dropout_rng),
                Node::SaveSkip { stage } => {
                    ctx.skips.insert(*stage, cur.clone());
                    cur
                }
                Node::ConcatSkip { stage, .. } => {
                    let skip = ctx
                        .skips
                        .remove(stage)
                        .expect("skip tap ran earlier in this pass");
                    ndarray::concatenate(Axis(1), &[cur.view(), skip.view()])
                        .expect("skip and decoder shapes agree")
                }
            };
        }
        cur
    }

    fn trunk_backward(&mut self, gy: &Array4<f32>, ctx: &mut PassCtx) -> Array4<f32> {
        let mut cur = gy.clone();
        for (_, node) in self.nodes.iter_mut().rev() {
            cur = match node {
                Node::Block(block) => block.backward(&cur),
                Node::Pool { pool, .. } => pool.backward(&cur),
                Node::Unpool { cache, .. } => {
                    let sw = cache.take().expect("unpool backward without forward");
                    pool_gather(&cur, &sw)
                }
                Node::Upconv { deconv, bn, relu } => {
                    let g = relu.backward(&cur);
                    let g = bn.backward(&g);
                    deconv.backward(&g)
                }
                Node::Bilinear(up) => up.backward(&cur),
                Node::Drop(drop) => drop.backward(&cur),
                Node::SaveSkip { stage } => {
                    let extra = ctx
                        .skip_grads
                        .remove(stage)
                        .expect("skip consumer ran later in the forward pass");
                    cur + extra
                }
                Node::ConcatSkip { stage, main_channels } => {
                    let main = cur.slice(s![.., ..*main_channels, .., ..]).to_owned();
                    let skip = cur.slice(s![.., *main_channels.., .., ..]).to_owned();
                    ctx.skip_grads.insert(*stage, skip);
                    main
                }
            };
        }
        cur
    }

    fn check_input(&self, input: &Array5<f32>) -> Result<(), NetError> {
        let (_, s_dim, h, w, c_dim) = input.dim();
        if s_dim != self.spec.stack_size {
            return Err(NetError::Shape(format!(
                "expected {} stack slices, got {}",
                self.spec.stack_size, s_dim
            )));
        }
        if c_dim != self.spec.input_channels {
            return Err(NetError::Shape(format!(
                "expected {} input channels, got {}",
                self.spec.input_channels, c_dim
            )));
        }
        if h < TOTAL_STRIDE || w < TOTAL_STRIDE {
            return Err(NetError::Shape(format!(
                "spatial dims must be at least {TOTAL_STRIDE}, got {h}x{w}"
            )));
        }
        Ok(())
    }

    /// Rearranges `(B, S, H, W, C)` stacks into `(B*S, C, H, W)` slice images.
    fn fold_slices(input: &Array5<f32>) -> Array4<f32> {
        let (b, s_dim, h, w, c_dim) = input.dim();
        let perm = input.view().permuted_axes([0, 1, 4, 2, 3]);
        let std = perm.as_standard_layout().into_owned();
        std.into_shape_with_order((b * s_dim, c_dim, h, w))
            .expect("permuted stack reshapes to slice batch")
    }

    /// Runs the model in the given mode.
    ///
    /// `Eval` is deterministic and cache-free (bit-identical across repeated
    /// calls); `Train` samples dropout and caches intermediates for a
    /// subsequent [`DdffNet::backward`].
    pub fn forward_mode(&mut self, input: &Array5<f32>, mode: Mode) -> Result<Array3<f32>, NetError> {
        self.check_input(input)?;
        let (b, s_dim, h, w, _) = input.dim();
        let folded = Self::fold_slices(input);
        let padded = pad_to_stride(&folded);
        let (_, _, ph, pw) = padded.dim();
        if mode == Mode::Train && (ph != h || pw != w) {
            return Err(NetError::Shape(format!(
                "training passes need spatial dims divisible by {TOTAL_STRIDE}, got {h}x{w}"
            )));
        }
        let mut ctx = PassCtx::default();
        let scores = self.trunk_forward(&padded, mode, &mut ctx);
        let (n_out, c_out, oh, ow) = scores.dim();
        debug_assert_eq!((n_out, c_out, oh, ow), (b * s_dim, 1, ph, pw));
        let cropped = scores.slice(s![.., 0, ..h, ..w]).to_owned();
        let per_slice = cropped
            .into_shape_with_order((b, s_dim, h, w))
            .expect("scores reshape to stack layout");
        if mode == Mode::Train {
            self.train_ctx = Some(ctx);
        }
        Ok(self.fusion.forward(&per_slice, mode))
    }

    /// Inference: disparity maps for a batch of focal stacks.
    pub fn forward(&mut self, input: &Array5<f32>) -> Result<Array3<f32>, NetError> {
        self.forward_mode(input, Mode::Eval)
    }

    /// Backpropagates a loss gradient through the most recent training-mode
    /// forward pass and accumulates parameter gradients.
    pub fn backward(&mut self, grad_output: &Array3<f32>) {
        let ctx = self
            .train_ctx
            .take()
            .expect("backward requires a training-mode forward");
        let mut ctx = ctx;
        let per_slice = self.fusion.backward(grad_output);
        let (b, s_dim, h, w) = per_slice.dim();
        let folded = per_slice
            .into_shape_with_order((b * s_dim, 1, h, w))
            .expect("stack gradient reshapes to slice batch");
        let gx = self.trunk_backward(&folded, &mut ctx);
        debug_assert_eq!(gx.dim().0, b * s_dim);
    }

    pub fn zero_grad(&mut self) {
        for (_, node) in self.nodes.iter_mut() {
            match node {
                Node::Block(block) => {
                    block.conv.zero_grad();
                    if let Some(bn) = &mut block.bn {
                        bn.zero_grad();
                    }
                }
                Node::Upconv { deconv, bn, .. } => {
                    deconv.zero_grad();
                    bn.zero_grad();
                }
                _ => {}
            }
        }
        self.fusion.zero_grad();
    }

    /// Momentum SGD step over every trainable parameter.
    ///
    /// `weight_decay` applies only to convolution kernels (including
    /// transposed convolutions and the fusion weights) as the gradient of an
    /// L2 penalty; biases and normalization parameters are exempt.
    pub fn step(&mut self, lr: f32, momentum: f32, weight_decay: f32) {
        for (_, node) in self.nodes.iter_mut() {
            match node {
                Node::Block(block) => {
                    block.conv.step(lr, momentum, weight_decay);
                    if let Some(bn) = &mut block.bn {
                        bn.step(lr, momentum);
                    }
                }
                Node::Upconv { deconv, bn, .. } => {
                    deconv.step(lr, momentum, weight_decay);
                    bn.step(lr, momentum);
                }
                _ => {}
            }
        }
        self.fusion.step(lr, momentum, weight_decay);
    }

    /// Sum of squared convolution kernel weights: the L2 penalty term.
    pub fn kernel_sum_sq(&self) -> f64 {
        let mut total = 0.0;
        for (_, node) in self.nodes.iter() {
            match node {
                Node::Block(block) => total += block.conv.kernel_sum_sq(),
                Node::Upconv { deconv, .. } => total += deconv.kernel_sum_sq(),
                _ => {}
            }
        }
        total + self.fusion.kernel_sum_sq()
    }

    /// Every named tensor: trainable parameters plus normalization running
    /// statistics, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let mut out = Vec::new();
        for (name, node) in self.nodes.iter() {
            match node {
                Node::Block(block) => {
                    for (sub, shape, data) in block.conv.tensors() {
                        out.push((format!("{name}.{sub}"), shape, data.to_vec()));
                    }
                    if let Some(bn) = &block.bn {
                        for (sub, shape, data) in bn.tensors() {
                            out.push((format!("{name}.bn.{sub}"), shape, data.to_vec()));
                        }
                    }
                }
                Node::Upconv { deconv, bn, .. } => {
                    for (sub, shape, data) in deconv.tensors() {
                        out.push((format!("{name}.{sub}"), shape, data.to_vec()));
                    }
                    for (sub, shape, data) in bn.tensors() {
                        out.push((format!("{name}.bn.{sub}"), shape, data.to_vec()));
                    }
                }
                _ => {}
            }
        }
        out.push((
            "score.w".to_string(),
            vec![self.fusion.w.len()],
            self.fusion.w.to_vec(),
        ));
        out.push(("score.b".to_string(), vec![1], vec![self.fusion.b]));
        out
    }

    /// Accumulated gradients of every trainable parameter, keyed like
    /// [`DdffNet::named_tensors`] (running statistics carry no gradient and
    /// are absent).
    pub fn named_gradients(&self) -> Vec<(String, Vec<f32>)> {
        let mut out = Vec::new();
        for (name, node) in self.nodes.iter() {
            match node {
                Node::Block(block) => {
                    for (sub, data) in block.conv.grad_tensors() {
                        out.push((format!("{name}.{sub}"), data.to_vec()));
                    }
                    if let Some(bn) = &block.bn {
                        for (sub, data) in bn.grad_tensors() {
                            out.push((format!("{name}.bn.{sub}"), data.to_vec()));
                        }
                    }
                }
                Node::Upconv { deconv, bn, .. } => {
                    for (sub, data) in deconv.grad_tensors() {
                        out.push((format!("{name}.{sub}"), data.to_vec()));
                    }
                    for (sub, data) in bn.grad_tensors() {
                        out.push((format!("{name}.bn.{sub}"), data.to_vec()));
                    }
                }
                _ => {}
            }
        }
        let (gw, gb) = self.fusion.grads();
        out.push(("score.w".to_string(), gw.to_vec()));
        out.push(("score.b".to_string(), vec![gb]));
        out
    }

    /// Writes `data` into the tensor called `name`.
    pub fn load_tensor(&mut self, name: &str, data: &[f32]) -> Result<(), NetError> {
        if name == "score.w" {
            if data.len() != self.fusion.w.len() {
                return Err(NetError::Shape(format!(
                    "score.w expects {} values, got {}",
                    self.fusion.w.len(),
                    data.len()
                )));
            }
            self.fusion
                .w
                .as_slice_mut()
                .expect("standard layout")
                .copy_from_slice(data);
            return Ok(());
        }
        if name == "score.b" {
            if data.len() != 1 {
                return Err(NetError::Shape("score.b expects one value".into()));
            }
            self.fusion.b = data[0];
            return Ok(());
        }
        let (node_name, sub) = name
            .split_once('.')
            .ok_or_else(|| NetError::Shape(format!("malformed tensor name {name}")))?;
        for (candidate, node) in self.nodes.iter_mut() {
            if candidate != node_name {
                continue;
            }
            return match node {
                Node::Block(block) => {
                    if let Some(bn_sub) = sub.strip_prefix("bn.") {
                        block
                            .bn
                            .as_mut()
                            .ok_or_else(|| {
                                NetError::Shape(format!("{node_name} has no normalization"))
                            })?
                            .load_tensor(bn_sub, data)
                    } else {
                        block.conv.load_tensor(sub, data)
                    }
                }
                Node::Upconv { deconv, bn, .. } => {
                    if let Some(bn_sub) = sub.strip_prefix("bn.") {
                        bn.load_tensor(bn_sub, data)
                    } else {
                        deconv.load_tensor(sub, data)
                    }
                }
                _ => Err(NetError::Shape(format!(
                    "node {node_name} has no tensors"
                ))),
            };
        }
        Err(NetError::Shape(format!("unknown tensor {name}")))
    }

    /// Total count of trainable parameters (running statistics excluded).
    pub fn parameter_count(&self) -> usize {
        self.named_tensors()
            .iter()
            .filter(|(name, _, _)| !name.ends_with(".running_mean") && !name.ends_with(".running_var"))
            .map(|(_, _, data)| data.len())
            .sum()
    }

    /// Errors if any parameter or running statistic is non-finite.
    pub fn check_finite(&self) -> Result<(), NetError> {
        for (name, _, data) in self.named_tensors() {
            if data.iter().any(|v| !v.is_finite()) {
                return Err(NetError::Parameter(format!(
                    "tensor {name} contains non-finite values"
                )));
            }
        }
        Ok(())
    }
}

//! Momentum-SGD training over focal-stack patches.
//!
//! The optimizer follows the reference recipe: batches of 2, learning rate
//! 1e-3 decayed by 0.9 every 4 epochs, momentum 0.9, and L2 weight decay
//! 5e-4 applied to convolution kernels.  Patches are split into training and
//! validation sets *by source stack*, never by patch, so windows of one stack
//! cannot leak across the split.  The model snapshot with the best validation
//! loss is returned (best training loss when the split leaves no validation
//! stacks).  All randomness (split, epoch shuffling, dropout) derives from
//! the configured seed, making reruns bit-identical.

use ndarray::{Array3, Array5, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::NetError;
use crate::layers::Mode;
use crate::loss::{masked_l2_loss, DEFAULT_WEIGHT_DECAY};
use crate::network::DdffNet;
use crate::patches::Patch;

/// Hyperparameters of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Coefficient of the L2 penalty on convolution kernels.
    pub weight_decay: f64,
    /// Multiplicative learning-rate decay factor.
    pub lr_decay: f64,
    /// Apply the decay factor once per this many epochs.
    pub lr_decay_epochs: usize,
    /// Fraction of source stacks held out for validation.
    pub validation_fraction: f64,
    /// Seed for the split, shuffling, and dropout.
    pub seed: u64,
    /// Stop once the epoch training loss falls below this fraction of the
    /// first epoch's training loss.
    pub early_stop_ratio: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 2,
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            lr_decay: 0.9,
            lr_decay_epochs: 4,
            validation_fraction: 0.2,
            seed: 0,
            early_stop_ratio: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.epochs == 0 {
            return Err(NetError::Parameter("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(NetError::Parameter("batch_size must be at least 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(NetError::Parameter(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(NetError::Parameter(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(NetError::Parameter(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if !(0.0..=1.0).contains(&self.lr_decay) || self.lr_decay == 0.0 {
            return Err(NetError::Parameter(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if self.lr_decay_epochs == 0 {
            return Err(NetError::Parameter(
                "lr_decay_epochs must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(NetError::Parameter(format!(
                "validation_fraction must lie in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        if let Some(r) = self.early_stop_ratio {
            if !(0.0..1.0).contains(&r) || r == 0.0 {
                return Err(NetError::Parameter(format!(
                    "early_stop_ratio must lie in (0, 1), got {r}"
                )));
            }
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.lr_decay_epochs) as i32)
    }
}

/// Loss measurements for one epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Pixel-weighted mean squared error over all training batches.
    pub train_data_term: f64,
    /// Data term plus the L2 kernel penalty at epoch end.
    pub train_total: f64,
    /// Mean squared error over the validation patches, when a validation
    /// split exists.
    pub val_data_term: Option<f64>,
}

/// Summary of a completed training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    /// Epoch whose snapshot was returned.
    pub best_epoch: usize,
    /// Criterion value (validation loss, or training loss without a split)
    /// of the returned snapshot.
    pub best_criterion: f64,
    /// Whether the early-stop ratio ended the run before `epochs`.
    pub stopped_early: bool,
    pub train_stacks: Vec<usize>,
    pub val_stacks: Vec<usize>,
}

/// Stacks patch windows into one `(B, S, size, size, C)` batch with matching
/// target and mask tensors.
fn assemble_batch(patches: &[&Patch]) -> (Array5<f32>, Array3<f32>, Array3<bool>) {
    let b = patches.len();
    let (s, h, w, c) = patches[0].data.dim();
    let mut input = Array5::<f32>::zeros((b, s, h, w, c));
    let mut target = Array3::<f32>::zeros((b, h, w));
    let mut mask = Array3::<bool>::from_elem((b, h, w), false);
    for (i, p) in patches.iter().enumerate() {
        input.index_axis_mut(Axis(0), i).assign(&p.data);
        target.index_axis_mut(Axis(0), i).assign(&p.target);
        mask.index_axis_mut(Axis(0), i).assign(&p.mask);
    }
    (input, target, mask)
}

/// Mean squared error of the model over `patches` in evaluation mode,
/// weighted by valid pixel counts.  `None` when no patch has valid pixels.
fn evaluate_data_term(
    net: &mut DdffNet,
    patches: &[&Patch],
    batch_size: usize,
) -> Result<Option<f64>, NetError> {
    let mut sum_sq = 0.0f64;
    let mut count = 0usize;
    for chunk in patches.chunks(batch_size) {
        let (input, target, mask) = assemble_batch(chunk);
        let pred = net.forward_mode(&input, Mode::Eval)?;
        let loss = masked_l2_loss(&pred, &target, &mask);
        sum_sq += loss.data_term * loss.valid_count as f64;
        count += loss.valid_count;
    }
    Ok((count > 0).then(|| sum_sq / count as f64))
}

/// Splits source stack indices into training and validation sets.
///
/// Stacks are shuffled deterministically; `floor(n * fraction)` of them are
/// held out.  Returns `(train, validation)` index lists, both sorted.
fn split_stacks(
    patches: &[Patch],
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut stacks: Vec<usize> = patches.iter().map(|p| p.stack_index).collect();
    stacks.sort_unstable();
    stacks.dedup();
    stacks.shuffle(rng);
    let n_val = ((stacks.len() as f64) * fraction).floor() as usize;
    let mut val: Vec<usize> = stacks[..n_val].to_vec();
    let mut train: Vec<usize> = stacks[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Trains `net` in place and restores the best snapshot before returning.
///
/// Aborts with [`NetError::Diverged`] if any batch loss or any parameter
/// becomes non-finite.
pub fn train(net: &mut DdffNet, patches: &[Patch], cfg: &TrainConfig) -> Result<TrainReport, NetError> {
    cfg.validate()?;
    if patches.is_empty() {
        return Err(NetError::Parameter("no training patches supplied".into()));
    }
    let first_dim = patches[0].data.dim();
    for p in patches {
        if p.data.dim() != first_dim {
            return Err(NetError::Shape(
                "all patches must share one window geometry".into(),
            ));
        }
    }
    if first_dim.0 != net.spec().stack_size {
        return Err(NetError::Shape(format!(
            "patches carry {} slices but the model expects {}",
            first_dim.0,
            net.spec().stack_size
        )));
    }

    // Independent deterministic random streams for the three stochastic
    // ingredients.
    let mut split_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    split_rng.set_stream(1);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(2);
    net.set_dropout_seed(cfg.seed);

    let (train_stacks, val_stacks) = split_stacks(patches, cfg.validation_fraction, &mut split_rng);
    let train_patches: Vec<&Patch> = patches
        .iter()
        .filter(|p| train_stacks.contains(&p.stack_index))
        .collect();
    let val_patches: Vec<&Patch> = patches
        .iter()
        .filter(|p| val_stacks.contains(&p.stack_index))
        .collect();
    if train_patches.is_empty() {
        return Err(NetError::Parameter(
            "validation split left no training patches".into(),
        ));
    }
    log::info!(
        "training on {} patches from stacks {:?}, validating on {} patches from stacks {:?}",
        train_patches.len(),
        train_stacks,
        val_patches.len(),
        val_stacks
    );

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, DdffNet)> = None;
    let mut first_epoch_loss = None;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let mut order: Vec<usize> = (0..train_patches.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut sum_sq = 0.0f64;
        let mut count = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let selected: Vec<&Patch> = chunk.iter().map(|&i| train_patches[i]).collect();
            let (input, target, mask) = assemble_batch(&selected);
            net.zero_grad();
            let pred = net.forward_mode(&input, Mode::Train)?;
            let loss = masked_l2_loss(&pred, &target, &mask);
            if !loss.data_term.is_finite() {
                return Err(NetError::Diverged {
                    epoch,
                    batch: batch_idx,
                    what: format!("loss {}", loss.data_term),
                });
            }
            if loss.valid_count == 0 {
                log::warn!(
                    "epoch {epoch} batch {batch_idx}: no valid pixels, step is regularizer-only"
                );
            }
            net.backward(&loss.grad);
            net.step(lr as f32, cfg.momentum as f32, cfg.weight_decay as f32);
            sum_sq += loss.data_term * loss.valid_count as f64;
            count += loss.valid_count;
        }
        if net.check_finite().is_err() {
            return Err(NetError::Diverged {
                epoch,
                batch: 0,
                what: "non-finite parameters after epoch".into(),
            });
        }

        let train_data_term = if count > 0 { sum_sq / count as f64 } else { 0.0 };
        let train_total = train_data_term + cfg.weight_decay * net.kernel_sum_sq();
        let val_data_term = if val_patches.is_empty() {
            None
        } else {
            evaluate_data_term(net, &val_patches, cfg.batch_size)?
        };
        let criterion = val_data_term.unwrap_or(train_data_term);
        if best.as_ref().is_none_or(|(_, c, _)| criterion < *c) {
            best = Some((epoch, criterion, net.clone()));
        }
        log::info!(
            "epoch {epoch}: lr {lr:.6}, train mse {train_data_term:.6}, total {train_total:.6}{}",
            match val_data_term {
                Some(v) => format!(", val mse {v:.6}"),
                None => String::new(),
            }
        );
        history.push(EpochStats {
            epoch,
            learning_rate: lr,
            train_data_term,
            train_total,
            val_data_term,
        });

        let reference = *first_epoch_loss.get_or_insert(train_data_term);
        if let Some(ratio) = cfg.early_stop_ratio {
            if train_data_term < ratio * reference {
                log::info!(
                    "early stop: epoch {epoch} training loss {train_data_term:.6} fell below {ratio} x first-epoch {reference:.6}"
                );
                stopped_early = true;
                break;
            }
        }
    }

    let (best_epoch, best_criterion, best_net) = best.expect("at least one epoch ran");
    *net = best_net;
    Ok(TrainReport {
        history,
        best_epoch,
        best_criterion,
        stopped_early,
        train_stacks,
        val_stacks,
    })
}

/// Runs inference over one full focal stack, returning a dense disparity map.
pub fn predict_stack(
    net: &mut DdffNet,
    stack: &ddff_core::refocus::FocalStack,
) -> Result<ddff_core::lightfield::DisparityMap, NetError> {
    let (s, h, w, c) = stack.slices.dim();
    let input = stack
        .slices
        .view()
        .into_shape_with_order((1, s, h, w, c))
        .expect("stack view gains a batch axis")
        .to_owned();
    let out = net.forward(&input)?;
    let values = out.index_axis(Axis(0), 0).to_owned();
    Ok(ddff_core::lightfield::DisparityMap::dense(values)?)
}

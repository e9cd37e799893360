//! Masked squared-error regression loss with L2 weight regularization.
//!
//! The data term is the mean of `(pred - target)^2` over valid pixels only;
//! pixels outside the mask contribute nothing to either the loss or its
//! gradient.  The full training objective adds `lambda` times the sum of
//! squared convolution kernel weights (see
//! [`crate::network::DdffNet::kernel_sum_sq`]).

use ndarray::Array3;

/// Default L2 penalty coefficient for training.
pub const DEFAULT_WEIGHT_DECAY: f64 = 5e-4;

/// Value and gradient of the masked data term.
#[derive(Debug, Clone)]
pub struct MaskedLoss {
    /// Mean squared error over valid pixels (0 when nothing is valid).
    pub data_term: f64,
    /// Number of pixels that entered the mean.
    pub valid_count: usize,
    /// Gradient with respect to the prediction: `2 (p - t) / valid_count` at
    /// valid pixels, exactly zero elsewhere.
    pub grad: Array3<f32>,
}

impl MaskedLoss {
    /// The full objective: data term plus `lambda * kernel_sum_sq`.
    pub fn total(&self, lambda: f64, kernel_sum_sq: f64) -> f64 {
        self.data_term + lambda * kernel_sum_sq
    }
}

/// Computes the masked mean squared error and its prediction gradient.
///
/// Shapes of `pred`, `target`, and `mask` must agree; a batch with zero valid
/// pixels yields a zero data term and zero gradient, signalled by
/// `valid_count == 0` so callers can treat the batch as regularizer-only.
pub fn masked_l2_loss(
    pred: &Array3<f32>,
    target: &Array3<f32>,
    mask: &Array3<bool>,
) -> MaskedLoss {
    assert_eq!(pred.dim(), target.dim(), "prediction/target shapes");
    assert_eq!(pred.dim(), mask.dim(), "prediction/mask shapes");
    let valid_count = mask.iter().filter(|&&m| m).count();
    let mut grad = Array3::<f32>::zeros(pred.raw_dim());
    if valid_count == 0 {
        return MaskedLoss {
            data_term: 0.0,
            valid_count: 0,
            grad,
        };
    }
    let n = valid_count as f64;
    let mut sum_sq = 0.0f64;
    ndarray::Zip::from(&mut grad)
        .and(pred)
        .and(target)
        .and(mask)
        .for_each(|g, &p, &t, &m| {
            if m {
                let d = p as f64 - t as f64;
                sum_sq += d * d;
                *g = (2.0 * d / n) as f32;
            }
        });
    MaskedLoss {
        data_term: sum_sq / n,
        valid_count,
        grad,
    }
}

//! Evaluation protocol: eight scalar metrics over the groundtruth-valid
//! pixels, threshold sweeps, and closed-form scale fitting for sensors that
//! report depth only up to a global factor.
//!
//! The evaluation mask is the groundtruth mask alone — predictions are
//! dense by contract and never shrink it. Pixels where the prediction (or
//! groundtruth) is not strictly positive cannot enter ratio or logarithm
//! based metrics; they are dropped from those reductions only and counted
//! in `clamped_pixels`. All reductions run in row-major order so reports
//! are bit-reproducible.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{CoreError, Result};
use crate::lightfield::{DepthMap, DisparityMap};

/// Headline threshold for the bad-pixel percentage.
pub const DEFAULT_BADPIX_TAU: f64 = 0.07;

/// Cap on the per-pixel Hessian Frobenius norm in the bumpiness metric.
const BUMPINESS_CAP: f64 = 0.05;

/// The eight-metric evaluation record plus bookkeeping counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean squared error over valid pixels.
    pub mse: f64,
    /// `sqrt(mse)`.
    pub rms: f64,
    /// RMS of the natural-log error, over ratio-eligible pixels.
    pub log_rms: f64,
    /// Mean of `|err| / gt` over ratio-eligible pixels.
    pub abs_rel: f64,
    /// Mean of `err^2 / gt` over ratio-eligible pixels.
    pub sqr_rel: f64,
    /// Percentage of ratio-eligible pixels with `max(p/g, g/p) < 1.25`.
    pub accuracy_d1: f64,
    /// Same with threshold `1.25^2`.
    pub accuracy_d2: f64,
    /// Same with threshold `1.25^3`.
    pub accuracy_d3: f64,
    /// `(tau, percentage of valid pixels with |err| > tau)` per requested tau.
    pub badpix: Vec<(f64, f64)>,
    /// Mean of `min(0.05, ||H||_F) * 100` over valid pixels, `H` the Hessian
    /// of the error surface.
    pub bumpiness: f64,
    /// Pixels the groundtruth mask marks valid.
    pub valid_pixel_count: usize,
    /// Valid pixels whose prediction was not strictly positive; excluded
    /// from ratio/log metrics.
    pub clamped_pixels: usize,
    /// True when no pixel was valid; every metric is 0 in that case.
    pub empty: bool,
}

impl MetricsReport {
    /// Bad-pixel percentage at the given threshold, if it was requested.
    pub fn badpix_at(&self, tau: f64) -> Option<f64> {
        self.badpix
            .iter()
            .find(|(t, _)| *t == tau)
            .map(|(_, pct)| *pct)
    }

    /// Flat `key value` lines, one metric per line, fixed order.
    pub fn to_flat_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mse {}", self.mse);
        let _ = writeln!(s, "rms {}", self.rms);
        let _ = writeln!(s, "log_rms {}", self.log_rms);
        let _ = writeln!(s, "abs_rel {}", self.abs_rel);
        let _ = writeln!(s, "sqr_rel {}", self.sqr_rel);
        let _ = writeln!(s, "accuracy_d1 {}", self.accuracy_d1);
        let _ = writeln!(s, "accuracy_d2 {}", self.accuracy_d2);
        let _ = writeln!(s, "accuracy_d3 {}", self.accuracy_d3);
        for (tau, pct) in &self.badpix {
            let _ = writeln!(s, "badpix_{tau} {pct}");
        }
        let _ = writeln!(s, "bumpiness {}", self.bumpiness);
        let _ = writeln!(s, "valid_pixel_count {}", self.valid_pixel_count);
        let _ = writeln!(s, "clamped_pixels {}", self.clamped_pixels);
        let _ = writeln!(s, "empty {}", self.empty);
        s
    }
}

/// Hessian of `delta` at `(y, x)`: `(d_xx, d_xy, d_yy)`. Second differences
/// are the 3-point stencil — centered in the interior, shifted one-sided at
/// borders — so any affine surface has an exactly zero Hessian everywhere,
/// borders included. The mixed term nests the matching 2-point/centered
/// first differences per axis.
fn hessian_at(delta: &Array2<f64>, y: usize, x: usize) -> (f64, f64, f64) {
    let (h, w) = delta.dim();

    fn second(line: impl Fn(isize) -> f64, i: usize, n: usize) -> f64 {
        let i = i as isize;
        if n < 3 {
            0.0
        } else if i == 0 {
            line(2) - 2.0 * line(1) + line(0)
        } else if i == n as isize - 1 {
            line(i) - 2.0 * line(i - 1) + line(i - 2)
        } else {
            line(i + 1) - 2.0 * line(i) + line(i - 1)
        }
    }
    fn first(line: impl Fn(isize) -> f64, i: usize, n: usize) -> f64 {
        let i = i as isize;
        if n < 2 {
            0.0
        } else if i == 0 {
            line(1) - line(0)
        } else if i == n as isize - 1 {
            line(i) - line(i - 1)
        } else {
            (line(i + 1) - line(i - 1)) / 2.0
        }
    }

    let dxx = second(|t| delta[[y, t as usize]], x, w);
    let dyy = second(|t| delta[[t as usize, x]], y, h);
    // d/dy of the x-derivative.
    let gx = |yy: isize| first(|t| delta[[yy as usize, t as usize]], x, w);
    let dxy = first(gx, y, h);
    (dxx, dxy, dyy)
}

/// Shared implementation over raw value/mask arrays.
fn metrics_impl(
    pred: &Array2<f32>,
    gt_values: &Array2<f32>,
    gt_mask: &Array2<bool>,
    taus: &[f64],
) -> Result<MetricsReport> {
    if pred.raw_dim() != gt_values.raw_dim() {
        return Err(CoreError::Parameter(format!(
            "prediction shape {:?} != groundtruth shape {:?}",
            pred.shape(),
            gt_values.shape()
        )));
    }
    for &tau in taus {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(CoreError::Parameter(format!(
                "badpix threshold {tau} must be positive and finite"
            )));
        }
    }
    if let Some(v) = pred.iter().find(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite(format!("prediction value {v}")));
    }

    let (h, w) = pred.dim();
    let mut n_valid = 0usize;
    let mut n_ratio = 0usize;
    let mut clamped = 0usize;
    let mut sum_sq = 0.0f64;
    let mut sum_log_sq = 0.0f64;
    let mut sum_abs_rel = 0.0f64;
    let mut sum_sqr_rel = 0.0f64;
    let mut acc = [0usize; 3];
    let mut bad = vec![0usize; taus.len()];
    let mut sum_bump = 0.0f64;

    // Error surface for the bumpiness Hessian; zero at invalid pixels. The
    // stencil reads across invalid pixels like any others — groundtruth
    // holes are rare and a 0 there only perturbs adjacent border scores.
    let mut delta = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            if gt_mask[[y, x]] {
                delta[[y, x]] = f64::from(pred[[y, x]]) - f64::from(gt_values[[y, x]]);
            }
        }
    }

    let thresholds = [1.25f64, 1.25 * 1.25, 1.25 * 1.25 * 1.25];
    for y in 0..h {
        for x in 0..w {
            if !gt_mask[[y, x]] {
                continue;
            }
            n_valid += 1;
            let p = f64::from(pred[[y, x]]);
            let g = f64::from(gt_values[[y, x]]);
            let err = p - g;
            sum_sq += err * err;
            for (i, &tau) in taus.iter().enumerate() {
                if err.abs() > tau {
                    bad[i] += 1;
                }
            }
            let (dxx, dxy, dyy) = hessian_at(&delta, y, x);
            let frob = (dxx * dxx + 2.0 * dxy * dxy + dyy * dyy).sqrt();
            sum_bump += frob.min(BUMPINESS_CAP) * 100.0;

            if p <= 0.0 {
                clamped += 1;
                continue;
            }
            if g <= 0.0 {
                continue;
            }
            n_ratio += 1;
            let log_err = p.ln() - g.ln();
            sum_log_sq += log_err * log_err;
            sum_abs_rel += err.abs() / g;
            sum_sqr_rel += err * err / g;
            let ratio = (p / g).max(g / p);
            for (i, &t) in thresholds.iter().enumerate() {
                if ratio < t {
                    acc[i] += 1;
                }
            }
        }
    }

    if n_valid == 0 {
        return Ok(MetricsReport {
            mse: 0.0,
            rms: 0.0,
            log_rms: 0.0,
            abs_rel: 0.0,
            sqr_rel: 0.0,
            accuracy_d1: 0.0,
            accuracy_d2: 0.0,
            accuracy_d3: 0.0,
            badpix: taus.iter().map(|&t| (t, 0.0)).collect(),
            bumpiness: 0.0,
            valid_pixel_count: 0,
            clamped_pixels: 0,
            empty: true,
        });
    }

    let nv = n_valid as f64;
    let nr = n_ratio.max(1) as f64;
    let mse = sum_sq / nv;
    Ok(MetricsReport {
        mse,
        rms: mse.sqrt(),
        log_rms: (sum_log_sq / nr).sqrt(),
        abs_rel: sum_abs_rel / nr,
        sqr_rel: sum_sqr_rel / nr,
        accuracy_d1: 100.0 * acc[0] as f64 / nr,
        accuracy_d2: 100.0 * acc[1] as f64 / nr,
        accuracy_d3: 100.0 * acc[2] as f64 / nr,
        badpix: taus
            .iter()
            .zip(&bad)
            .map(|(&t, &b)| (t, 100.0 * b as f64 / nv))
            .collect(),
        bumpiness: sum_bump / nv,
        valid_pixel_count: n_valid,
        clamped_pixels: clamped,
        empty: false,
    })
}

/// Full metric suite for a disparity prediction against groundtruth.
pub fn compute_metrics(
    pred: &DisparityMap,
    gt: &DisparityMap,
    taus: &[f64],
) -> Result<MetricsReport> {
    metrics_impl(&pred.values, &gt.values, &gt.mask, taus)
}

/// Full metric suite for a depth prediction against groundtruth.
pub fn compute_depth_metrics(
    pred: &DepthMap,
    gt: &DepthMap,
    taus: &[f64],
) -> Result<MetricsReport> {
    metrics_impl(&pred.values, &gt.values, &gt.mask, taus)
}

/// Bad-pixel percentage swept over a strictly increasing threshold grid.
/// The resulting series is non-increasing.
pub fn badpix_curve(
    pred: &DisparityMap,
    gt: &DisparityMap,
    tau_grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if tau_grid.is_empty() {
        return Err(CoreError::Parameter("empty threshold grid".into()));
    }
    if !tau_grid.windows(2).all(|p| p[0] < p[1]) {
        return Err(CoreError::Parameter(format!(
            "threshold grid must be strictly increasing, got {tau_grid:?}"
        )));
    }
    Ok(compute_metrics(pred, gt, tau_grid)?.badpix)
}

/// Least-squares global scale for depth sensors calibrated only up to a
/// factor: minimizes `sum_p (k * pred_p - gt_p)^2` over jointly valid
/// pixels, giving `k* = sum(pred * gt) / sum(pred^2)` in closed form.
/// Returns `k*` and the rescaled map (mask unchanged).
pub fn lytro_rescale(pred: &DepthMap, gt: &DepthMap) -> Result<(f64, DepthMap)> {
    if pred.dim() != gt.dim() {
        return Err(CoreError::Parameter(format!(
            "prediction shape {:?} != groundtruth shape {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    let mut joint = 0usize;
    for ((p, g), (&mp, &mg)) in pred
        .values
        .iter()
        .zip(gt.values.iter())
        .zip(pred.mask.iter().zip(gt.mask.iter()))
    {
        if mp && mg {
            joint += 1;
            num += f64::from(*p) * f64::from(*g);
            den += f64::from(*p) * f64::from(*p);
        }
    }
    if joint == 0 {
        return Err(CoreError::Parameter(
            "no jointly valid pixels to fit a scale".into(),
        ));
    }
    if den == 0.0 {
        return Err(CoreError::Domain(
            "all jointly valid predictions are zero; scale is degenerate".into(),
        ));
    }
    let k = num / den;
    let rescaled = pred.values.mapv(|v| (f64::from(v) * k) as f32);
    let map = DepthMap::masked(rescaled, pred.mask.clone())?;
    Ok((k, map))
}

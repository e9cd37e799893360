//! Classical depth from focus: pick, per pixel, the focal-stack slice with
//! maximal local sharpness and report that slice's focus disparity.
//!
//! Three standard contrast measures are provided; all operate on luminance,
//! use replicate padding at borders, and are box-averaged over an odd
//! window. Pixels whose best sharpness (after normalizing the whole volume
//! by its global maximum) stays below a small floor are reported invalid —
//! on textureless surfaces the in-focus slice genuinely cannot be
//! determined from contrast.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::lightfield::DisparityMap;
use crate::refocus::FocalStack;

/// Local contrast measures for focus detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FocusMeasure {
    /// Sum-modified-Laplacian: `|2*I - I_left - I_right| + |2*I - I_up - I_down|`.
    #[default]
    ModifiedLaplacian,
    /// Windowed variance of the 4-neighbor Laplacian
    /// `I_left + I_right + I_up + I_down - 4*I`.
    LaplacianVariance,
    /// Tenengrad: squared magnitude of the Sobel gradient.
    Tenengrad,
}

/// Normalized-sharpness floor below which a pixel counts as untextured.
pub const UNTEXTURED_FLOOR: f64 = 1e-6;

/// Per-slice, per-pixel sharpness scores for a focal stack.
#[derive(Debug, Clone)]
pub struct SharpnessVolume {
    /// `(slice, height, width)`, finite and non-negative.
    pub values: Array3<f64>,
    /// Focus disparity of each slice, copied from the source stack.
    pub focus_disparities: Vec<f64>,
}

/// Rec. 601 luminance (`0.299 R + 0.587 G + 0.114 B`); single-channel
/// images pass through unchanged.
pub fn luminance(image: ArrayView3<'_, f32>) -> Result<Array2<f64>> {
    let (h, w, c) = image.dim();
    match c {
        1 => Ok(Array2::from_shape_fn((h, w), |(y, x)| {
            f64::from(image[[y, x, 0]])
        })),
        3 => Ok(Array2::from_shape_fn((h, w), |(y, x)| {
            0.299 * f64::from(image[[y, x, 0]])
                + 0.587 * f64::from(image[[y, x, 1]])
                + 0.114 * f64::from(image[[y, x, 2]])
        })),
        _ => Err(CoreError::Parameter(format!(
            "expected 1 or 3 channels, got {c}"
        ))),
    }
}

fn check_window(window: usize) -> Result<usize> {
    if window == 0 || window % 2 == 0 {
        return Err(CoreError::Parameter(format!(
            "window {window} must be odd and at least 1"
        )));
    }
    Ok(window / 2)
}

/// Replicate-padded sample.
#[inline]
fn at(img: &ArrayView2<'_, f64>, y: isize, x: isize) -> f64 {
    let (h, w) = img.dim();
    let yy = y.clamp(0, h as isize - 1) as usize;
    let xx = x.clamp(0, w as isize - 1) as usize;
    img[[yy, xx]]
}

/// Box mean over a `window x window` neighborhood with replicate padding.
fn box_mean(img: &Array2<f64>, window: usize) -> Array2<f64> {
    if window == 1 {
        return img.clone();
    }
    let r = (window / 2) as isize;
    let v = img.view();
    let (h, w) = img.dim();
    let n = (window * window) as f64;
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut sum = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                sum += at(&v, y as isize + dy, x as isize + dx);
            }
        }
        sum / n
    })
}

/// 4-neighbor Laplacian `I_l + I_r + I_u + I_d - 4*I` with replicate padding.
fn laplacian(img: &ArrayView2<'_, f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (y, x) = (y as isize, x as isize);
        at(img, y, x - 1) + at(img, y, x + 1) + at(img, y - 1, x) + at(img, y + 1, x)
            - 4.0 * at(img, y, x)
    })
}

/// Per-pixel focus measure of a luminance image, box-averaged over the
/// window. Non-negative by construction.
fn measure_map(luma: &Array2<f64>, measure: FocusMeasure, window: usize) -> Array2<f64> {
    let v = luma.view();
    let (h, w) = luma.dim();
    match measure {
        FocusMeasure::ModifiedLaplacian => {
            let ml = Array2::from_shape_fn((h, w), |(y, x)| {
                let (y, x) = (y as isize, x as isize);
                let c = at(&v, y, x);
                (2.0 * c - at(&v, y, x - 1) - at(&v, y, x + 1)).abs()
                    + (2.0 * c - at(&v, y - 1, x) - at(&v, y + 1, x)).abs()
            });
            box_mean(&ml, window)
        }
        FocusMeasure::LaplacianVariance => {
            // var(L) over the window via mean(L^2) - mean(L)^2; clamp tiny
            // negative round-off to zero.
            let l = laplacian(&v);
            let l2 = l.mapv(|v| v * v);
            let mean = box_mean(&l, window);
            let mean_sq = box_mean(&l2, window);
            let mut var = &mean_sq - &mean.mapv(|m| m * m);
            var.mapv_inplace(|v| v.max(0.0));
            var
        }
        FocusMeasure::Tenengrad => {
            let g2 = Array2::from_shape_fn((h, w), |(y, x)| {
                let (y, x) = (y as isize, x as isize);
                let gx = at(&v, y - 1, x + 1) + 2.0 * at(&v, y, x + 1) + at(&v, y + 1, x + 1)
                    - at(&v, y - 1, x - 1)
                    - 2.0 * at(&v, y, x - 1)
                    - at(&v, y + 1, x - 1);
                let gy = at(&v, y + 1, x - 1) + 2.0 * at(&v, y + 1, x) + at(&v, y + 1, x + 1)
                    - at(&v, y - 1, x - 1)
                    - 2.0 * at(&v, y - 1, x)
                    - at(&v, y - 1, x + 1);
                gx * gx + gy * gy
            });
            box_mean(&g2, window)
        }
    }
}

/// Sharpness of one image: luminance, contrast measure, box average.
pub fn sharpness_map(
    image: ArrayView3<'_, f32>,
    measure: FocusMeasure,
    window: usize,
) -> Result<Array2<f64>> {
    check_window(window)?;
    let luma = luminance(image)?;
    Ok(measure_map(&luma, measure, window))
}

/// Sharpness of every slice of a focal stack.
pub fn sharpness_volume(
    stack: &FocalStack,
    measure: FocusMeasure,
    window: usize,
) -> Result<SharpnessVolume> {
    check_window(window)?;
    let (s, h, w, _) = stack.dim();
    let mut values = Array3::zeros((s, h, w));
    for i in 0..s {
        let map = sharpness_map(stack.slice_view(i), measure, window)?;
        values.index_axis_mut(ndarray::Axis(0), i).assign(&map);
    }
    Ok(SharpnessVolume {
        values,
        focus_disparities: stack.focus_disparities.clone(),
    })
}

impl SharpnessVolume {
    /// Per pixel: index of the sharpest slice and whether the pixel is
    /// textured enough to trust it. Ties go to the slice with the larger
    /// (nearer) focus disparity. The texture test normalizes by the global
    /// maximum, so it is invariant to positive rescaling of the scores.
    pub fn argmax(&self) -> Result<(Array2<usize>, Array2<bool>)> {
        let (s, h, w) = self.values.dim();
        if s < 2 {
            return Err(CoreError::Parameter(format!(
                "need at least 2 slices to compare sharpness, got {s}"
            )));
        }
        if self.focus_disparities.len() != s {
            return Err(CoreError::Parameter(format!(
                "{} focus disparities for {s} slices",
                self.focus_disparities.len()
            )));
        }
        let global_max = self.values.iter().copied().fold(0.0f64, f64::max);
        let floor = global_max * UNTEXTURED_FLOOR;
        let mut index = Array2::zeros((h, w));
        let mut mask = Array2::from_elem((h, w), false);
        for y in 0..h {
            for x in 0..w {
                let mut best = 0usize;
                for k in 1..s {
                    let (sk, sb) = (self.values[[k, y, x]], self.values[[best, y, x]]);
                    if sk > sb
                        || (sk == sb && self.focus_disparities[k] > self.focus_disparities[best])
                    {
                        best = k;
                    }
                }
                index[[y, x]] = best;
                mask[[y, x]] = global_max > 0.0 && self.values[[best, y, x]] > floor;
            }
        }
        Ok((index, mask))
    }
}

/// Classical DFF: per pixel, the focus disparity of the sharpest slice;
/// untextured pixels (normalized sharpness below [`UNTEXTURED_FLOOR`]) are
/// masked invalid.
pub fn argmax_disparity(
    stack: &FocalStack,
    measure: FocusMeasure,
    window: usize,
) -> Result<DisparityMap> {
    let volume = sharpness_volume(stack, measure, window)?;
    let (index, mask) = volume.argmax()?;
    let values = index.mapv(|k| volume.focus_disparities[k] as f32);
    DisparityMap::masked(values, mask)
}

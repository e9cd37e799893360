//! Training patch extraction from focal stacks with groundtruth.
//!
//! Patches tile the frame on a fixed stride, with one extra flush-to-border
//! offset per axis so the full frame is always covered.  Candidates whose
//! groundtruth window is mostly invalid are discarded.

use ddff_core::lightfield::DisparityMap;
use ddff_core::refocus::FocalStack;
use ndarray::{s, Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::error::NetError;

/// Geometry and filtering rules for patch extraction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchConfig {
    /// Square patch side length in pixels.
    pub size: usize,
    /// Step between neighbouring patch origins.
    pub stride: usize,
    /// A candidate is discarded when strictly more than this fraction of its
    /// groundtruth pixels is invalid.
    pub max_invalid_fraction: f64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            size: 224,
            stride: 56,
            max_invalid_fraction: 0.2,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.size == 0 {
            return Err(NetError::Parameter("patch size must be positive".into()));
        }
        if self.stride == 0 {
            return Err(NetError::Parameter("patch stride must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.max_invalid_fraction) {
            return Err(NetError::Parameter(format!(
                "max_invalid_fraction must lie in [0, 1], got {}",
                self.max_invalid_fraction
            )));
        }
        Ok(())
    }
}

/// One training sample: a spatial window through the whole stack.
#[derive(Debug, Clone)]
pub struct Patch {
    /// Index of the source stack (used for train/validation splitting).
    pub stack_index: usize,
    /// Top-left corner `(y, x)` of the window in the source frame.
    pub origin: (usize, usize),
    /// Stack window, `(S, size, size, C)`.
    pub data: Array4<f32>,
    /// Groundtruth disparity window.
    pub target: Array2<f32>,
    /// Groundtruth validity window.
    pub mask: Array2<bool>,
}

/// The outcome of patch extraction over one stack.
#[derive(Debug, Clone)]
pub struct PatchSet {
    /// Patches that passed the validity filter.
    pub patches: Vec<Patch>,
    /// Number of grid candidates before filtering.
    pub candidate_count: usize,
}

/// Patch origins along one axis: multiples of `stride` while a full patch
/// fits, plus the flush-to-border origin `dim - size` when the stride does
/// not land on it.
pub fn axis_offsets(dim: usize, size: usize, stride: usize) -> Vec<usize> {
    let mut offsets: Vec<usize> = (0..)
        .map(|i| i * stride)
        .take_while(|&o| o + size <= dim)
        .collect();
    let last = dim - size;
    if offsets.last() != Some(&last) {
        offsets.push(last);
    }
    offsets
}

/// Extracts training patches from one stack and its groundtruth.
///
/// `stack_index` tags every patch with its source for later splitting.
/// Errors when the frame is smaller than the patch in either dimension or
/// when stack and groundtruth dimensions disagree.
pub fn crop_patches(
    stack: &FocalStack,
    groundtruth: &DisparityMap,
    stack_index: usize,
    cfg: &PatchConfig,
) -> Result<PatchSet, NetError> {
    cfg.validate()?;
    let (_, h, w, _) = stack.slices.dim();
    let (gh, gw) = groundtruth.dim();
    if (gh, gw) != (h, w) {
        return Err(NetError::Shape(format!(
            "stack frame {h}x{w} does not match groundtruth {gh}x{gw}"
        )));
    }
    if h < cfg.size || w < cfg.size {
        return Err(NetError::Parameter(format!(
            "frame {h}x{w} is smaller than the {0}x{0} patch",
            cfg.size
        )));
    }
    let rows = axis_offsets(h, cfg.size, cfg.stride);
    let cols = axis_offsets(w, cfg.size, cfg.stride);
    let candidate_count = rows.len() * cols.len();
    let total = (cfg.size * cfg.size) as f64;
    let mut patches = Vec::new();
    for &y0 in &rows {
        for &x0 in &cols {
            let mask = groundtruth
                .mask
                .slice(s![y0..y0 + cfg.size, x0..x0 + cfg.size])
                .to_owned();
            let invalid = mask.iter().filter(|&&m| !m).count() as f64 / total;
            if invalid > cfg.max_invalid_fraction {
                continue;
            }
            patches.push(Patch {
                stack_index,
                origin: (y0, x0),
                data: stack
                    .slices
                    .slice(s![.., y0..y0 + cfg.size, x0..x0 + cfg.size, ..])
                    .to_owned(),
                target: groundtruth
                    .values
                    .slice(s![y0..y0 + cfg.size, x0..x0 + cfg.size])
                    .to_owned(),
                mask,
            });
        }
    }
    Ok(PatchSet {
        patches,
        candidate_count,
    })
}

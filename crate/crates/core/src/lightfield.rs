//! Light-field containers and plenoptic camera geometry.
//!
//! A 4D light field `L(u, v, y, x)` stores one RGB sample per sub-aperture
//! `(u, v)` and pixel `(y, x)`. Sub-aperture indices are 0-based; the grid
//! center sits at `((grid_u - 1) / 2, (grid_v - 1) / 2)`, so a 9x9 grid is
//! centered on index (4, 4). Disparity is expressed in pixels per unit
//! viewpoint offset and relates to metric depth through
//! `disparity = baseline_m_per_px * focal_length_px / depth_m`.

use ndarray::{Array2, Array5, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Calibration of the camera main lens, kept alongside the per-sub-aperture
/// intrinsics. Focal lengths and centers are in raw sensor pixels; the
/// distortion coefficients are carried as opaque metadata and never applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainLens {
    /// Main-lens focal length along x, in sensor pixels.
    pub f_x: f64,
    /// Main-lens focal length along y, in sensor pixels.
    pub f_y: f64,
    /// Principal point x, in sensor pixels.
    pub c_x: f64,
    /// Principal point y, in sensor pixels.
    pub c_y: f64,
    /// Microlens radius in sensor pixels; one microlens spans `2 * radius`
    /// sensor pixels, which is the downsampling factor from sensor to
    /// sub-aperture resolution.
    pub microlens_radius_px: f64,
    /// Depth-distortion polynomial coefficients (opaque, not applied).
    pub depth_distortion: [f64; 2],
    /// Radial lens distortion coefficients (opaque, not applied).
    pub radial_distortion: [f64; 2],
}

/// Sub-aperture-level intrinsics derived from a [`MainLens`] record by
/// [`microlens_intrinsics`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicrolensIntrinsics {
    /// Focal length in sub-aperture pixels.
    pub focal_length_px: f64,
    /// Principal point x in sub-aperture pixels.
    pub center_x: f64,
    /// Principal point y in sub-aperture pixels.
    pub center_y: f64,
}

/// Camera model for a decoded light field: per-sub-aperture pinhole
/// intrinsics plus the viewpoint-grid layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Focal length in sub-aperture pixels.
    pub focal_length_px: f64,
    /// Principal point (x, y) in sub-aperture pixels.
    pub principal_point: (f64, f64),
    /// Stereo baseline between adjacent sub-apertures, in meters per pixel
    /// of viewpoint offset.
    pub baseline_m_per_px: f64,
    /// Number of sub-apertures along u (horizontal viewpoint axis).
    pub grid_u: usize,
    /// Number of sub-apertures along v (vertical viewpoint axis).
    pub grid_v: usize,
    /// Viewpoint-grid center along u, in (possibly fractional) grid indices.
    pub center_u: f64,
    /// Viewpoint-grid center along v.
    pub center_v: f64,
    /// Optional main-lens calibration this record was derived from.
    pub main_lens: Option<MainLens>,
}

impl CameraIntrinsics {
    /// Builds a validated intrinsics record with the grid center at the
    /// geometric center `((grid_u - 1) / 2, (grid_v - 1) / 2)`.
    pub fn new(
        focal_length_px: f64,
        principal_point: (f64, f64),
        baseline_m_per_px: f64,
        grid_u: usize,
        grid_v: usize,
        main_lens: Option<MainLens>,
    ) -> Result<Self> {
        let intr = CameraIntrinsics {
            focal_length_px,
            principal_point,
            baseline_m_per_px,
            grid_u,
            grid_v,
            center_u: (grid_u as f64 - 1.0) / 2.0,
            center_v: (grid_v as f64 - 1.0) / 2.0,
            main_lens,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Checks every structural invariant; called by the constructors and by
    /// deserialization consumers.
    pub fn validate(&self) -> Result<()> {
        if !(self.focal_length_px.is_finite() && self.focal_length_px > 0.0) {
            return Err(CoreError::Parameter(format!(
                "focal_length_px must be positive and finite, got {}",
                self.focal_length_px
            )));
        }
        if !(self.baseline_m_per_px.is_finite() && self.baseline_m_per_px > 0.0) {
            return Err(CoreError::Parameter(format!(
                "baseline_m_per_px must be positive and finite, got {}",
                self.baseline_m_per_px
            )));
        }
        if self.grid_u == 0 || self.grid_v == 0 {
            return Err(CoreError::Parameter(format!(
                "sub-aperture grid must be non-empty, got {}x{}",
                self.grid_u, self.grid_v
            )));
        }
        if !self.principal_point.0.is_finite() || !self.principal_point.1.is_finite() {
            return Err(CoreError::NonFinite("principal point".into()));
        }
        if let Some(main) = &self.main_lens {
            // The sub-aperture focal length must agree with the main-lens
            // record it was derived from: f = F_x / (2 * microlens radius).
            let derived = microlens_intrinsics(main)?.focal_length_px;
            if (derived - self.focal_length_px).abs() > 0.1 {
                return Err(CoreError::Parameter(format!(
                    "focal_length_px {} disagrees with main-lens value {derived:.4} \
                     (F_x / (2 r)) by more than 0.1 px",
                    self.focal_length_px
                )));
            }
        }
        Ok(())
    }

    /// Default calibration of the plenoptic capture rig used by the bundled
    /// evaluation data: 9x9 viewpoint grid at 383x552 sub-aperture
    /// resolution, baseline 2.7e-4 m per viewpoint step.
    pub fn plenoptic_defaults() -> Self {
        CameraIntrinsics {
            focal_length_px: 521.4,
            principal_point: (285.11, 187.83),
            baseline_m_per_px: 27e-5,
            grid_u: 9,
            grid_v: 9,
            center_u: 4.0,
            center_v: 4.0,
            main_lens: Some(MainLens {
                f_x: 7299.7,
                f_y: 7317.0,
                c_x: 3991.6,
                c_y: 2629.6,
                microlens_radius_px: 7.0,
                depth_distortion: [-2.768, 1982.0],
                radial_distortion: [0.388, -0.0361],
            }),
        }
    }

    /// Nearest integer grid indices of the center viewpoint.
    pub fn center_indices(&self) -> (usize, usize) {
        (
            self.center_u.round() as usize,
            self.center_v.round() as usize,
        )
    }
}

/// Converts metric depth (meters) to disparity (pixels per unit viewpoint
/// offset): `d = baseline * f / Z`.
pub fn disparity_from_depth(depth_m: f64, intrinsics: &CameraIntrinsics) -> Result<f64> {
    if !(depth_m.is_finite() && depth_m > 0.0) {
        return Err(CoreError::Parameter(format!(
            "depth must be positive and finite, got {depth_m}"
        )));
    }
    Ok(intrinsics.baseline_m_per_px * intrinsics.focal_length_px / depth_m)
}

/// Converts disparity (pixels per unit viewpoint offset) back to metric
/// depth: `Z = baseline * f / d`.
pub fn depth_from_disparity(disparity_px: f64, intrinsics: &CameraIntrinsics) -> Result<f64> {
    if !(disparity_px.is_finite() && disparity_px > 0.0) {
        return Err(CoreError::Parameter(format!(
            "disparity must be positive and finite, got {disparity_px}"
        )));
    }
    Ok(intrinsics.baseline_m_per_px * intrinsics.focal_length_px / disparity_px)
}

/// Derives sub-aperture intrinsics from a main-lens record. A microlens of
/// radius `r` covers `2r` sensor pixels, so every sensor-pixel quantity
/// divides by `2r`: `f = F_x / 2r`, `c_x = C_x / 2r`, `c_y = C_y / 2r`.
pub fn microlens_intrinsics(main: &MainLens) -> Result<MicrolensIntrinsics> {
    if !(main.microlens_radius_px.is_finite() && main.microlens_radius_px > 0.0) {
        return Err(CoreError::Parameter(format!(
            "microlens radius must be positive, got {}",
            main.microlens_radius_px
        )));
    }
    if !(main.f_x.is_finite() && main.f_x > 0.0) {
        return Err(CoreError::Parameter(format!(
            "main-lens focal length must be positive, got {}",
            main.f_x
        )));
    }
    let scale = 1.0 / (2.0 * main.microlens_radius_px);
    Ok(MicrolensIntrinsics {
        focal_length_px: main.f_x * scale,
        center_x: main.c_x * scale,
        center_y: main.c_y * scale,
    })
}

/// Side length of the full decoded viewpoint grid produced by plenoptic
/// decoding (13x13 for the supported cameras).
pub const DECODED_GRID: usize = 13;

/// Flags which cells of the full 13x13 decoded viewpoint grid carry usable
/// image data. A cell at offset `(i, j)` from the grid center is valid iff
/// `i^2 + j^2 < (radius - 1)^2`; the outer ring suffers vignetting and is
/// discarded. `radius` is the microlens radius in sensor pixels (>= 2).
pub fn valid_subaperture_mask(radius: u32) -> Result<Array2<bool>> {
    if radius < 2 {
        return Err(CoreError::Parameter(format!(
            "microlens radius must be >= 2, got {radius}"
        )));
    }
    let limit = ((radius - 1) * (radius - 1)) as i64;
    let c = (DECODED_GRID / 2) as i64;
    let mut mask = Array2::from_elem((DECODED_GRID, DECODED_GRID), false);
    for a in 0..DECODED_GRID {
        for b in 0..DECODED_GRID {
            let i = a as i64 - c;
            let j = b as i64 - c;
            mask[[a, b]] = i * i + j * j < limit;
        }
    }
    Ok(mask)
}

/// Index range of the centered `target`-cell crop of a `full`-cell axis;
/// used to cut the canonical 9x9 working grid out of the 13x13 decoded grid.
pub fn central_crop_range(full: usize, target: usize) -> Result<std::ops::Range<usize>> {
    if target > full || (full - target) % 2 != 0 {
        return Err(CoreError::Parameter(format!(
            "cannot center a {target}-cell crop in {full} cells"
        )));
    }
    let lo = (full - target) / 2;
    Ok(lo..lo + target)
}

/// A dense 4D light field with samples indexed `(u, v, y, x, channel)` and
/// values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct LightField {
    pub intrinsics: CameraIntrinsics,
    samples: Array5<f32>,
}

impl LightField {
    /// Wraps samples after checking the grid shape against the intrinsics
    /// and verifying every value is finite and in `[0, 1]`.
    pub fn new(intrinsics: CameraIntrinsics, samples: Array5<f32>) -> Result<Self> {
        intrinsics.validate()?;
        let (gu, gv, _h, _w, c) = samples.dim();
        if gu != intrinsics.grid_u || gv != intrinsics.grid_v {
            return Err(CoreError::Parameter(format!(
                "sample grid {gu}x{gv} does not match intrinsics grid {}x{}",
                intrinsics.grid_u, intrinsics.grid_v
            )));
        }
        if c == 0 || c > 4 {
            return Err(CoreError::Parameter(format!(
                "expected 1..=4 channels, got {c}"
            )));
        }
        if let Some(bad) = samples.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(CoreError::NonFinite(format!(
                "light-field sample {bad} outside [0, 1]"
            )));
        }
        Ok(LightField {
            intrinsics,
            samples,
        })
    }

    /// `(grid_u, grid_v, height, width, channels)`.
    pub fn dim(&self) -> (usize, usize, usize, usize, usize) {
        self.samples.dim()
    }

    /// Zero-copy view of one sub-aperture image, indexed `(y, x, channel)`.
    pub fn subaperture(&self, u: usize, v: usize) -> Result<ArrayView3<'_, f32>> {
        let (gu, gv, ..) = self.samples.dim();
        if u >= gu || v >= gv {
            return Err(CoreError::Parameter(format!(
                "sub-aperture ({u}, {v}) outside {gu}x{gv} grid"
            )));
        }
        Ok(self
            .samples
            .index_axis(Axis(0), u)
            .index_axis_move(Axis(0), v))
    }

    /// The sub-aperture at the grid's nearest-integer center.
    pub fn center_view(&self) -> ArrayView3<'_, f32> {
        let (u, v) = self.intrinsics.center_indices();
        self.subaperture(u, v)
            .expect("center indices are always in range")
    }

    /// Full sample block, indexed `(u, v, y, x, channel)`.
    pub fn samples(&self) -> &Array5<f32> {
        &self.samples
    }
}

/// Per-pixel disparity with a validity mask. Masked-out pixels hold value 0
/// by convention, matching the on-disk encoding where 0 means "no data".
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    pub values: Array2<f32>,
    pub mask: Array2<bool>,
}

/// Per-pixel metric depth in meters with a validity mask; same conventions
/// as [`DisparityMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub values: Array2<f32>,
    pub mask: Array2<bool>,
}

macro_rules! impl_masked_map {
    ($ty:ident, $what:literal) => {
        impl $ty {
            /// Wraps a dense map; every pixel is valid.
            pub fn dense(values: Array2<f32>) -> Result<Self> {
                if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                    return Err(CoreError::NonFinite(format!(
                        concat!($what, " value {} in dense map"),
                        v
                    )));
                }
                let mask = Array2::from_elem(values.raw_dim(), true);
                Ok(Self { values, mask })
            }

            /// Wraps a map with an explicit validity mask. Values at valid
            /// pixels must be finite; values at masked-out pixels are
            /// overwritten with 0 to maintain the storage convention.
            pub fn masked(mut values: Array2<f32>, mask: Array2<bool>) -> Result<Self> {
                if values.raw_dim() != mask.raw_dim() {
                    return Err(CoreError::Parameter(format!(
                        "value shape {:?} != mask shape {:?}",
                        values.shape(),
                        mask.shape()
                    )));
                }
                for (v, &ok) in values.iter_mut().zip(mask.iter()) {
                    if ok {
                        if !v.is_finite() {
                            return Err(CoreError::NonFinite(format!(
                                concat!($what, " value {} at valid pixel"),
                                v
                            )));
                        }
                    } else {
                        *v = 0.0;
                    }
                }
                Ok(Self { values, mask })
            }

            /// `(height, width)`.
            pub fn dim(&self) -> (usize, usize) {
                self.values.dim()
            }

            /// Number of valid pixels.
            pub fn valid_count(&self) -> usize {
                self.mask.iter().filter(|&&m| m).count()
            }
        }
    };
}

impl_masked_map!(DisparityMap, "disparity");
impl_masked_map!(DepthMap, "depth");

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array5;

    #[test]
    fn constructor_rejects_bad_parameters() {
        assert!(CameraIntrinsics::new(0.0, (0.0, 0.0), 1e-4, 9, 9, None).is_err());
        assert!(CameraIntrinsics::new(500.0, (0.0, 0.0), -1.0, 9, 9, None).is_err());
        assert!(CameraIntrinsics::new(500.0, (0.0, 0.0), 1e-4, 0, 9, None).is_err());
        assert!(CameraIntrinsics::new(500.0, (f64::NAN, 0.0), 1e-4, 9, 9, None).is_err());
    }

    #[test]
    fn plenoptic_defaults_are_self_consistent() {
        let intr = CameraIntrinsics::plenoptic_defaults();
        intr.validate().unwrap();
        assert_eq!(intr.center_indices(), (4, 4));
    }

    #[test]
    fn conversions_reject_non_positive_input() {
        let intr = CameraIntrinsics::plenoptic_defaults();
        assert!(disparity_from_depth(0.0, &intr).is_err());
        assert!(disparity_from_depth(-1.0, &intr).is_err());
        assert!(disparity_from_depth(f64::INFINITY, &intr).is_err());
        assert!(depth_from_disparity(0.0, &intr).is_err());
    }

    #[test]
    fn subaperture_views_share_storage() {
        let intr = CameraIntrinsics::new(500.0, (4.0, 4.0), 1e-4, 3, 3, None).unwrap();
        let mut samples = Array5::zeros((3, 3, 4, 5, 3));
        samples[[1, 2, 3, 4, 0]] = 0.75;
        let lf = LightField::new(intr, samples).unwrap();
        assert_eq!(lf.subaperture(1, 2).unwrap()[[3, 4, 0]], 0.75);
        assert!(lf.subaperture(3, 0).is_err());
    }

    #[test]
    fn lightfield_rejects_out_of_range_samples() {
        let intr = CameraIntrinsics::new(500.0, (4.0, 4.0), 1e-4, 2, 2, None).unwrap();
        let mut samples = Array5::zeros((2, 2, 2, 2, 1));
        samples[[0, 0, 0, 0, 0]] = 1.5;
        assert!(LightField::new(intr.clone(), samples).is_err());
        let mut samples = Array5::zeros((2, 2, 2, 2, 1));
        samples[[0, 0, 0, 0, 0]] = f32::NAN;
        assert!(LightField::new(intr, samples).is_err());
    }

    #[test]
    fn masked_maps_zero_out_invalid_pixels() {
        let values = Array2::from_shape_vec((1, 3), vec![1.0, 2.0, 3.0]).unwrap();
        let mask = Array2::from_shape_vec((1, 3), vec![true, false, true]).unwrap();
        let map = DisparityMap::masked(values, mask).unwrap();
        assert_eq!(map.values[[0, 1]], 0.0);
        assert_eq!(map.valid_count(), 2);
    }

    #[test]
    fn central_crop_of_decoded_grid() {
        assert_eq!(central_crop_range(13, 9).unwrap(), 2..11);
        assert!(central_crop_range(13, 8).is_err());
        assert!(central_crop_range(9, 13).is_err());
    }
}

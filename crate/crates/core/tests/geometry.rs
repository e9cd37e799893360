//! Oracle tests for camera geometry: disparity/depth conversion endpoints,
//! main-lens to sub-aperture intrinsics derivation, and the decoded-grid
//! validity mask. Expected values are frozen here independently of the
//! implementation.

use ddff_core::lightfield::{
    central_crop_range, depth_from_disparity, disparity_from_depth, microlens_intrinsics,
    valid_subaperture_mask, CameraIntrinsics, DECODED_GRID,
};
use proptest::prelude::*;

/// Frozen endpoints of the default focus sweep: 0.5 m and 7 m map to these
/// disparities under the default calibration (baseline 2.7e-4 m/px, focal
/// length 521.4 px).
const DISPARITY_AT_HALF_METER: f64 = 0.2816;
const DISPARITY_AT_SEVEN_METERS: f64 = 0.0201;

#[test]
fn disparity_endpoints_match_frozen_values() {
    let intr = CameraIntrinsics::plenoptic_defaults();
    let near = disparity_from_depth(0.5, &intr).unwrap();
    let far = disparity_from_depth(7.0, &intr).unwrap();
    assert!(
        (near - DISPARITY_AT_HALF_METER).abs() < 1e-4,
        "0.5 m -> {near}, expected {DISPARITY_AT_HALF_METER}"
    );
    assert!(
        (far - DISPARITY_AT_SEVEN_METERS).abs() < 1e-4,
        "7 m -> {far}, expected {DISPARITY_AT_SEVEN_METERS}"
    );
}

#[test]
fn microlens_intrinsics_match_frozen_values() {
    let main = CameraIntrinsics::plenoptic_defaults().main_lens.unwrap();
    let ml = microlens_intrinsics(&main).unwrap();
    // f = 7299.7 / (2 * 7), c = (3991.6, 2629.6) / (2 * 7).
    assert!(
        (ml.focal_length_px - 521.4).abs() < 0.05,
        "f = {}",
        ml.focal_length_px
    );
    assert!((ml.center_x - 285.11).abs() < 0.01, "c_x = {}", ml.center_x);
    assert!((ml.center_y - 187.83).abs() < 0.01, "c_y = {}", ml.center_y);
}

#[test]
fn valid_mask_radius_7_has_109_cells() {
    let mask = valid_subaperture_mask(7).unwrap();
    assert_eq!(mask.dim(), (DECODED_GRID, DECODED_GRID));
    let count = mask.iter().filter(|&&m| m).count();
    // Brute force over the strict rule i^2 + j^2 < 36: per |i| the admitted
    // |j| bound is 5,5,5,5,4,3,none for |i| = 0..6, giving
    // 11 + 2*(11+11+11+9+7) = 109 cells. (The non-strict rule <= 36 would
    // add the four axis cells at offset 6 for 113; the strict form is the
    // published one and keeps (6,0) invalid.)
    assert_eq!(count, 109, "vignetting rule i^2+j^2 < 36 admits 109 cells");
    let c = DECODED_GRID / 2;
    // Offset (6, 0): 36 is not strictly below 36, so the cell is invalid.
    assert!(!mask[[c + 6, c]]);
    assert!(!mask[[c, c + 6]]);
    assert!(mask[[c + 5, c]]);
    assert!(mask[[c, c]]);
    // The canonical 9x9 working grid (offsets within +-4) is fully valid.
    let crop = central_crop_range(DECODED_GRID, 9).unwrap();
    for a in crop.clone() {
        for b in crop.clone() {
            assert!(mask[[a, b]], "working-grid cell ({a}, {b}) must be valid");
        }
    }
}

#[test]
fn valid_mask_small_radius() {
    // radius 2: i^2 + j^2 < 1 keeps only the center cell.
    let mask = valid_subaperture_mask(2).unwrap();
    assert_eq!(mask.iter().filter(|&&m| m).count(), 1);
    assert!(valid_subaperture_mask(1).is_err());
}

#[test]
fn valid_mask_symmetries() {
    let mask = valid_subaperture_mask(7).unwrap();
    let c = DECODED_GRID as i64 / 2;
    for a in 0..DECODED_GRID {
        for b in 0..DECODED_GRID {
            let (i, j) = (a as i64 - c, b as i64 - c);
            let at = |i: i64, j: i64| mask[[(c + i) as usize, (c + j) as usize]];
            assert_eq!(at(i, j), at(-i, j));
            assert_eq!(at(i, j), at(i, -j));
            assert_eq!(at(i, j), at(j, i));
        }
    }
}

proptest! {
    /// depth -> disparity -> depth is the identity within 1e-9 relative.
    #[test]
    fn conversion_round_trip(depth in 0.05f64..100.0) {
        let intr = CameraIntrinsics::plenoptic_defaults();
        let d = disparity_from_depth(depth, &intr).unwrap();
        let back = depth_from_disparity(d, &intr).unwrap();
        prop_assert!((back - depth).abs() / depth < 1e-9);
    }

    /// Derived sub-aperture intrinsics are linear in the main-lens pixel
    /// quantities: scaling (F_x, C_x, C_y) by t scales every output by t.
    #[test]
    fn microlens_intrinsics_homogeneous(t in 0.1f64..10.0) {
        let mut main = CameraIntrinsics::plenoptic_defaults().main_lens.unwrap();
        let base = microlens_intrinsics(&main).unwrap();
        main.f_x *= t;
        main.c_x *= t;
        main.c_y *= t;
        let scaled = microlens_intrinsics(&main).unwrap();
        prop_assert!((scaled.focal_length_px - t * base.focal_length_px).abs() < 1e-9 * t.max(1.0) * base.focal_length_px);
        prop_assert!((scaled.center_x - t * base.center_x).abs() < 1e-9 * t.max(1.0) * base.center_x);
        prop_assert!((scaled.center_y - t * base.center_y).abs() < 1e-9 * t.max(1.0) * base.center_y);
    }
}

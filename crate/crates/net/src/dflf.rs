//! Building network inputs directly from light-field sub-apertures.
//!
//! Instead of synthesizing a focal stack, a fixed pattern of sub-aperture
//! views is stacked along the slice axis and fed to the same architecture.
//! The default pattern selects eleven views spanning the aperture: the
//! center, its two immediate horizontal neighbours, the four extreme views of
//! the central row and column, and the four corners.

use ddff_core::lightfield::LightField;
use ndarray::{Array4, Axis};

use crate::error::NetError;

/// The default eleven-view selection for a `grid_u x grid_v` aperture.
///
/// Views are `(u, v)` indices with `u` horizontal.  Requires `grid_u >= 5`
/// and `grid_v >= 3` so all eleven entries are distinct.
pub fn default_view_pattern(grid_u: usize, grid_v: usize) -> Result<Vec<(usize, usize)>, NetError> {
    if grid_u < 5 || grid_v < 3 {
        return Err(NetError::Parameter(format!(
            "default view pattern needs a grid of at least 5x3, got {grid_u}x{grid_v}"
        )));
    }
    let cu = (grid_u - 1) / 2;
    let cv = (grid_v - 1) / 2;
    Ok(vec![
        (cu, cv),
        (cu - 1, cv),
        (cu + 1, cv),
        (0, cv),
        (grid_u - 1, cv),
        (cu, 0),
        (cu, grid_v - 1),
        (0, 0),
        (grid_u - 1, 0),
        (0, grid_v - 1),
        (grid_u - 1, grid_v - 1),
    ])
}

/// Stacks the selected sub-aperture views into an `(S, H, W, C)` tensor.
///
/// The pattern must be non-empty, within the aperture grid, and free of
/// duplicates.
pub fn dflf_input(lf: &LightField, pattern: &[(usize, usize)]) -> Result<Array4<f32>, NetError> {
    if pattern.is_empty() {
        return Err(NetError::Parameter("view pattern is empty".into()));
    }
    let (gu, gv, h, w, c) = lf.dim();
    for (i, &(u, v)) in pattern.iter().enumerate() {
        if u >= gu || v >= gv {
            return Err(NetError::Parameter(format!(
                "view pattern entry {i} = ({u}, {v}) outside the {gu}x{gv} grid"
            )));
        }
        if pattern[..i].contains(&(u, v)) {
            return Err(NetError::Parameter(format!(
                "view pattern entry {i} = ({u}, {v}) is a duplicate"
            )));
        }
    }
    let mut out = Array4::<f32>::zeros((pattern.len(), h, w, c));
    for (i, &(u, v)) in pattern.iter().enumerate() {
        let view = lf.subaperture(u, v)?;
        out.index_axis_mut(Axis(0), i).assign(&view);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ddff_core::lightfield::CameraIntrinsics;
    use ndarray::Array5;

    fn field(gu: usize, gv: usize) -> LightField {
        let samples = Array5::from_shape_fn((gu, gv, 8, 6, 3), |(u, v, y, x, c)| {
            (u * 1000 + v * 100 + y * 10 + x + c) as f32 / 10000.0
        });
        let intrinsics = CameraIntrinsics::new(521.4, (4.0, 3.0), 27e-5, gu, gv, None).unwrap();
        LightField::new(intrinsics, samples).unwrap()
    }

    #[test]
    fn default_pattern_has_eleven_distinct_views() {
        let pattern = default_view_pattern(9, 9).unwrap();
        assert_eq!(pattern.len(), 11);
        let mut unique = pattern.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), 11);
        assert!(pattern.contains(&(4, 4)), "center view");
        assert!(pattern.contains(&(3, 4)) && pattern.contains(&(5, 4)), "horizontal neighbours");
        assert!(pattern.contains(&(0, 0)) && pattern.contains(&(8, 8)), "corners");
        assert!(pattern.contains(&(0, 4)) && pattern.contains(&(4, 8)), "row/column extremes");
    }

    #[test]
    fn too_small_grids_cannot_host_the_default_pattern() {
        assert!(default_view_pattern(3, 3).is_err());
        assert!(default_view_pattern(9, 2).is_err());
    }

    #[test]
    fn input_gathers_the_requested_views_in_order() {
        let lf = field(9, 9);
        let pattern = default_view_pattern(9, 9).unwrap();
        let input = dflf_input(&lf, &pattern).unwrap();
        assert_eq!(input.dim(), (11, 8, 6, 3));
        for (i, &(u, v)) in pattern.iter().enumerate() {
            let got = input.index_axis(Axis(0), i);
            let want = lf.subaperture(u, v).unwrap();
            assert_eq!(got, want, "view {i} = ({u}, {v})");
        }
    }

    #[test]
    fn out_of_range_and_duplicate_views_are_rejected() {
        let lf = field(5, 3);
        let err = dflf_input(&lf, &[(0, 0), (5, 0)]).unwrap_err();
        assert!(matches!(err, NetError::Parameter(_)), "{err}");
        let err = dflf_input(&lf, &[(1, 1), (1, 1)]).unwrap_err();
        assert!(matches!(err, NetError::Parameter(_)), "{err}");
        assert!(dflf_input(&lf, &[]).is_err());
    }
}

//! Color rendering of disparity maps: values normalized by the stack's
//! maximum focus disparity, mapped through a perceptually uniform colormap,
//! invalid pixels drawn black.

use ddff_core::lightfield::DisparityMap;
use ndarray::Array3;

/// Evenly spaced viridis anchors (dark violet at 0, yellow at 1), linearly
/// interpolated between.
const VIRIDIS: [[f32; 3]; 10] = [
    [0.267, 0.005, 0.329],
    [0.282, 0.156, 0.471],
    [0.243, 0.292, 0.538],
    [0.192, 0.408, 0.556],
    [0.149, 0.510, 0.557],
    [0.122, 0.620, 0.545],
    [0.208, 0.718, 0.473],
    [0.427, 0.804, 0.349],
    [0.706, 0.871, 0.173],
    [0.993, 0.906, 0.144],
];

/// Maps a value in [0, 1] (clamped) to RGB.
pub fn viridis(t: f32) -> [f32; 3] {
    let t = t.clamp(0.0, 1.0);
    let pos = t * (VIRIDIS.len() - 1) as f32;
    let i = (pos.floor() as usize).min(VIRIDIS.len() - 2);
    let f = pos - i as f32;
    let a = VIRIDIS[i];
    let b = VIRIDIS[i + 1];
    [
        a[0] + f * (b[0] - a[0]),
        a[1] + f * (b[1] - a[1]),
        a[2] + f * (b[2] - a[2]),
    ]
}

/// Renders a disparity map to an RGB image, `(height, width, 3)` in [0, 1].
/// `max_disparity` is the normalization constant (the stack's largest focus
/// disparity); masked-out pixels come out black.
pub fn disparity_to_color(map: &DisparityMap, max_disparity: f64) -> Array3<f32> {
    let (h, w) = map.dim();
    let scale = if max_disparity > 0.0 {
        1.0 / max_disparity as f32
    } else {
        1.0
    };
    let mut out = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            if !map.mask[[y, x]] {
                continue;
            }
            let rgb = viridis(map.values[[y, x]] * scale);
            for c in 0..3 {
                out[[y, x, c]] = rgb[c];
            }
        }
    }
    out
}

/// Renders a non-negative score map to grayscale, normalized by `max_score`.
pub fn score_to_gray(values: &ndarray::Array2<f64>, max_score: f64) -> Array3<f32> {
    let (h, w) = values.dim();
    let scale = if max_score > 0.0 { 1.0 / max_score } else { 1.0 };
    let mut out = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let g = (values[[y, x]] * scale).clamp(0.0, 1.0) as f32;
            for c in 0..3 {
                out[[y, x, c]] = g;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn endpoints_and_clamping() {
        assert_eq!(viridis(0.0), VIRIDIS[0]);
        assert_eq!(viridis(1.0), VIRIDIS[9]);
        assert_eq!(viridis(-5.0), VIRIDIS[0]);
        assert_eq!(viridis(5.0), VIRIDIS[9]);
        // Interior values interpolate smoothly: green channel rises then
        // stays monotone across the ramp.
        let g0 = viridis(0.2)[1];
        let g1 = viridis(0.6)[1];
        assert!(g1 > g0);
    }

    #[test]
    fn masked_pixels_render_black() {
        let values = Array2::from_shape_fn((2, 2), |(y, x)| (y + x) as f32 * 0.14);
        let mut mask = Array2::from_elem((2, 2), true);
        mask[[1, 1]] = false;
        let map = DisparityMap::masked(values, mask).unwrap();
        let img = disparity_to_color(&map, 0.28);
        assert_eq!(img[[1, 1, 0]], 0.0);
        assert_eq!(img[[1, 1, 1]], 0.0);
        assert_eq!(img[[1, 1, 2]], 0.0);
        // Valid zero-disparity pixel is the colormap origin, not black.
        assert!(img[[0, 0, 2]] > 0.3);
    }
}

//! Oracle tests for the Fourier shift primitive and the refocusing engine.
//!
//! The integer-shift oracle is an independent direct implementation
//! (circular array roll); the fractional-shift oracle is the analytic shift
//! of a sinusoid. Property tests use band-limited images: test images are
//! sums of sinusoids strictly below the Nyquist frequency, where the shift
//! theorem is exact. (At the Nyquist bin itself no real-valued shift
//! operator can be exact for fractional offsets; the implementation
//! attenuates that bin by cos(pi*d), and the synthetic renderer keeps its
//! textures Nyquist-free for this reason.)

use ddff_core::lightfield::{CameraIntrinsics, LightField};
use ddff_core::refocus::{phase_shift, refocus_at_disparity, synthesize_stack};
use ndarray::{Array2, Array5};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Independent oracle: circular roll with out(y, x) = in(y + dy, x + dx),
/// indices taken modulo the image size.
fn circular_roll(image: &Array2<f64>, dx: i64, dy: i64) -> Array2<f64> {
    let (h, w) = image.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let sy = (y as i64 + dy).rem_euclid(h as i64) as usize;
        let sx = (x as i64 + dx).rem_euclid(w as i64) as usize;
        image[[sy, sx]]
    })
}

fn seeded_image(h: usize, w: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((h, w), |_| rng.random::<f64>())
}

/// Sum of `modes` random sinusoids with integer frequencies strictly below
/// Nyquist on both axes; the phase-shift theorem holds exactly for these.
fn band_limited_image(h: usize, w: usize, modes: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Array2::from_elem((h, w), 0.5);
    for _ in 0..modes {
        let fx = rng.random_range(0..(w as i64 / 2 - 1).max(1));
        let fy = rng.random_range(0..(h as i64 / 2 - 1).max(1));
        let amp = rng.random_range(0.01..0.1);
        let phase = rng.random_range(0.0..2.0 * PI);
        for ((y, x), v) in img.indexed_iter_mut() {
            *v += amp
                * (2.0 * PI * (fx as f64 * x as f64 / w as f64 + fy as f64 * y as f64 / h as f64)
                    + phase)
                    .cos();
        }
    }
    img
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn zero_shift_is_identity() {
    let img = seeded_image(17, 23, 7);
    let out = phase_shift(img.view(), 0.0, 0.0).unwrap();
    assert!(max_abs_diff(&img, &out) < 1e-12);
}

#[test]
fn integer_shift_matches_circular_roll() {
    // Arbitrary (not band-limited) content: integer shifts are exact for any
    // image because every bin multiplier, Nyquist included, is exact.
    for &(h, w, dx, dy, seed) in &[
        (16usize, 16usize, 3i64, -2i64, 1u64),
        (15, 20, 3, -2, 2),
        (8, 8, 1, 0, 3),
        (32, 48, -5, 7, 4),
    ] {
        let img = seeded_image(h, w, seed);
        let expected = circular_roll(&img, dx, dy);
        let out = phase_shift(img.view(), dx as f64, dy as f64).unwrap();
        let err = max_abs_diff(&expected, &out);
        assert!(err < 1e-6, "{h}x{w} shift ({dx},{dy}): max abs err {err}");
    }
}

#[test]
fn half_pixel_shift_of_sinusoid_is_analytic() {
    // I(x) = cos(2 pi x / W) shifted by dx = 0.5 must equal
    // cos(2 pi (x + 0.5) / W).
    let (h, w) = (12usize, 64usize);
    let img = Array2::from_shape_fn((h, w), |(_, x)| (2.0 * PI * x as f64 / w as f64).cos());
    let expected =
        Array2::from_shape_fn((h, w), |(_, x)| (2.0 * PI * (x as f64 + 0.5) / w as f64).cos());
    let out = phase_shift(img.view(), 0.5, 0.0).unwrap();
    let err = max_abs_diff(&expected, &out);
    assert!(err < 1e-6, "max abs err {err}");
}

#[test]
fn fractional_shift_preserves_mean() {
    let img = seeded_image(31, 22, 11);
    let mean_in = img.mean().unwrap();
    for &(dx, dy) in &[(0.37, -1.42), (2.5, 0.5), (-0.013, 3.71)] {
        let out = phase_shift(img.view(), dx, dy).unwrap();
        let mean_out = out.mean().unwrap();
        assert!(
            (mean_in - mean_out).abs() < 1e-9,
            "shift ({dx},{dy}) changed mean by {}",
            (mean_in - mean_out).abs()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Shifting by d then -d restores a band-limited image.
    #[test]
    fn shift_is_invertible(
        dx in -3.0f64..3.0,
        dy in -3.0f64..3.0,
        seed in 0u64..1000,
    ) {
        let img = band_limited_image(24, 20, 6, seed);
        let there = phase_shift(img.view(), dx, dy).unwrap();
        let back = phase_shift(there.view(), -dx, -dy).unwrap();
        prop_assert!(max_abs_diff(&img, &back) < 1e-6);
    }

    /// Composing two shifts equals the single combined shift.
    #[test]
    fn shifts_compose(
        d1 in -2.0f64..2.0,
        d2 in -2.0f64..2.0,
        seed in 0u64..1000,
    ) {
        let img = band_limited_image(20, 24, 6, seed);
        let a = phase_shift(phase_shift(img.view(), d1, -d2).unwrap().view(), d2, d1).unwrap();
        let b = phase_shift(img.view(), d1 + d2, d1 - d2).unwrap();
        prop_assert!(max_abs_diff(&a, &b) < 1e-6);
    }
}

/// Builds a light field whose sub-apertures all equal the same image.
fn constant_view_lightfield(img: &Array2<f64>) -> LightField {
    let (h, w) = img.dim();
    let intr = CameraIntrinsics::new(521.4, (285.11, 187.83), 27e-5, 5, 5, None).unwrap();
    let samples = Array5::from_shape_fn((5, 5, h, w, 1), |(_, _, y, x, _)| img[[y, x]] as f32);
    LightField::new(intr, samples).unwrap()
}

#[test]
fn refocusing_identical_views_reproduces_them_at_zero_disparity() {
    let img = band_limited_image(16, 16, 4, 42);
    let lf = constant_view_lightfield(&img);
    let out = refocus_at_disparity(&lf, 0.0).unwrap();
    for ((y, x, _), v) in out.indexed_iter() {
        assert!((f64::from(*v) - img[[y, x]]).abs() < 1e-6, "at ({y}, {x})");
    }
}

#[test]
fn refocusing_constant_lightfield_is_constant_for_any_disparity() {
    let img = Array2::from_elem((16, 16), 0.625);
    let lf = constant_view_lightfield(&img);
    for &d in &[0.0, 0.1, 0.28, -0.2] {
        let out = refocus_at_disparity(&lf, d).unwrap();
        for v in out.iter() {
            assert!((f64::from(*v) - 0.625).abs() < 1e-6, "d={d}");
        }
    }
}

#[test]
fn refocus_at_zero_disparity_is_view_mean() {
    // Refocusing at d = 0 applies no shift, so every output pixel must be
    // the arithmetic mean over sub-apertures (not the sum).
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let intr = CameraIntrinsics::new(521.4, (285.11, 187.83), 27e-5, 3, 3, None).unwrap();
    let samples = Array5::from_shape_fn((3, 3, 8, 8, 2), |_| rng.random::<f32>());
    let lf = LightField::new(intr, samples.clone()).unwrap();
    let out = refocus_at_disparity(&lf, 0.0).unwrap();
    for ((y, x, c), v) in out.indexed_iter() {
        let mut mean = 0.0f64;
        for u in 0..3 {
            for vv in 0..3 {
                mean += f64::from(samples[[u, vv, y, x, c]]);
            }
        }
        mean /= 9.0;
        assert!((f64::from(*v) - mean).abs() < 1e-6, "at ({y}, {x}, {c})");
    }
}

#[test]
fn synthesized_stack_has_expected_shape_and_sweep() {
    let img = band_limited_image(16, 16, 4, 9);
    let lf = constant_view_lightfield(&img);
    let stack = synthesize_stack(&lf, 10, 0.28, 0.02).unwrap();
    assert_eq!(stack.dim(), (10, 16, 16, 1));
    assert_eq!(stack.focus_disparities.len(), 10);
    assert!((stack.focus_disparities[0] - 0.28).abs() < 1e-15);
    assert!((stack.focus_disparities[9] - 0.02).abs() < 1e-12);
    assert!(stack.focus_disparities.windows(2).all(|p| p[0] > p[1]));
}

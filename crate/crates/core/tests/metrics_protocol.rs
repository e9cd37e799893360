//! Frozen oracles for the evaluation protocol: hand-computed metric values,
//! analytic bumpiness surfaces, threshold-sweep monotonicity, and a
//! grid-search check of the closed-form scale fit.

use ddff_core::lightfield::{DepthMap, DisparityMap};
use ddff_core::metrics::{badpix_curve, compute_metrics, lytro_rescale};
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn two_pixel_hand_case_reproduces_every_metric() {
    let pred = DisparityMap::dense(array![[1.0f32, 2.0]]).unwrap();
    let gt = DisparityMap::dense(array![[1.0f32, 4.0]]).unwrap();
    let r = compute_metrics(&pred, &gt, &[0.07]).unwrap();

    // err = [0, -2]; mean squared error (0 + 4) / 2.
    assert_eq!(r.mse, 2.0);
    assert_eq!(r.rms, 2.0f64.sqrt());
    // log errors [0, ln(1/2)]: sqrt(ln^2(2) / 2).
    let expect_log = (2.0f64.ln().powi(2) / 2.0).sqrt();
    assert!((r.log_rms - expect_log).abs() < 1e-12);
    assert!((expect_log - 0.49013).abs() < 1e-5, "sanity on the constant");
    // |err|/gt = [0, 0.5] -> 0.25; err^2/gt = [0, 1] -> 0.5.
    assert_eq!(r.abs_rel, 0.25);
    assert_eq!(r.sqr_rel, 0.5);
    // Ratios max(p/g, g/p) = [1, 2]: only the first beats 1.25, 1.5625,
    // and 1.953125.
    assert_eq!(r.accuracy_d1, 50.0);
    assert_eq!(r.accuracy_d2, 50.0);
    assert_eq!(r.accuracy_d3, 50.0);
    assert_eq!(r.badpix_at(0.07), Some(50.0));
    assert_eq!(r.valid_pixel_count, 2);
    assert_eq!(r.clamped_pixels, 0);
    assert!(!r.empty);
}

#[test]
fn quadratic_error_surface_saturates_bumpiness_at_5() {
    // pred - gt = x^2: the second x-derivative is exactly 2 under 3-point
    // stencils (one-sided at borders included), so every pixel's Hessian
    // norm is 2, far above the 0.05 cap -> min(0.05, 2) * 100 = 5.0.
    let (h, w) = (8, 11);
    let gt = DisparityMap::dense(Array2::zeros((h, w))).unwrap();
    let pred =
        DisparityMap::dense(Array2::from_shape_fn((h, w), |(_, x)| (x * x) as f32)).unwrap();
    let r = compute_metrics(&pred, &gt, &[0.07]).unwrap();
    assert_eq!(r.bumpiness, 5.0);
}

#[test]
fn rms_squared_tracks_mse_to_the_ulp() {
    // rms is stored as sqrt(mse); squaring a correctly rounded square root
    // reproduces mse to within a couple of ulps, never exactly in general.
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let vals = Array2::from_shape_fn((9, 9), |_| rng.random_range(0.01f32..1.0));
        let noise = vals.mapv(|v| v + rng.random_range(-0.1f32..0.1));
        let gt = DisparityMap::dense(vals).unwrap();
        let pred = DisparityMap::dense(noise).unwrap();
        let r = compute_metrics(&pred, &gt, &[0.07]).unwrap();
        let err = (r.rms * r.rms - r.mse).abs();
        assert!(err <= 4.0 * f64::EPSILON * r.mse.max(f64::MIN_POSITIVE));
    }
}

#[test]
fn badpix_curves_are_monotone_on_random_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid: Vec<f64> = (1..40).map(|i| i as f64 * 0.01).collect();
    for _ in 0..10 {
        let gt_vals = Array2::from_shape_fn((16, 16), |_| rng.random_range(0.02f32..0.3));
        let pred_vals = gt_vals.mapv(|v| v + rng.random_range(-0.2f32..0.2));
        let gt = DisparityMap::dense(gt_vals).unwrap();
        let pred = DisparityMap::dense(pred_vals).unwrap();
        let curve = badpix_curve(&pred, &gt, &grid).unwrap();
        for pair in curve.windows(2) {
            assert!(
                pair[0].1 >= pair[1].1,
                "badpix rose from {:?} to {:?}",
                pair[0],
                pair[1]
            );
        }
        let r = compute_metrics(&pred, &gt, &[0.07]).unwrap();
        assert!(r.accuracy_d1 <= r.accuracy_d2 && r.accuracy_d2 <= r.accuracy_d3);
    }
}

/// Least-squares objective the scale fit minimizes.
fn objective(k: f64, pred: &DepthMap, gt: &DepthMap) -> f64 {
    let mut sum = 0.0;
    for ((p, g), (&mp, &mg)) in pred
        .values
        .iter()
        .zip(gt.values.iter())
        .zip(pred.mask.iter().zip(gt.mask.iter()))
    {
        if mp && mg {
            let e = k * f64::from(*p) - f64::from(*g);
            sum += e * e;
        }
    }
    sum
}

#[test]
fn scale_fit_matches_grid_search_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..10 {
        let scale = rng.random_range(0.05f32..20.0);
        let gt_vals = Array2::from_shape_fn((12, 12), |_| rng.random_range(0.2f32..5.0));
        let pred_vals =
            gt_vals.mapv(|v| v / scale + rng.random_range(-0.05f32..0.05));
        let gt = DepthMap::dense(gt_vals).unwrap();
        let pred = DepthMap::dense(pred_vals.mapv(|v| v.max(0.01))).unwrap();
        let (k_star, _) = lytro_rescale(&pred, &gt).unwrap();

        // Oracle: log-spaced coarse scan over [1e-3, 1e3], then three
        // linear refinements around the best cell.
        let mut lo = 1e-3f64.ln();
        let mut hi = 1e3f64.ln();
        let mut best_k = 0.0;
        for round in 0..4 {
            let n = 4000;
            let mut best_obj = f64::INFINITY;
            let mut best_i = 0;
            for i in 0..=n {
                let t = lo + (hi - lo) * i as f64 / n as f64;
                let k = if round == 0 { t.exp() } else { t };
                let obj = objective(k, &pred, &gt);
                if obj < best_obj {
                    best_obj = obj;
                    best_i = i;
                }
            }
            let step = (hi - lo) / n as f64;
            let center = lo + step * best_i as f64;
            let (new_lo, new_hi) = (center - 2.0 * step, center + 2.0 * step);
            if round == 0 {
                lo = new_lo.exp();
                hi = new_hi.exp();
                best_k = center.exp();
            } else {
                lo = new_lo;
                hi = new_hi;
                best_k = center;
            }
        }
        let rel = (best_k - k_star).abs() / k_star.abs();
        assert!(rel < 1e-6, "case {case}: grid {best_k} vs closed form {k_star}");

        // Local optimality: nudging k* by 0.1% must hurt.
        let at = objective(k_star, &pred, &gt);
        assert!(objective(k_star * 1.001, &pred, &gt) > at);
        assert!(objective(k_star * 0.999, &pred, &gt) > at);
    }
}

#[test]
fn metrics_are_storage_order_invariant() {
    // Transposing both maps permutes pixel visit order; pure reductions
    // must agree to roundoff.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gt_vals = Array2::from_shape_fn((10, 14), |_| rng.random_range(0.05f32..0.4));
    let pred_vals = gt_vals.mapv(|v| v + rng.random_range(-0.1f32..0.1));
    let gt = DisparityMap::dense(gt_vals.clone()).unwrap();
    let pred = DisparityMap::dense(pred_vals.clone()).unwrap();
    let gt_t = DisparityMap::dense(gt_vals.t().as_standard_layout().to_owned()).unwrap();
    let pred_t = DisparityMap::dense(pred_vals.t().as_standard_layout().to_owned()).unwrap();
    let a = compute_metrics(&pred, &gt, &[0.07]).unwrap();
    let b = compute_metrics(&pred_t, &gt_t, &[0.07]).unwrap();
    assert!((a.mse - b.mse).abs() < 1e-12);
    assert!((a.abs_rel - b.abs_rel).abs() < 1e-12);
    assert_eq!(a.badpix, b.badpix);
    assert_eq!(a.accuracy_d1, b.accuracy_d1);
    // Bumpiness is *not* storage-order invariant (it is a neighborhood
    // operator), but transposing both inputs transposes the error surface,
    // which preserves the Frobenius norm of the Hessian.
    assert!((a.bumpiness - b.bumpiness).abs() < 1e-12);
}

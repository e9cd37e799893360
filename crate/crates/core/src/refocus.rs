//! Fourier-domain refocusing: sub-pixel image shifts via the FFT shift
//! theorem, and focal-stack synthesis from 4D light fields.
//!
//! # Shift convention
//!
//! [`phase_shift`] multiplies the spectrum by `exp(2*pi*i*(dx*xi_x + dy*xi_y))`
//! with normalized signed frequencies `xi = k~/N`, which samples the input at
//! *larger* coordinates: `out(x, y) = in(x + dx, y + dy)` with circular
//! (periodic) boundary. For integer shifts this is exactly a circular roll;
//! e.g. `dx = 1` on the row `[a, b, c, d]` yields `[b, c, d, a]`. A feature
//! located at `x0` therefore appears at `x0 - dx` in the output. See
//! `docs/shift-convention.md` for a worked 4-pixel example.
//!
//! At the Nyquist bin of an even-length axis the complex exponential would
//! break Hermitian symmetry for fractional shifts, so its multiplier is
//! `cos(pi * d)` (the exponential's real part). Integer shifts are unaffected
//! (`cos(pi*n) = (-1)^n` is exact) and the output stays real for every shift.
//! Fractional shifts attenuate Nyquist-frequency content; callers that need
//! exact round trips (like the synthetic renderer) keep their signals free of
//! Nyquist energy.
//!
//! # Refocusing
//!
//! Refocusing at disparity `d` shifts sub-aperture `(u, v)` by
//! `(d*(u_c - u), d*(v_c - v))` and averages: content at disparity `d` aligns
//! across views and stays sharp, content at other disparities is smeared over
//! `|d - d_true| * grid_offset` pixels. Slices are the arithmetic mean (not
//! the sum) over all sub-apertures, so slice values live on the same scale as
//! the input views.

use ndarray::{Array2, Array3, Array4, ArrayView2, ArrayView3};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{CoreError, Result};
use crate::lightfield::{CameraIntrinsics, LightField};

/// Per-axis spectrum multipliers realizing a circular shift by `shift`.
pub(crate) fn axis_multiplier(n: usize, shift: f64) -> Vec<Complex64> {
    let mut m = Vec::with_capacity(n);
    for k in 0..n {
        if n % 2 == 0 && k == n / 2 {
            // Nyquist bin: real multiplier keeps the output real.
            m.push(Complex64::new((PI * shift).cos(), 0.0));
        } else {
            let signed = if k <= n / 2 {
                k as f64
            } else {
                k as f64 - n as f64
            };
            m.push(Complex64::from_polar(1.0, 2.0 * PI * shift * signed / n as f64));
        }
    }
    m
}

/// Cached FFT plans for one image shape.
pub(crate) struct Fft2 {
    h: usize,
    w: usize,
    fwd_rows: Arc<dyn Fft<f64>>,
    inv_rows: Arc<dyn Fft<f64>>,
    fwd_cols: Arc<dyn Fft<f64>>,
    inv_cols: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl Fft2 {
    pub(crate) fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd_rows = planner.plan_fft_forward(w);
        let inv_rows = planner.plan_fft_inverse(w);
        let fwd_cols = planner.plan_fft_forward(h);
        let inv_cols = planner.plan_fft_inverse(h);
        let scratch_len = fwd_rows
            .get_inplace_scratch_len()
            .max(inv_rows.get_inplace_scratch_len())
            .max(fwd_cols.get_inplace_scratch_len())
            .max(inv_cols.get_inplace_scratch_len());
        Fft2 {
            h,
            w,
            fwd_rows,
            inv_rows,
            fwd_cols,
            inv_cols,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        }
    }

    pub(crate) fn transform(&mut self, data: &mut Array2<Complex64>, inverse: bool) {
        let (rows, cols) = if inverse {
            (self.inv_rows.clone(), self.inv_cols.clone())
        } else {
            (self.fwd_rows.clone(), self.fwd_cols.clone())
        };
        for mut row in data.rows_mut() {
            let slice = row.as_slice_mut().expect("row-major layout");
            rows.process_with_scratch(slice, &mut self.scratch);
        }
        // `as_standard_layout` forces a row-major copy; `to_owned` on a
        // transposed view would keep column-major strides.
        let mut tr = data.t().as_standard_layout().into_owned();
        for mut row in tr.rows_mut() {
            let slice = row.as_slice_mut().expect("row-major layout");
            cols.process_with_scratch(slice, &mut self.scratch);
        }
        data.assign(&tr.t());
    }

    pub(crate) fn forward(&mut self, image: ArrayView2<'_, f64>) -> Array2<Complex64> {
        let mut data = image.mapv(|v| Complex64::new(v, 0.0));
        self.transform(&mut data, false);
        data
    }

    /// Inverse transform; returns the real part scaled by `1 / (h * w)`.
    pub(crate) fn inverse_real(&mut self, mut spectrum: Array2<Complex64>) -> Array2<f64> {
        self.transform(&mut spectrum, true);
        let norm = 1.0 / (self.h * self.w) as f64;
        spectrum.mapv(|v| v.re * norm)
    }
}

/// Applies the spectrum multipliers for a shift of `(dx, dy)` in place.
pub(crate) fn apply_shift(spectrum: &mut Array2<Complex64>, mx: &[Complex64], my: &[Complex64]) {
    for (y, mut row) in spectrum.rows_mut().into_iter().enumerate() {
        let fy = my[y];
        for (x, v) in row.iter_mut().enumerate() {
            *v *= fy * mx[x];
        }
    }
}

/// Circularly shifts an image by a (possibly fractional) offset using the
/// FFT shift theorem: `out(x, y) = in(x + dx, y + dy)` with periodic
/// boundary. The mean of the image is preserved exactly up to FFT roundoff.
pub fn phase_shift(image: ArrayView2<'_, f64>, dx: f64, dy: f64) -> Result<Array2<f64>> {
    if !dx.is_finite() || !dy.is_finite() {
        return Err(CoreError::Parameter(format!(
            "shift ({dx}, {dy}) must be finite"
        )));
    }
    let (h, w) = image.dim();
    if h == 0 || w == 0 {
        return Err(CoreError::Parameter("cannot shift an empty image".into()));
    }
    if image.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite("phase_shift input".into()));
    }
    let mut fft = Fft2::new(h, w);
    let mut spectrum = fft.forward(image);
    let mx = axis_multiplier(w, dx);
    let my = axis_multiplier(h, dy);
    apply_shift(&mut spectrum, &mx, &my);
    Ok(fft.inverse_real(spectrum))
}

/// A stack of refocused slices, ordered to match `focus_disparities`
/// (strictly monotone, descending by convention: near to far).
#[derive(Debug, Clone)]
pub struct FocalStack {
    /// Slice pixels, indexed `(slice, y, x, channel)`.
    pub slices: Array4<f32>,
    /// Focus disparity of each slice, in pixels per unit viewpoint offset.
    pub focus_disparities: Vec<f64>,
    pub intrinsics: CameraIntrinsics,
}

impl FocalStack {
    /// Validates slice count, finiteness and strict monotonicity of the
    /// focus disparities.
    pub fn new(
        slices: Array4<f32>,
        focus_disparities: Vec<f64>,
        intrinsics: CameraIntrinsics,
    ) -> Result<Self> {
        let s = slices.dim().0;
        if s == 0 {
            return Err(CoreError::Parameter("focal stack must be non-empty".into()));
        }
        if focus_disparities.len() != s {
            return Err(CoreError::Parameter(format!(
                "{} focus disparities for {s} slices",
                focus_disparities.len()
            )));
        }
        if focus_disparities.iter().any(|d| !d.is_finite()) {
            return Err(CoreError::NonFinite("focus disparity".into()));
        }
        let ascending = focus_disparities.windows(2).all(|p| p[0] < p[1]);
        let descending = focus_disparities.windows(2).all(|p| p[0] > p[1]);
        if s > 1 && !ascending && !descending {
            return Err(CoreError::Parameter(format!(
                "focus disparities must be strictly monotone, got {focus_disparities:?}"
            )));
        }
        if slices.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("focal-stack slice".into()));
        }
        Ok(FocalStack {
            slices,
            focus_disparities,
            intrinsics,
        })
    }

    /// Number of slices.
    pub fn len(&self) -> usize {
        self.focus_disparities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.focus_disparities.is_empty()
    }

    /// `(slices, height, width, channels)`.
    pub fn dim(&self) -> (usize, usize, usize, usize) {
        self.slices.dim()
    }

    /// View of one slice, indexed `(y, x, channel)`.
    pub fn slice_view(&self, i: usize) -> ArrayView3<'_, f32> {
        self.slices.index_axis(ndarray::Axis(0), i)
    }
}

/// Shared engine: refocuses a light field at each disparity in `disparities`.
/// Forward FFTs are computed once per sub-aperture channel and reused across
/// slices; accumulation runs in fixed `(u, v)` order so results are
/// bit-reproducible.
fn refocus_slices(lf: &LightField, disparities: &[f64]) -> Result<Vec<Array3<f64>>> {
    for d in disparities {
        if !d.is_finite() {
            return Err(CoreError::Parameter(format!("disparity {d} must be finite")));
        }
    }
    let (gu, gv, h, w, c) = lf.dim();
    let intr = &lf.intrinsics;
    let mut fft = Fft2::new(h, w);
    let mut acc: Vec<Array3<f64>> = disparities.iter().map(|_| Array3::zeros((h, w, c))).collect();

    for u in 0..gu {
        for v in 0..gv {
            let view = lf.subaperture(u, v)?;
            let off_x = intr.center_u - u as f64;
            let off_y = intr.center_v - v as f64;
            for ch in 0..c {
                let plane = view.index_axis(ndarray::Axis(2), ch).mapv(f64::from);
                let spectrum = fft.forward(plane.view());
                for (si, &d) in disparities.iter().enumerate() {
                    let mx = axis_multiplier(w, d * off_x);
                    let my = axis_multiplier(h, d * off_y);
                    let mut shifted = spectrum.clone();
                    apply_shift(&mut shifted, &mx, &my);
                    let real = fft.inverse_real(shifted);
                    let mut target = acc[si].index_axis_mut(ndarray::Axis(2), ch);
                    target += &real;
                }
            }
        }
    }

    let n_views = (gu * gv) as f64;
    for a in &mut acc {
        a.mapv_inplace(|v| v / n_views);
    }
    Ok(acc)
}

/// Refocuses a light field at a single disparity; the result is the mean of
/// the shifted sub-aperture images, indexed `(y, x, channel)`.
pub fn refocus_at_disparity(lf: &LightField, disparity: f64) -> Result<Array3<f32>> {
    let slices = refocus_slices(lf, &[disparity])?;
    Ok(slices.into_iter().next().unwrap().mapv(|v| v as f32))
}

/// Focus disparities for an `s`-slice stack sweeping `d_near` down to
/// `d_far` in equal steps (both endpoints included; a single slice sits at
/// `d_near`).
pub fn stack_disparities(s: usize, d_near: f64, d_far: f64) -> Result<Vec<f64>> {
    if s == 0 {
        return Err(CoreError::Parameter("stack needs at least one slice".into()));
    }
    if !d_near.is_finite() || !d_far.is_finite() {
        return Err(CoreError::Parameter(format!(
            "disparity range [{d_near}, {d_far}] must be finite"
        )));
    }
    if s > 1 && d_near <= d_far {
        return Err(CoreError::Parameter(format!(
            "need d_near > d_far for a descending sweep, got [{d_near}, {d_far}]"
        )));
    }
    if s == 1 {
        return Ok(vec![d_near]);
    }
    let step = (d_far - d_near) / (s - 1) as f64;
    Ok((0..s).map(|i| d_near + step * i as f64).collect())
}

/// Synthesizes an `s`-slice focal stack from a light field, refocusing at
/// disparities swept linearly from `d_near` down to `d_far`.
pub fn synthesize_stack(lf: &LightField, s: usize, d_near: f64, d_far: f64) -> Result<FocalStack> {
    let disparities = stack_disparities(s, d_near, d_far)?;
    let slices_f64 = refocus_slices(lf, &disparities)?;
    let (_, _, h, w, c) = lf.dim();
    let mut slices = Array4::zeros((disparities.len(), h, w, c));
    for (i, s64) in slices_f64.into_iter().enumerate() {
        slices
            .index_axis_mut(ndarray::Axis(0), i)
            .assign(&s64.mapv(|v| v as f32));
    }
    FocalStack::new(slices, disparities, lf.intrinsics.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn axis_multiplier_integer_shift_is_unit_modulus() {
        for &n in &[4usize, 5, 8, 96] {
            let m = axis_multiplier(n, 3.0);
            for v in &m {
                assert!((v.norm() - 1.0).abs() < 1e-12, "n={n} |m|={}", v.norm());
            }
        }
    }

    #[test]
    fn axis_multiplier_nyquist_is_real() {
        let m = axis_multiplier(8, 0.37);
        assert_eq!(m[4].im, 0.0);
        assert!((m[4].re - (PI * 0.37).cos()).abs() < 1e-12);
    }

    #[test]
    fn phase_shift_rejects_bad_input() {
        let img = Array2::<f64>::zeros((4, 4));
        assert!(phase_shift(img.view(), f64::NAN, 0.0).is_err());
        let empty = Array2::<f64>::zeros((0, 4));
        assert!(phase_shift(empty.view(), 1.0, 0.0).is_err());
        let mut bad = Array2::<f64>::zeros((4, 4));
        bad[[1, 1]] = f64::INFINITY;
        assert!(phase_shift(bad.view(), 1.0, 0.0).is_err());
    }

    #[test]
    fn stack_disparity_sweep_hits_both_endpoints() {
        let d = stack_disparities(10, 0.28, 0.02).unwrap();
        assert_eq!(d.len(), 10);
        assert!((d[0] - 0.28).abs() < 1e-15);
        assert!((d[9] - 0.02).abs() < 1e-12);
        assert!(d.windows(2).all(|p| p[0] > p[1]));
        assert!(stack_disparities(0, 0.28, 0.02).is_err());
        assert!(stack_disparities(3, 0.02, 0.28).is_err());
        assert_eq!(stack_disparities(1, 0.28, 0.02).unwrap(), vec![0.28]);
    }

    #[test]
    fn focal_stack_validates_monotonicity() {
        let slices = Array4::zeros((3, 4, 4, 1));
        let intr = CameraIntrinsics::plenoptic_defaults();
        assert!(FocalStack::new(slices.clone(), vec![0.3, 0.2, 0.1], intr.clone()).is_ok());
        assert!(FocalStack::new(slices.clone(), vec![0.1, 0.2, 0.3], intr.clone()).is_ok());
        assert!(FocalStack::new(slices.clone(), vec![0.3, 0.3, 0.1], intr.clone()).is_err());
        assert!(FocalStack::new(slices, vec![0.3, 0.1], intr).is_err());
    }
}

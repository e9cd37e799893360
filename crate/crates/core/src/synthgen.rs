//! Synthetic light-field scenes with analytic groundtruth.
//!
//! A scene is a set of fronto-parallel textured planes at known depths.
//! Sub-aperture `(u, v)` sees each plane's texture translated by
//! `(-d * (u_c - u), -d * (v_c - v))` relative to the center view, where `d`
//! is the plane's disparity — exactly the inverse of the shift applied by
//! refocusing, and generated with the same Fourier shift primitive as
//! refocusing. Occlusion is hard compositing: nearer planes paint over
//! farther ones through fixed frame-space region masks.
//!
//! # Boundary model
//!
//! Textures live on the frame itself with periodic (circular) boundary, the
//! same boundary model the refocusing shift uses. Procedural noise textures
//! are band-limited (no energy at or above 90% of Nyquist) and seamless by
//! construction, so refocusing a rendered single-plane light field at the
//! plane's disparity reproduces the center view *exactly* (to FFT roundoff)
//! at every pixel — shifting by `-delta` and then `+delta` multiplies each
//! spectrum bin by exactly 1. Any canvas larger than the frame would break
//! this: cropping after the shift introduces a wrap seam whose ringing
//! under sub-pixel shifts decays only like 1/distance.
//!
//! User-supplied image textures must span the frame plus the scene's shift
//! margin on every side ([`SceneSpec::margin_px`]); the frame-sized center
//! is used, and pixels within the margin of the frame border see content
//! wrapped from the opposite edge. Evaluation regions should be cropped by
//! the margin. Occlusion edges of multi-plane scenes likewise ring under
//! refocusing (as real defocus spreads edges); quantitative round-trip
//! guarantees hold on plane interiors of single-plane renders.

use ndarray::{Array2, Array3, Array5};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::lightfield::{disparity_from_depth, CameraIntrinsics, DisparityMap, LightField};
use crate::refocus::Fft2;

/// Number of color channels in rendered scenes.
pub const CHANNELS: usize = 3;

/// Fraction of the Nyquist frequency above which procedural textures carry
/// no energy.
const NOISE_CUTOFF: f64 = 0.9;

/// A plane's coverage in frame coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    /// Covers every pixel.
    FullFrame,
    /// Axis-aligned rectangle `[y0, y0+height) x [x0, x0+width)`.
    Rect {
        y0: usize,
        x0: usize,
        height: usize,
        width: usize,
    },
}

impl Region {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        match *self {
            Region::FullFrame => true,
            Region::Rect {
                y0,
                x0,
                height,
                width,
            } => y >= y0 && y < y0 + height && x >= x0 && x < x0 + width,
        }
    }

    fn fits(&self, frame: (usize, usize)) -> bool {
        match *self {
            Region::FullFrame => true,
            Region::Rect {
                y0,
                x0,
                height,
                width,
            } => height > 0 && width > 0 && y0 + height <= frame.0 && x0 + width <= frame.1,
        }
    }
}

/// Texture of one plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Texture {
    /// Seeded band-limited procedural noise, values in [0.15, 0.85].
    Noise { seed: u64 },
    /// Explicit image patch, `(height, width, channel)` row-major, values in
    /// [0, 1]. Must cover the frame plus the scene's shift margin.
    Image {
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
    },
}

/// One fronto-parallel plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    /// Metric depth in meters; planes are ordered near to far.
    pub depth_m: f64,
    pub region: Region,
    pub texture: Texture,
}

/// Full description of a synthetic scene; rendering is a pure function of
/// this value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Frame size `(height, width)` of each sub-aperture view.
    pub frame: (usize, usize),
    /// Camera model; its `grid_u x grid_v` defines the viewpoint grid.
    pub intrinsics: CameraIntrinsics,
    /// Planes ordered near to far (strictly increasing depth).
    pub planes: Vec<PlaneSpec>,
    /// Fraction of groundtruth pixels knocked out (mask false, value 0) to
    /// mimic sensor dropouts; 0 disables.
    pub dropout_fraction: f64,
    /// Seed for the dropout pattern.
    pub dropout_seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let (h, w) = self.frame;
        if h < 4 || w < 4 {
            return Err(CoreError::Parameter(format!(
                "frame {h}x{w} too small, need at least 4x4"
            )));
        }
        if self.planes.is_empty() {
            return Err(CoreError::Parameter("scene needs at least one plane".into()));
        }
        for pair in self.planes.windows(2) {
            if !(pair[0].depth_m < pair[1].depth_m) {
                return Err(CoreError::Parameter(format!(
                    "plane depths must be strictly increasing near to far, got {} then {}",
                    pair[0].depth_m, pair[1].depth_m
                )));
            }
        }
        for (i, plane) in self.planes.iter().enumerate() {
            if !(plane.depth_m.is_finite() && plane.depth_m > 0.0) {
                return Err(CoreError::Parameter(format!(
                    "plane {i} depth {} must be positive and finite",
                    plane.depth_m
                )));
            }
            if !plane.region.fits(self.frame) {
                return Err(CoreError::Parameter(format!(
                    "plane {i} region {:?} does not fit the {h}x{w} frame",
                    plane.region
                )));
            }
            if let Texture::Image {
                height,
                width,
                channels,
                data,
            } = &plane.texture
            {
                if *channels != CHANNELS {
                    return Err(CoreError::Parameter(format!(
                        "plane {i} texture has {channels} channels, expected {CHANNELS}"
                    )));
                }
                if data.len() != height * width * channels {
                    return Err(CoreError::Parameter(format!(
                        "plane {i} texture data length {} != {height}*{width}*{channels}",
                        data.len()
                    )));
                }
            }
        }
        if !(0.0..1.0).contains(&self.dropout_fraction) {
            return Err(CoreError::Parameter(format!(
                "dropout fraction {} outside [0, 1)",
                self.dropout_fraction
            )));
        }
        Ok(())
    }

    /// Disparity of each plane under the scene intrinsics, near to far.
    pub fn plane_disparities(&self) -> Result<Vec<f64>> {
        self.planes
            .iter()
            .map(|p| disparity_from_depth(p.depth_m, &self.intrinsics))
            .collect()
    }

    /// Shift margin in pixels: the largest sub-aperture translation of any
    /// plane, rounded up, and at least 1. Image textures must cover the
    /// frame extended by this margin on every side; pixels within this
    /// distance of the frame border see circular-wrap content, so
    /// evaluation regions should be eroded by the margin.
    pub fn margin_px(&self) -> Result<usize> {
        let intr = &self.intrinsics;
        let max_off = intr
            .center_u
            .max(intr.grid_u as f64 - 1.0 - intr.center_u)
            .max(intr.center_v)
            .max(intr.grid_v as f64 - 1.0 - intr.center_v);
        let d_max = self.plane_disparities()?.first().copied().unwrap_or(0.0);
        Ok(((d_max * max_off).abs().ceil() as usize).max(1))
    }
}

/// Band-limited noise on an `h x w` canvas: white noise with all spectral
/// energy at or above `NOISE_CUTOFF` of Nyquist removed, normalized to
/// [0.15, 0.85]. The headroom keeps shifted values inside [0, 1] despite
/// interpolation overshoot.
fn band_limited_noise(h: usize, w: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Array2::from_shape_fn((h, w), |_| rng.random::<f64>());
    let mut fft = Fft2::new(h, w);
    let mut spectrum = fft.forward(noise.view());
    let cut_y = (NOISE_CUTOFF * h as f64 / 2.0).floor();
    let cut_x = (NOISE_CUTOFF * w as f64 / 2.0).floor();
    for ((ky, kx), v) in spectrum.indexed_iter_mut() {
        let fy = if ky <= h / 2 { ky as f64 } else { ky as f64 - h as f64 };
        let fx = if kx <= w / 2 { kx as f64 } else { kx as f64 - w as f64 };
        if fy.abs() >= cut_y || fx.abs() >= cut_x {
            *v = num_complex::Complex64::new(0.0, 0.0);
        }
    }
    let mut out = fft.inverse_real(spectrum);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in out.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = (hi - lo).max(1e-12);
    out.mapv_inplace(|v| 0.15 + 0.7 * (v - lo) / span);
    out
}

/// Per-channel frame-sized texture canvases for one plane.
fn plane_canvases(
    plane_idx: usize,
    texture: &Texture,
    frame: (usize, usize),
    margin: usize,
) -> Result<Vec<Array2<f64>>> {
    let (fh, fw) = frame;
    match texture {
        Texture::Noise { seed } => Ok((0..CHANNELS)
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(c as u64 + 1);
                band_limited_noise(fh, fw, rng.next_u64())
            })
            .collect()),
        Texture::Image {
            height,
            width,
            channels,
            data,
        } => {
            let (need_h, need_w) = (fh + 2 * margin, fw + 2 * margin);
            if *height < need_h || *width < need_w {
                return Err(CoreError::Domain(format!(
                    "plane {plane_idx} texture {height}x{width} is smaller than the frame plus \
                     its shift margin ({need_h}x{need_w}); supply a larger texture"
                )));
            }
            // Center-crop to the frame; the shift's circular wrap then only
            // replaces content within `margin` of the border, which the
            // supplied margin certifies is expendable.
            let y0 = (height - fh) / 2;
            let x0 = (width - fw) / 2;
            let mut out = vec![Array2::zeros((fh, fw)); CHANNELS];
            for y in 0..fh {
                for x in 0..fw {
                    for c in 0..*channels {
                        out[c][[y, x]] =
                            f64::from(data[((y0 + y) * width + (x0 + x)) * channels + c]);
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Renders the light field and its groundtruth disparity map for a scene.
///
/// Every sub-aperture composites the planes far to near through their fixed
/// frame-space region masks; pixels covered by no plane are masked invalid
/// in the groundtruth (a generated scene whose farthest plane covers the
/// frame has full coverage). Rendering is a pure function of the spec.
pub fn render_lightfield(spec: &SceneSpec) -> Result<(LightField, DisparityMap)> {
    spec.validate()?;
    let (h, w) = spec.frame;
    let intr = &spec.intrinsics;
    let (gu, gv) = (intr.grid_u, intr.grid_v);
    let margin = spec.margin_px()?;
    let disparities = spec.plane_disparities()?;

    // Spectra of every plane's frame-sized texture, computed once and
    // shifted per sub-aperture. Because views are shifted on the frame grid
    // itself — no padding, no crop — the refocusing shift inverts the
    // rendering shift bin-for-bin.
    let mut fft = Fft2::new(h, w);
    let mut spectra = Vec::with_capacity(spec.planes.len());
    for (i, plane) in spec.planes.iter().enumerate() {
        let channels = plane_canvases(i, &plane.texture, spec.frame, margin)?;
        let ch_spectra: Vec<_> = channels.iter().map(|c| fft.forward(c.view())).collect();
        spectra.push(ch_spectra);
    }

    let mut samples = Array5::zeros((gu, gv, h, w, CHANNELS));
    for u in 0..gu {
        for v in 0..gv {
            let off_x = intr.center_u - u as f64;
            let off_y = intr.center_v - v as f64;
            let mut view = Array3::<f64>::zeros((h, w, CHANNELS));
            // Far to near: nearer planes overwrite farther ones.
            for (pi, plane) in spec.planes.iter().enumerate().rev() {
                let d = disparities[pi];
                let (dx, dy) = (-d * off_x, -d * off_y);
                let mx = crate::refocus::axis_multiplier(w, dx);
                let my = crate::refocus::axis_multiplier(h, dy);
                for c in 0..CHANNELS {
                    let mut spec_c = spectra[pi][c].clone();
                    crate::refocus::apply_shift(&mut spec_c, &mx, &my);
                    let shifted = fft.inverse_real(spec_c);
                    for y in 0..h {
                        for x in 0..w {
                            if plane.region.contains(y, x) {
                                view[[y, x, c]] = shifted[[y, x]];
                            }
                        }
                    }
                }
            }
            for ((y, x, c), val) in view.indexed_iter() {
                samples[[u, v, y, x, c]] = val.clamp(0.0, 1.0) as f32;
            }
        }
    }

    // Groundtruth: same far-to-near painting in frame space.
    let mut values = Array2::<f32>::zeros((h, w));
    let mut mask = Array2::from_elem((h, w), false);
    for (pi, plane) in spec.planes.iter().enumerate().rev() {
        for y in 0..h {
            for x in 0..w {
                if plane.region.contains(y, x) {
                    values[[y, x]] = disparities[pi] as f32;
                    mask[[y, x]] = true;
                }
            }
        }
    }
    if spec.dropout_fraction > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.dropout_seed);
        for m in mask.iter_mut() {
            if rng.random::<f64>() < spec.dropout_fraction {
                *m = false;
            }
        }
    }

    let lf = LightField::new(intr.clone(), samples)?;
    let gt = DisparityMap::masked(values, mask)?;
    Ok((lf, gt))
}

/// Knobs for [`make_random_scene`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomSceneParams {
    /// Frame size `(height, width)`.
    pub frame: (usize, usize),
    /// Camera model (grid layout and disparity scale).
    pub intrinsics: CameraIntrinsics,
    /// Inclusive range for the number of planes.
    pub min_planes: usize,
    pub max_planes: usize,
    /// Metric depth range `(near, far)` the planes are drawn from.
    pub depth_range: (f64, f64),
    /// Groundtruth dropout fraction; 0 disables.
    pub dropout_fraction: f64,
}

impl Default for RandomSceneParams {
    fn default() -> Self {
        RandomSceneParams {
            frame: (96, 96),
            intrinsics: CameraIntrinsics::plenoptic_defaults(),
            min_planes: 2,
            max_planes: 4,
            depth_range: (0.5, 7.0),
            dropout_fraction: 0.0,
        }
    }
}

/// Fraction of the frame each plane must keep visible after occlusion.
const MIN_VISIBLE_FRACTION: f64 = 0.05;
/// Attempts before giving up on a non-degenerate layout.
const MAX_ATTEMPTS: usize = 128;

/// Draws a random scene: plane disparities are sampled uniformly over the
/// disparity interval implied by `depth_range` (so plane placement is
/// uniform in the quantity the pipeline estimates), with pairwise
/// separation of at least 1/12 of the interval. The farthest plane always
/// covers the full frame; nearer planes get random rectangles whose visible
/// part is at least 5% of the frame. Deterministic in `seed`.
pub fn make_random_scene(seed: u64, params: &RandomSceneParams) -> Result<SceneSpec> {
    params.intrinsics.validate()?;
    let (h, w) = params.frame;
    if h < 16 || w < 16 {
        return Err(CoreError::Parameter(format!(
            "frame {h}x{w} too small for random scenes, need at least 16x16"
        )));
    }
    if params.min_planes == 0 || params.min_planes > params.max_planes {
        return Err(CoreError::Parameter(format!(
            "bad plane-count range {}..={}",
            params.min_planes, params.max_planes
        )));
    }
    let (z_near, z_far) = params.depth_range;
    if !(z_near.is_finite() && z_far.is_finite() && 0.0 < z_near && z_near < z_far) {
        return Err(CoreError::Parameter(format!(
            "bad depth range [{z_near}, {z_far}]"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_planes = rng.random_range(params.min_planes..=params.max_planes);
    let d_hi = disparity_from_depth(z_near, &params.intrinsics)?;
    let d_lo = disparity_from_depth(z_far, &params.intrinsics)?;
    let min_sep = (d_hi - d_lo) / 12.0;

    // Disparities: uniform over [d_lo, d_hi] with minimum separation.
    let mut disparities: Vec<f64> = Vec::new();
    for attempt in 0.. {
        if attempt >= MAX_ATTEMPTS {
            return Err(CoreError::Generation {
                attempts: MAX_ATTEMPTS,
                reason: format!("could not place {n_planes} separated disparities"),
            });
        }
        disparities = (0..n_planes)
            .map(|_| rng.random_range(d_lo..=d_hi))
            .collect();
        disparities.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if disparities.windows(2).all(|p| p[0] - p[1] >= min_sep) {
            break;
        }
    }

    // Regions: random rectangles for all but the farthest plane; every
    // plane must keep >= 5% of the frame visible.
    let frame_area = (h * w) as f64;
    let mut regions: Vec<Region> = Vec::new();
    for attempt in 0.. {
        if attempt >= MAX_ATTEMPTS {
            return Err(CoreError::Generation {
                attempts: MAX_ATTEMPTS,
                reason: format!("could not lay out {n_planes} visible regions"),
            });
        }
        regions.clear();
        for pi in 0..n_planes {
            if pi + 1 == n_planes {
                regions.push(Region::FullFrame);
            } else {
                let rh = rng.random_range(h / 4..=(3 * h / 5).max(h / 4 + 1));
                let rw = rng.random_range(w / 4..=(3 * w / 5).max(w / 4 + 1));
                let y0 = rng.random_range(0..=h - rh);
                let x0 = rng.random_range(0..=w - rw);
                regions.push(Region::Rect {
                    y0,
                    x0,
                    height: rh,
                    width: rw,
                });
            }
        }
        // Visible area of plane i: its region minus all nearer regions.
        let mut ok = true;
        for pi in 0..n_planes {
            let mut visible = 0usize;
            for y in 0..h {
                for x in 0..w {
                    if regions[pi].contains(y, x)
                        && regions[..pi].iter().all(|r| !r.contains(y, x))
                    {
                        visible += 1;
                    }
                }
            }
            if (visible as f64) < MIN_VISIBLE_FRACTION * frame_area {
                ok = false;
                break;
            }
        }
        if ok {
            break;
        }
    }

    let planes = disparities
        .iter()
        .zip(regions)
        .map(|(&d, region)| {
            Ok(PlaneSpec {
                depth_m: crate::lightfield::depth_from_disparity(d, &params.intrinsics)?,
                region,
                texture: Texture::Noise {
                    seed: rng.next_u64(),
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let spec = SceneSpec {
        frame: params.frame,
        intrinsics: params.intrinsics.clone(),
        planes,
        dropout_fraction: params.dropout_fraction,
        dropout_seed: rng.next_u64(),
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(521.4, (48.0, 48.0), 27e-5, 3, 3, None).unwrap()
    }

    #[test]
    fn validate_rejects_bad_scenes() {
        let base = SceneSpec {
            frame: (32, 32),
            intrinsics: tiny_intrinsics(),
            planes: vec![PlaneSpec {
                depth_m: 1.0,
                region: Region::FullFrame,
                texture: Texture::Noise { seed: 1 },
            }],
            dropout_fraction: 0.0,
            dropout_seed: 0,
        };
        base.validate().unwrap();

        let mut no_planes = base.clone();
        no_planes.planes.clear();
        assert!(no_planes.validate().is_err());

        let mut bad_order = base.clone();
        bad_order.planes = vec![
            PlaneSpec {
                depth_m: 2.0,
                region: Region::FullFrame,
                texture: Texture::Noise { seed: 1 },
            },
            PlaneSpec {
                depth_m: 1.0,
                region: Region::FullFrame,
                texture: Texture::Noise { seed: 2 },
            },
        ];
        assert!(bad_order.validate().is_err());

        let mut bad_rect = base.clone();
        bad_rect.planes[0].region = Region::Rect {
            y0: 20,
            x0: 0,
            height: 20,
            width: 8,
        };
        assert!(bad_rect.validate().is_err());

        let mut bad_dropout = base;
        bad_dropout.dropout_fraction = 1.0;
        assert!(bad_dropout.validate().is_err());
    }

    #[test]
    fn undersized_texture_is_a_domain_error() {
        let spec = SceneSpec {
            frame: (32, 32),
            intrinsics: tiny_intrinsics(),
            planes: vec![PlaneSpec {
                depth_m: 1.0,
                region: Region::FullFrame,
                texture: Texture::Image {
                    height: 32,
                    width: 32,
                    channels: CHANNELS,
                    data: vec![0.5; 32 * 32 * CHANNELS],
                },
            }],
            dropout_fraction: 0.0,
            dropout_seed: 0,
        };
        // Frame is 32 but an image texture must supply 32 + 2 * margin.
        let err = render_lightfield(&spec).unwrap_err();
        assert!(matches!(err, CoreError::Domain(_)), "{err}");
    }

    #[test]
    fn noise_is_deterministic_and_in_range() {
        let a = band_limited_noise(24, 20, 99);
        let b = band_limited_noise(24, 20, 99);
        assert_eq!(a, b);
        for &v in a.iter() {
            assert!((0.15..=0.85).contains(&v));
        }
        let c = band_limited_noise(24, 20, 100);
        assert_ne!(a, c);
    }

    #[test]
    fn single_plane_scene_renders_with_full_coverage() {
        let spec = SceneSpec {
            frame: (24, 24),
            intrinsics: tiny_intrinsics(),
            planes: vec![PlaneSpec {
                depth_m: 1.0,
                region: Region::FullFrame,
                texture: Texture::Noise { seed: 5 },
            }],
            dropout_fraction: 0.0,
            dropout_seed: 0,
        };
        let (lf, gt) = render_lightfield(&spec).unwrap();
        assert_eq!(lf.dim(), (3, 3, 24, 24, CHANNELS));
        assert_eq!(gt.valid_count(), 24 * 24);
        let d = spec.plane_disparities().unwrap()[0];
        for &v in gt.values.iter() {
            assert!((f64::from(v) - d).abs() < 1e-6);
        }
    }

    #[test]
    fn dropout_invalidates_roughly_the_requested_fraction() {
        let mut params = RandomSceneParams {
            frame: (48, 48),
            intrinsics: tiny_intrinsics(),
            min_planes: 1,
            max_planes: 1,
            depth_range: (0.5, 7.0),
            dropout_fraction: 0.3,
        };
        params.intrinsics.principal_point = (24.0, 24.0);
        let spec = make_random_scene(11, &params).unwrap();
        let (_, gt) = render_lightfield(&spec).unwrap();
        let frac = 1.0 - gt.valid_count() as f64 / (48.0 * 48.0);
        assert!((frac - 0.3).abs() < 0.08, "dropout fraction {frac}");
    }

    #[test]
    fn random_scene_is_deterministic_in_seed() {
        let params = RandomSceneParams::default();
        let a = make_random_scene(7, &params).unwrap();
        let b = make_random_scene(7, &params).unwrap();
        assert_eq!(a, b);
        let c = make_random_scene(8, &params).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn random_scene_respects_plane_count_and_order() {
        let params = RandomSceneParams::default();
        for seed in 0..6 {
            let spec = make_random_scene(seed, &params).unwrap();
            assert!((2..=4).contains(&spec.planes.len()), "seed {seed}");
            assert!(spec
                .planes
                .windows(2)
                .all(|p| p[0].depth_m < p[1].depth_m));
            assert_eq!(spec.planes.last().unwrap().region, Region::FullFrame);
        }
    }
}

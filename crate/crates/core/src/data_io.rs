//! On-disk formats: PFM float maps, PNG images/depth, the dataset
//! container layout, and median fusion of repeated depth captures.
//!
//! Layout under a dataset root:
//!
//! ```text
//! <root>/manifest.json                      schema + directory of stacks
//! <root>/<scene>/stack_<NNNN>/slice_<SS>.png   8-bit RGB focal-stack slices
//! <root>/<scene>/stack_<NNNN>/disparity.pfm    32-bit float groundtruth
//! <root>/<scene>/stack_<NNNN>/depth.png        16-bit grayscale millimeters
//! <root>/<scene>/stack_<NNNN>/meta.json        per-stack metadata
//! ```
//!
//! Zero encodes "invalid" in stored disparity and depth, so a loaded mask
//! is simply `value > 0`. Disparity round trips are bit-exact (raw 32-bit
//! floats); images quantize to 8 bits and depth to whole millimeters.
//! Loading a dataset reads and checks the manifest only; pixel data is
//! decoded when a specific stack is requested.

use ndarray::{Array2, Array3, Array4, Array5};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{CoreError, Result};
use crate::lightfield::{CameraIntrinsics, DepthMap, DisparityMap, LightField};
use crate::refocus::FocalStack;
use crate::synthgen::CHANNELS;

/// Version tag every manifest carries; bumped on breaking layout changes.
pub const SCHEMA_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// PFM: 32-bit float maps
// ---------------------------------------------------------------------------

/// Writes a PFM (`Pf` grayscale variant, little-endian, bottom-up rows).
/// Values are stored bit-for-bit.
pub fn write_pfm(path: &Path, values: &Array2<f32>) -> Result<()> {
    let (h, w) = values.dim();
    let file = fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut out = BufWriter::new(file);
    write!(out, "Pf\n{w} {h}\n-1.0\n").map_err(|e| CoreError::io(path, e))?;
    for y in (0..h).rev() {
        for x in 0..w {
            out.write_all(&values[[y, x]].to_le_bytes())
                .map_err(|e| CoreError::io(path, e))?;
        }
    }
    out.flush().map_err(|e| CoreError::io(path, e))
}

/// Reads a grayscale PFM into row-major top-down storage. Both endianness
/// conventions (sign of the scale line) are accepted.
pub fn read_pfm(path: &Path) -> Result<Array2<f32>> {
    let file = fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();

    reader
        .read_line(&mut line)
        .map_err(|e| CoreError::io(path, e))?;
    match line.trim_end() {
        "Pf" => {}
        "PF" => return Err(CoreError::format(path, "color PFM (PF) is not supported")),
        other => {
            return Err(CoreError::format(
                path,
                format!("bad PFM magic {other:?}, expected \"Pf\""),
            ))
        }
    }

    line.clear();
    reader
        .read_line(&mut line)
        .map_err(|e| CoreError::io(path, e))?;
    let mut dims = line.split_whitespace();
    let w: usize = dims
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| CoreError::format(path, "missing or bad PFM width"))?;
    let h: usize = dims
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| CoreError::format(path, "missing or bad PFM height"))?;
    if w == 0 || h == 0 {
        return Err(CoreError::format(path, format!("empty PFM ({w}x{h})")));
    }

    line.clear();
    reader
        .read_line(&mut line)
        .map_err(|e| CoreError::io(path, e))?;
    let scale: f32 = line
        .trim()
        .parse()
        .map_err(|_| CoreError::format(path, format!("bad PFM scale line {line:?}")))?;
    let little_endian = scale < 0.0;

    let mut bytes = vec![0u8; h * w * 4];
    reader
        .read_exact(&mut bytes)
        .map_err(|e| CoreError::io(path, e))?;
    let mut values = Array2::zeros((h, w));
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little_endian {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        // PFM rows run bottom-up.
        let (row, col) = (h - 1 - i / w, i % w);
        values[[row, col]] = v;
    }
    Ok(values)
}

/// Saves groundtruth disparity; invalid pixels are already stored as 0 by
/// the map's constructor.
pub fn save_disparity(path: &Path, map: &DisparityMap) -> Result<()> {
    write_pfm(path, &map.values)
}

/// Loads disparity with the `value > 0` validity convention.
pub fn load_disparity(path: &Path) -> Result<DisparityMap> {
    let values = read_pfm(path)?;
    for v in values.iter() {
        if !v.is_finite() {
            return Err(CoreError::format(path, format!("non-finite disparity {v}")));
        }
    }
    let mask = values.mapv(|v| v > 0.0);
    DisparityMap::masked(values, mask)
}

// ---------------------------------------------------------------------------
// PNG: 8-bit images, 16-bit depth
// ---------------------------------------------------------------------------

/// Saves an `(h, w, 3)` image with values in [0, 1] as 8-bit RGB PNG.
pub fn save_image(path: &Path, image: ndarray::ArrayView3<'_, f32>) -> Result<()> {
    let (h, w, c) = image.dim();
    if c != CHANNELS {
        return Err(CoreError::Parameter(format!(
            "expected {CHANNELS} channels, got {c}"
        )));
    }
    let mut buf = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                buf.push((image[[y, x, ch]].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    let img: image::RgbImage = image::ImageBuffer::from_raw(w as u32, h as u32, buf)
        .expect("buffer sized from dimensions");
    img.save(path).map_err(|e| CoreError::format(path, e.to_string()))
}

/// Loads an 8-bit RGB PNG into `(h, w, 3)` values in [0, 1].
pub fn load_image(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path)
        .map_err(|e| CoreError::format(path, e.to_string()))?
        .into_rgb8();
    let (w, h) = img.dimensions();
    let mut out = Array3::zeros((h as usize, w as usize, CHANNELS));
    for (x, y, pixel) in img.enumerate_pixels() {
        for ch in 0..CHANNELS {
            out[[y as usize, x as usize, ch]] = f32::from(pixel.0[ch]) / 255.0;
        }
    }
    Ok(out)
}

/// Saves depth in meters as 16-bit grayscale PNG in whole millimeters
/// (clamped to the u16 range, ~65.5 m). Invalid pixels store 0.
pub fn save_depth(path: &Path, map: &DepthMap) -> Result<()> {
    let (h, w) = map.dim();
    let mut buf = Vec::with_capacity(h * w);
    for (v, &m) in map.values.iter().zip(map.mask.iter()) {
        let mm = if m {
            (f64::from(*v) * 1000.0).round().clamp(0.0, f64::from(u16::MAX)) as u16
        } else {
            0
        };
        buf.push(mm);
    }
    let img: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
        image::ImageBuffer::from_raw(w as u32, h as u32, buf).expect("buffer sized from dims");
    img.save(path).map_err(|e| CoreError::format(path, e.to_string()))
}

/// Loads 16-bit millimeter depth back to meters; 0 means invalid.
pub fn load_depth(path: &Path) -> Result<DepthMap> {
    let img = image::open(path)
        .map_err(|e| CoreError::format(path, e.to_string()))?
        .into_luma16();
    let (w, h) = img.dimensions();
    let mut values = Array2::zeros((h as usize, w as usize));
    let mut mask = Array2::from_elem((h as usize, w as usize), false);
    for (x, y, pixel) in img.enumerate_pixels() {
        let mm = pixel.0[0];
        if mm > 0 {
            values[[y as usize, x as usize]] = (f64::from(mm) / 1000.0) as f32;
            mask[[y as usize, x as usize]] = true;
        }
    }
    DepthMap::masked(values, mask)
}

// ---------------------------------------------------------------------------
// Dataset container
// ---------------------------------------------------------------------------

/// Groundtruth flavor and file of one stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GroundtruthFile {
    Disparity { file: String },
    Depth { file: String },
}

impl GroundtruthFile {
    fn file(&self) -> &str {
        match self {
            GroundtruthFile::Disparity { file } | GroundtruthFile::Depth { file } => file,
        }
    }
}

/// Per-stack metadata, stored as `meta.json` next to the pixel files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackMeta {
    pub focus_disparities: Vec<f64>,
    pub intrinsics: CameraIntrinsics,
    /// Slice file names within the stack directory, in slice order.
    pub slices: Vec<String>,
    pub groundtruth: GroundtruthFile,
}

/// One stack's manifest entry: its directory (relative to the root) plus
/// a copy of the metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackEntry {
    pub dir: String,
    pub meta: StackMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub name: String,
    pub stacks: Vec<StackEntry>,
}

/// Directory of everything in a dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub scenes: Vec<SceneEntry>,
}

/// Groundtruth of a stack, in whichever unit it was captured.
#[derive(Debug, Clone)]
pub enum Groundtruth {
    Disparity(DisparityMap),
    Depth(DepthMap),
}

/// A fully decoded stack.
#[derive(Debug, Clone)]
pub struct StackData {
    pub stack: FocalStack,
    pub groundtruth: Groundtruth,
}

/// In-memory scene ready to be written.
#[derive(Debug, Clone)]
pub struct SceneData {
    pub name: String,
    pub stacks: Vec<StackData>,
}

fn valid_scene_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Writes scenes under `root` and returns the manifest (also stored as
/// `manifest.json`). Slices become 8-bit PNG; disparity groundtruth stays
/// bit-exact in PFM; depth groundtruth quantizes to millimeters.
pub fn save_dataset(root: &Path, scenes: &[SceneData]) -> Result<DatasetManifest> {
    let mut seen = std::collections::HashSet::new();
    for scene in scenes {
        if !valid_scene_name(&scene.name) {
            return Err(CoreError::Parameter(format!(
                "scene name {:?} must be non-empty [A-Za-z0-9_-]",
                scene.name
            )));
        }
        if !seen.insert(&scene.name) {
            return Err(CoreError::Parameter(format!(
                "duplicate scene name {:?}",
                scene.name
            )));
        }
    }

    fs::create_dir_all(root).map_err(|e| CoreError::io(root, e))?;
    let mut manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        scenes: Vec::new(),
    };
    for scene in scenes {
        let mut entry = SceneEntry {
            name: scene.name.clone(),
            stacks: Vec::new(),
        };
        for (si, data) in scene.stacks.iter().enumerate() {
            let rel_dir = format!("{}/stack_{si:04}", scene.name);
            let dir = root.join(&rel_dir);
            fs::create_dir_all(&dir).map_err(|e| CoreError::io(&dir, e))?;

            let (s, _, _, _) = data.stack.dim();
            let mut slice_files = Vec::with_capacity(s);
            for i in 0..s {
                let name = format!("slice_{i:02}.png");
                save_image(&dir.join(&name), data.stack.slice_view(i))?;
                slice_files.push(name);
            }

            let groundtruth = match &data.groundtruth {
                Groundtruth::Disparity(map) => {
                    let name = "disparity.pfm".to_string();
                    save_disparity(&dir.join(&name), map)?;
                    GroundtruthFile::Disparity { file: name }
                }
                Groundtruth::Depth(map) => {
                    let name = "depth.png".to_string();
                    save_depth(&dir.join(&name), map)?;
                    GroundtruthFile::Depth { file: name }
                }
            };

            let meta = StackMeta {
                focus_disparities: data.stack.focus_disparities.clone(),
                intrinsics: data.stack.intrinsics.clone(),
                slices: slice_files,
                groundtruth,
            };
            let meta_path = dir.join("meta.json");
            let text = serde_json::to_string_pretty(&meta)
                .map_err(|e| CoreError::Manifest(e.to_string()))?;
            fs::write(&meta_path, text).map_err(|e| CoreError::io(&meta_path, e))?;

            entry.stacks.push(StackEntry { dir: rel_dir, meta });
        }
        manifest.scenes.push(entry);
    }

    let manifest_path = root.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CoreError::Manifest(e.to_string()))?;
    fs::write(&manifest_path, text).map_err(|e| CoreError::io(&manifest_path, e))?;
    Ok(manifest)
}

/// A loaded dataset: the checked manifest plus on-demand stack decoding.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    pub manifest: DatasetManifest,
}

/// Reads and validates `manifest.json`: schema version, slice/disparity
/// count agreement, descending focus disparities, and existence of every
/// referenced file. No pixel data is decoded.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let manifest_path = root.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| CoreError::io(&manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| CoreError::Manifest(format!("{}: {e}", manifest_path.display())))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(CoreError::Manifest(format!(
            "schema version {} in {}, this build reads {SCHEMA_VERSION}",
            manifest.schema_version,
            manifest_path.display()
        )));
    }
    for scene in &manifest.scenes {
        for stack in &scene.stacks {
            let dir = root.join(&stack.dir);
            let meta = &stack.meta;
            if meta.slices.len() != meta.focus_disparities.len() {
                return Err(CoreError::Manifest(format!(
                    "{}: {} slices but {} focus disparities",
                    stack.dir,
                    meta.slices.len(),
                    meta.focus_disparities.len()
                )));
            }
            if !meta.focus_disparities.windows(2).all(|p| p[0] > p[1]) {
                return Err(CoreError::Manifest(format!(
                    "{}: focus disparities must be strictly descending",
                    stack.dir
                )));
            }
            for file in meta.slices.iter().map(String::as_str).chain([
                meta.groundtruth.file(),
                "meta.json",
            ]) {
                let p = dir.join(file);
                if !p.is_file() {
                    return Err(CoreError::Manifest(format!(
                        "missing file {}",
                        p.display()
                    )));
                }
            }
        }
    }
    Ok(Dataset {
        root: root.to_path_buf(),
        manifest,
    })
}

impl Dataset {
    /// Scene names in manifest order.
    pub fn scene_names(&self) -> Vec<&str> {
        self.manifest.scenes.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn stack_count(&self, scene: &str) -> usize {
        self.manifest
            .scenes
            .iter()
            .find(|s| s.name == scene)
            .map_or(0, |s| s.stacks.len())
    }

    /// Total stacks across all scenes.
    pub fn total_stacks(&self) -> usize {
        self.manifest.scenes.iter().map(|s| s.stacks.len()).sum()
    }

    /// Decodes one stack (slices and groundtruth) now.
    pub fn load_stack(&self, scene: &str, index: usize) -> Result<StackData> {
        let entry = self
            .manifest
            .scenes
            .iter()
            .find(|s| s.name == scene)
            .ok_or_else(|| CoreError::Manifest(format!("no scene {scene:?} in manifest")))?
            .stacks
            .get(index)
            .ok_or_else(|| {
                CoreError::Manifest(format!("scene {scene:?} has no stack {index}"))
            })?;
        let dir = self.root.join(&entry.dir);
        let meta = &entry.meta;

        let mut slices: Option<Array4<f32>> = None;
        for (i, name) in meta.slices.iter().enumerate() {
            let img = load_image(&dir.join(name))?;
            let (h, w, c) = img.dim();
            let all = slices.get_or_insert_with(|| Array4::zeros((meta.slices.len(), h, w, c)));
            if all.dim().1 != h || all.dim().2 != w {
                return Err(CoreError::format(
                    &dir.join(name),
                    format!("slice is {h}x{w}, first slice was {}x{}", all.dim().1, all.dim().2),
                ));
            }
            all.index_axis_mut(ndarray::Axis(0), i).assign(&img);
        }
        let slices = slices.ok_or_else(|| {
            CoreError::Manifest(format!("{}: stack has no slices", entry.dir))
        })?;
        let stack = FocalStack::new(
            slices,
            meta.focus_disparities.clone(),
            meta.intrinsics.clone(),
        )?;

        let groundtruth = match &meta.groundtruth {
            GroundtruthFile::Disparity { file } => {
                Groundtruth::Disparity(load_disparity(&dir.join(file))?)
            }
            GroundtruthFile::Depth { file } => Groundtruth::Depth(load_depth(&dir.join(file))?),
        };
        Ok(StackData { stack, groundtruth })
    }
}

// ---------------------------------------------------------------------------
// Light-field directory
// ---------------------------------------------------------------------------

/// Sidecar metadata for a light field stored as a directory of view PNGs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightFieldMeta {
    pub intrinsics: CameraIntrinsics,
    pub height: usize,
    pub width: usize,
}

/// Writes every sub-aperture view as `view_<UU>_<VV>.png` plus `meta.json`.
/// Views quantize to 8 bits.
pub fn save_lightfield(dir: &Path, lf: &LightField) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let (gu, gv, h, w, _) = lf.dim();
    for u in 0..gu {
        for v in 0..gv {
            let path = dir.join(format!("view_{u:02}_{v:02}.png"));
            save_image(&path, lf.subaperture(u, v)?)?;
        }
    }
    let meta = LightFieldMeta {
        intrinsics: lf.intrinsics.clone(),
        height: h,
        width: w,
    };
    let path = dir.join("meta.json");
    let text =
        serde_json::to_string_pretty(&meta).map_err(|e| CoreError::Manifest(e.to_string()))?;
    fs::write(&path, text).map_err(|e| CoreError::io(&path, e))
}

/// Loads a light field saved by [`save_lightfield`].
pub fn load_lightfield(dir: &Path) -> Result<LightField> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| CoreError::io(&meta_path, e))?;
    let meta: LightFieldMeta = serde_json::from_str(&text)
        .map_err(|e| CoreError::Manifest(format!("{}: {e}", meta_path.display())))?;
    let (gu, gv) = (meta.intrinsics.grid_u, meta.intrinsics.grid_v);
    let mut samples = Array5::zeros((gu, gv, meta.height, meta.width, CHANNELS));
    for u in 0..gu {
        for v in 0..gv {
            let path = dir.join(format!("view_{u:02}_{v:02}.png"));
            let img = load_image(&path)?;
            if img.dim() != (meta.height, meta.width, CHANNELS) {
                return Err(CoreError::format(
                    &path,
                    format!(
                        "view is {:?}, meta says {}x{}",
                        img.dim(),
                        meta.height,
                        meta.width
                    ),
                ));
            }
            for ((y, x, c), &val) in img.indexed_iter() {
                samples[[u, v, y, x, c]] = val;
            }
        }
    }
    LightField::new(meta.intrinsics, samples)
}

/// Conventional location for an externally produced prediction:
/// `<root>/<scene>/stack_<NNNN>.pfm`.
pub fn prediction_path(root: &Path, scene: &str, index: usize) -> PathBuf {
    root.join(scene).join(format!("stack_{index:04}.pfm"))
}

// ---------------------------------------------------------------------------
// Median fusion
// ---------------------------------------------------------------------------

/// Fuses repeated depth captures of a static scene: per pixel, the median
/// of the *valid* samples (so missing values never drag the estimate), with
/// the mean of the two middles on even counts. A pixel is invalid only when
/// no frame saw it; the output mask is the union of the input masks.
pub fn median_fuse(frames: &[DepthMap]) -> Result<DepthMap> {
    let first = frames
        .first()
        .ok_or_else(|| CoreError::Parameter("median fusion needs at least one frame".into()))?;
    let (h, w) = first.dim();
    for (i, f) in frames.iter().enumerate() {
        if f.dim() != (h, w) {
            return Err(CoreError::Parameter(format!(
                "frame {i} is {:?}, first frame is {h}x{w}",
                f.dim()
            )));
        }
    }
    let mut values = Array2::zeros((h, w));
    let mut mask = Array2::from_elem((h, w), false);
    let mut samples = Vec::with_capacity(frames.len());
    for y in 0..h {
        for x in 0..w {
            samples.clear();
            for f in frames {
                if f.mask[[y, x]] {
                    samples.push(f.values[[y, x]]);
                }
            }
            if samples.is_empty() {
                continue;
            }
            samples.sort_by(|a, b| a.partial_cmp(b).expect("finite by construction"));
            let n = samples.len();
            let median = if n % 2 == 1 {
                samples[n / 2]
            } else {
                (samples[n / 2 - 1] + samples[n / 2]) / 2.0
            };
            values[[y, x]] = median;
            mask[[y, x]] = true;
        }
    }
    DepthMap::masked(values, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pfm_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pfm");
        let values = array![
            [0.0f32, 0.25, -1.5],
            [f32::MIN_POSITIVE, 1e30, -0.0],
        ];
        write_pfm(&path, &values).unwrap();
        let back = read_pfm(&path).unwrap();
        assert_eq!(back.dim(), (2, 3));
        for (a, b) in values.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn pfm_rejects_garbage_naming_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pfm");
        fs::write(&path, b"P6\nnot a pfm").unwrap();
        let err = read_pfm(&path).unwrap_err();
        assert!(err.to_string().contains("bad.pfm"), "{err}");
    }

    #[test]
    fn big_endian_pfm_loads_too() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("be.pfm");
        let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&1.5f32.to_be_bytes());
        bytes.extend_from_slice(&(-2.5f32).to_be_bytes());
        fs::write(&path, bytes).unwrap();
        let values = read_pfm(&path).unwrap();
        assert_eq!(values, array![[1.5f32, -2.5]]);
    }

    #[test]
    fn depth_png_round_trips_through_millimeters() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let map = DepthMap::masked(
            array![[1.234f32, 0.5], [7.0, 0.0]],
            array![[true, true], [true, false]],
        )
        .unwrap();
        save_depth(&path, &map).unwrap();
        let back = load_depth(&path).unwrap();
        assert_eq!(back.values[[0, 0]], 1.234f32);
        assert_eq!(back.values[[0, 1]], 0.5f32);
        assert_eq!(back.values[[1, 0]], 7.0f32);
        assert!(!back.mask[[1, 1]]);
        assert_eq!(back.values[[1, 1]], 0.0);
    }

    #[test]
    fn image_round_trip_stays_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.png");
        let img = Array3::from_shape_fn((5, 4, 3), |(y, x, c)| {
            ((y * 13 + x * 7 + c * 3) % 11) as f32 / 11.0
        });
        save_image(&path, img.view()).unwrap();
        let back = load_image(&path).unwrap();
        for (a, b) in img.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn median_fuse_hand_case_ignores_invalid_samples() {
        // Samples {0,0,0,0,2,2,2,3,9}: the four zeros are invalid, median
        // of {2,2,2,3,9} is 2.
        let frames: Vec<DepthMap> = [0.0f32, 0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 3.0, 9.0]
            .iter()
            .map(|&v| {
                DepthMap::masked(array![[v]], array![[v > 0.0]]).unwrap()
            })
            .collect();
        let fused = median_fuse(&frames).unwrap();
        assert_eq!(fused.values[[0, 0]], 2.0);
        assert!(fused.mask[[0, 0]]);
    }

    #[test]
    fn median_fuse_even_count_averages_the_middles() {
        let frames: Vec<DepthMap> = [1.0f32, 2.0, 3.0, 10.0]
            .iter()
            .map(|&v| DepthMap::dense(array![[v]]).unwrap())
            .collect();
        let fused = median_fuse(&frames).unwrap();
        assert_eq!(fused.values[[0, 0]], 2.5);
    }

    #[test]
    fn median_fuse_mask_is_the_union() {
        let a = DepthMap::masked(array![[1.0f32, 0.0]], array![[true, false]]).unwrap();
        let b = DepthMap::masked(array![[0.0f32, 2.0]], array![[false, true]]).unwrap();
        let fused = median_fuse(&[a, b]).unwrap();
        assert!(fused.mask[[0, 0]] && fused.mask[[0, 1]]);
        let none = DepthMap::masked(array![[0.0f32, 0.0]], array![[false, false]]).unwrap();
        let fused = median_fuse(&[none.clone(), none]).unwrap();
        assert_eq!(fused.valid_count(), 0);
    }

    #[test]
    fn median_fuse_is_permutation_invariant() {
        let vals = [3.0f32, 1.0, 4.0, 1.5, 9.0];
        let frames: Vec<DepthMap> = vals
            .iter()
            .map(|&v| DepthMap::dense(array![[v]]).unwrap())
            .collect();
        let mut reversed = frames.clone();
        reversed.reverse();
        assert_eq!(
            median_fuse(&frames).unwrap().values,
            median_fuse(&reversed).unwrap().values
        );
    }

    #[test]
    fn median_fuse_rejects_shape_mismatch() {
        let a = DepthMap::dense(array![[1.0f32]]).unwrap();
        let b = DepthMap::dense(array![[1.0f32, 2.0]]).unwrap();
        assert!(median_fuse(&[a, b]).is_err());
        assert!(median_fuse(&[]).is_err());
    }
}

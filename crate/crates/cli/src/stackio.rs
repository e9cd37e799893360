//! Standalone focal-stack directories: slice PNGs plus a `stack.json`
//! sidecar. This is the output format of `refocus` and an input format of
//! `predict` — a stack without groundtruth, unlike dataset stacks.

use std::path::{Path, PathBuf};

use anyhow::Context;
use ddff_core::data_io::{load_image, save_image};
use ddff_core::lightfield::CameraIntrinsics;
use ddff_core::refocus::FocalStack;
use ndarray::Array4;
use serde::{Deserialize, Serialize};

/// Sidecar metadata of a standalone stack.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StackSidecar {
    pub focus_disparities: Vec<f64>,
    pub intrinsics: CameraIntrinsics,
    /// Slice file names, in slice order.
    pub slices: Vec<String>,
}

/// Writes slice PNGs and `stack.json`; returns every file written.
pub fn save_stack_dir(dir: &Path, stack: &FocalStack) -> anyhow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    let mut names = Vec::new();
    for i in 0..stack.len() {
        let name = format!("slice_{i:02}.png");
        let path = dir.join(&name);
        save_image(&path, stack.slice_view(i))
            .with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
        names.push(name);
    }
    let sidecar = StackSidecar {
        focus_disparities: stack.focus_disparities.clone(),
        intrinsics: stack.intrinsics.clone(),
        slices: names,
    };
    let meta_path = dir.join("stack.json");
    let text = serde_json::to_string_pretty(&sidecar).context("serializing stack.json")?;
    std::fs::write(&meta_path, text)
        .with_context(|| format!("writing {}", meta_path.display()))?;
    written.push(meta_path);
    Ok(written)
}

/// Loads a stack directory written by [`save_stack_dir`].
pub fn load_stack_dir(dir: &Path) -> anyhow::Result<FocalStack> {
    let meta_path = dir.join("stack.json");
    let text = std::fs::read_to_string(&meta_path)
        .with_context(|| format!("reading {}", meta_path.display()))?;
    let sidecar: StackSidecar =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", meta_path.display()))?;
    anyhow::ensure!(!sidecar.slices.is_empty(), "stack.json lists no slices");
    let mut slices: Option<Array4<f32>> = None;
    for (i, name) in sidecar.slices.iter().enumerate() {
        let img = load_image(&dir.join(name))
            .with_context(|| format!("loading slice {}", dir.join(name).display()))?;
        let (h, w, c) = img.dim();
        let all = slices.get_or_insert_with(|| Array4::zeros((sidecar.slices.len(), h, w, c)));
        anyhow::ensure!(
            all.dim().1 == h && all.dim().2 == w && all.dim().3 == c,
            "slice {i} is {h}x{w}x{c}, first slice is {}x{}x{}",
            all.dim().1,
            all.dim().2,
            all.dim().3
        );
        all.index_axis_mut(ndarray::Axis(0), i).assign(&img);
    }
    let stack = FocalStack::new(
        slices.unwrap(),
        sidecar.focus_disparities,
        sidecar.intrinsics,
    )?;
    Ok(stack)
}

//! `plot`: turn recorded run manifests and dataset contents into figures —
//! loss curves for training runs, bad-pixel curves for evaluation runs,
//! per-scene disparity distributions, and per-slice focus-measure images.

use std::path::{Path, PathBuf};

use anyhow::Context;
use ddff_core::data_io::load_dataset;
use ddff_core::dff::sharpness_volume;

use crate::colormap::score_to_gray;
use crate::config::Config;
use crate::manifest::{read_manifests, RunManifest};
use crate::plotpng::{box_plot, line_plot, Series, BLACK, PALETTE};

use super::{groundtruth_disparity, Outcome, Timer};

pub fn run(cfg: &Config) -> anyhow::Result<Outcome> {
    let out_dir = cfg
        .plot
        .out
        .clone()
        .unwrap_or_else(|| cfg.runs_dir.join("plots"));
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;

    let timer = Timer::start();
    let mut outputs = Vec::new();

    let manifests = read_manifests(&cfg.runs_dir)?;
    if let Some(m) = select_manifest(&manifests, cfg.plot.run)? {
        if !m.epochs.is_empty() {
            outputs.extend(plot_loss_curve(&out_dir, m)?);
        }
        if !m.reports.is_empty() {
            outputs.extend(plot_badpix_curves(&out_dir, m)?);
        }
    } else {
        log::warn!(
            "no run with plottable history in {}; skipping run figures",
            cfg.runs_dir.display()
        );
    }
    let runs_s = timer.seconds();

    let timer = Timer::start();
    let root = cfg
        .plot
        .dataset
        .clone()
        .unwrap_or_else(|| cfg.dataset.clone());
    if root.join("manifest.json").is_file() {
        let ds = load_dataset(&root)?;
        outputs.extend(plot_disparity_spread(&out_dir, &ds)?);
        if let Some(scene) = &cfg.plot.scene {
            outputs.extend(plot_focus_scores(&out_dir, cfg, &ds, scene)?);
        }
    } else {
        log::warn!(
            "no dataset at {}; skipping dataset figures",
            root.display()
        );
    }
    let data_s = timer.seconds();

    anyhow::ensure!(
        !outputs.is_empty(),
        "nothing to plot: no usable run manifest and no dataset"
    );
    log::info!("plot: wrote {} file(s) to {}", outputs.len(), out_dir.display());
    Ok(Outcome {
        outputs,
        timings: vec![("runs".into(), runs_s), ("dataset".into(), data_s)],
        ..Outcome::default()
    })
}

/// Picks the requested run index, or the most recent manifest that has
/// something to draw.
fn select_manifest(
    manifests: &[RunManifest],
    requested: Option<usize>,
) -> anyhow::Result<Option<&RunManifest>> {
    match requested {
        Some(i) => {
            anyhow::ensure!(
                i < manifests.len(),
                "run index {i} out of range: the log has {} run(s)",
                manifests.len()
            );
            Ok(Some(&manifests[i]))
        }
        None => Ok(manifests
            .iter()
            .rev()
            .find(|m| !m.epochs.is_empty() || !m.reports.is_empty())),
    }
}

fn plot_loss_curve(out_dir: &Path, m: &RunManifest) -> anyhow::Result<Vec<PathBuf>> {
    let train: Vec<(f64, f64)> = m
        .epochs
        .iter()
        .map(|e| (e.epoch as f64, e.train_data_term))
        .collect();
    let mut series = vec![Series::new(train, PALETTE[0])];
    let val: Vec<(f64, f64)> = m
        .epochs
        .iter()
        .filter_map(|e| e.val_data_term.map(|v| (e.epoch as f64, v)))
        .collect();
    if !val.is_empty() {
        series.push(Series::new(val, PALETTE[1]));
    }
    let png = out_dir.join("loss_curve.png");
    line_plot(&png, &series)?;
    Ok(vec![png])
}

fn plot_badpix_curves(out_dir: &Path, m: &RunManifest) -> anyhow::Result<Vec<PathBuf>> {
    let mut series = Vec::new();
    let mut csv = String::from("series,tau,badpix_percent\n");
    for (k, r) in m.reports.iter().enumerate() {
        let pts: Vec<(f64, f64)> = r.report.badpix.iter().cloned().collect();
        for (tau, pct) in &pts {
            csv.push_str(&format!("{}_stack{:04},{tau},{pct}\n", r.scene, r.index));
        }
        series.push(Series::new(pts, PALETTE[k % PALETTE.len()]));
    }
    if let Some(agg) = &m.aggregate {
        let pts: Vec<(f64, f64)> = agg.badpix.iter().cloned().collect();
        for (tau, pct) in &pts {
            csv.push_str(&format!("aggregate,{tau},{pct}\n"));
        }
        series.push(Series::new(pts, BLACK));
    }
    let png = out_dir.join("badpix_curve.png");
    line_plot(&png, &series)?;
    let csv_path = out_dir.join("badpix_curve.csv");
    std::fs::write(&csv_path, csv)
        .with_context(|| format!("writing {}", csv_path.display()))?;
    Ok(vec![png, csv_path])
}

/// Five-number summary (min, lower quartile, median, upper quartile, max) of
/// the valid groundtruth disparities of each scene.
fn plot_disparity_spread(
    out_dir: &Path,
    ds: &ddff_core::data_io::Dataset,
) -> anyhow::Result<Vec<PathBuf>> {
    let mut summaries = Vec::new();
    let mut csv = String::from("scene,min,q1,median,q3,max\n");
    for scene in ds.scene_names() {
        let mut values: Vec<f64> = Vec::new();
        for idx in 0..ds.stack_count(scene) {
            let sd = ds.load_stack(scene, idx)?;
            let gt = groundtruth_disparity(&sd)?;
            values.extend(
                gt.values
                    .iter()
                    .zip(gt.mask.iter())
                    .filter(|(_, &m)| m)
                    .map(|(&v, _)| v as f64),
            );
        }
        if values.is_empty() {
            continue;
        }
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |p: f64| values[((values.len() - 1) as f64 * p).round() as usize];
        let five = [values[0], q(0.25), q(0.5), q(0.75), values[values.len() - 1]];
        csv.push_str(&format!(
            "{scene},{},{},{},{},{}\n",
            five[0], five[1], five[2], five[3], five[4]
        ));
        summaries.push(five);
    }
    anyhow::ensure!(!summaries.is_empty(), "dataset has no valid groundtruth pixels");
    let png = out_dir.join("disparity_spread.png");
    box_plot(&png, &summaries)?;
    let csv_path = out_dir.join("disparity_spread.csv");
    std::fs::write(&csv_path, csv)
        .with_context(|| format!("writing {}", csv_path.display()))?;
    Ok(vec![png, csv_path])
}

/// Per-slice focus-measure images for one stack, normalized by the volume
/// maximum so slice brightnesses are comparable.
fn plot_focus_scores(
    out_dir: &Path,
    cfg: &Config,
    ds: &ddff_core::data_io::Dataset,
    scene: &str,
) -> anyhow::Result<Vec<PathBuf>> {
    anyhow::ensure!(
        ds.scene_names().iter().any(|n| *n == scene),
        "scene `{scene}` is not in the dataset"
    );
    let sd = ds.load_stack(scene, cfg.plot.index)?;
    let volume = sharpness_volume(&sd.stack, cfg.plot.measure, cfg.plot.window)?;
    let max = volume.values.iter().cloned().fold(0.0_f64, f64::max);
    let dir = out_dir.join(format!("{scene}_stack{:04}_scores", cfg.plot.index));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let mut outputs = Vec::new();
    let mut csv = String::from("slice,focus_disparity,mean_score,max_score\n");
    for (i, d) in sd.stack.focus_disparities.iter().enumerate() {
        let plane = volume.values.index_axis(ndarray::Axis(0), i).to_owned();
        let mean = plane.mean().unwrap_or(0.0);
        let peak = plane.iter().cloned().fold(0.0_f64, f64::max);
        csv.push_str(&format!("{i},{d},{mean},{peak}\n"));
        let gray = score_to_gray(&plane, max);
        let png = dir.join(format!("score_{i:02}.png"));
        ddff_core::data_io::save_image(&png, gray.view())?;
        outputs.push(png);
    }
    let csv_path = dir.join("scores.csv");
    std::fs::write(&csv_path, csv)
        .with_context(|| format!("writing {}", csv_path.display()))?;
    outputs.push(csv_path);
    Ok(outputs)
}

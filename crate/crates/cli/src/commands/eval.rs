//! `eval`: score a predictor (trained checkpoint, classic depth-from-focus
//! baseline, or an external prediction directory) over a dataset, writing
//! per-stack reports, a pooled aggregate, and bad-pixel curve data.

use std::path::{Path, PathBuf};

use anyhow::Context;
use ddff_core::data_io::{load_dataset, prediction_path, read_pfm, StackData};
use ddff_core::dff::argmax_disparity;
use ddff_core::lightfield::DisparityMap;
use ddff_core::metrics::compute_metrics;
use ddff_net::checkpoint::load_checkpoint;
use ddff_net::network::DdffNet;
use ddff_net::train::predict_stack;

use crate::config::{Baseline, Config};
use crate::manifest::{dataset_hash, StackReport};

use super::{aggregate_reports, groundtruth_disparity, Outcome, Timer};

/// The three prediction sources behind one call signature.
enum Predictor {
    Checkpoint(Box<DdffNet>),
    Classic,
    External(PathBuf),
}

impl Predictor {
    fn predict(
        &mut self,
        cfg: &Config,
        sd: &StackData,
        scene: &str,
        index: usize,
    ) -> anyhow::Result<DisparityMap> {
        match self {
            Predictor::Checkpoint(net) => {
                let (s, ..) = sd.stack.dim();
                anyhow::ensure!(
                    s == net.spec().stack_size,
                    "{scene} stack {index} has {s} slices but the checkpoint expects {}",
                    net.spec().stack_size
                );
                Ok(predict_stack(net, &sd.stack)?)
            }
            Predictor::Classic => Ok(argmax_disparity(
                &sd.stack,
                cfg.eval.measure,
                cfg.eval.window,
            )?),
            Predictor::External(dir) => {
                let path = prediction_path(dir, scene, index);
                let values = read_pfm(&path)
                    .with_context(|| format!("reading prediction {}", path.display()))?;
                // External predictions are raw dense maps: zero or negative
                // values are legitimate predictions, not missing data.
                Ok(DisparityMap::dense(values)?)
            }
        }
    }

    fn describe(&self) -> String {
        match self {
            Predictor::Checkpoint(net) => format!(
                "checkpoint ({:?}, width {})",
                net.spec().variant,
                net.spec().width
            ),
            Predictor::Classic => "classic depth-from-focus baseline".to_string(),
            Predictor::External(dir) => format!("external predictions in {}", dir.display()),
        }
    }
}

/// Sorted, deduplicated union of the report thresholds and the curve grid.
fn threshold_list(cfg: &Config) -> Vec<f64> {
    let mut taus: Vec<f64> = cfg
        .eval
        .taus
        .iter()
        .chain(cfg.eval.curve.taus().iter())
        .cloned()
        .collect();
    taus.sort_by(|a, b| a.partial_cmp(b).unwrap());
    taus.dedup();
    taus
}

pub fn run(cfg: &Config) -> anyhow::Result<Outcome> {
    let root = cfg
        .eval
        .dataset
        .clone()
        .unwrap_or_else(|| cfg.dataset.clone());
    let out_dir = cfg
        .eval
        .out
        .clone()
        .unwrap_or_else(|| cfg.runs_dir.join("eval"));

    let timer = Timer::start();
    let ds = load_dataset(&root)
        .with_context(|| format!("loading dataset from {}", root.display()))?;
    let hash = dataset_hash(&root)?;
    let all_names: Vec<String> = ds.scene_names().iter().map(|s| s.to_string()).collect();
    let scene_names: Vec<String> = match &cfg.eval.scenes {
        Some(subset) => {
            for name in subset {
                anyhow::ensure!(
                    all_names.iter().any(|n| n == name),
                    "scene `{name}` is not in the dataset"
                );
            }
            subset.clone()
        }
        None => all_names,
    };
    let mut predictor = if let Some(path) = &cfg.eval.checkpoint {
        let (net, _) = load_checkpoint(path)?;
        Predictor::Checkpoint(Box::new(net))
    } else if let Some(dir) = &cfg.eval.predictions {
        Predictor::External(dir.clone())
    } else {
        debug_assert_eq!(cfg.eval.baseline, Some(Baseline::Classic));
        Predictor::Classic
    };
    let load_s = timer.seconds();

    let taus = threshold_list(cfg);
    let timer = Timer::start();
    let mut reports: Vec<StackReport> = Vec::new();
    for scene in &scene_names {
        for idx in 0..ds.stack_count(scene) {
            let sd = ds
                .load_stack(scene, idx)
                .with_context(|| format!("loading {scene} stack {idx}"))?;
            let gt = groundtruth_disparity(&sd)?;
            let pred = predictor.predict(cfg, &sd, scene, idx)?;
            let report = compute_metrics(&pred, &gt, &taus)
                .with_context(|| format!("scoring {scene} stack {idx}"))?;
            reports.push(StackReport {
                scene: scene.clone(),
                index: idx,
                report,
            });
        }
    }
    anyhow::ensure!(!reports.is_empty(), "dataset has no stacks to evaluate");
    let aggregate = aggregate_reports(&reports.iter().map(|r| &r.report).collect::<Vec<_>>())?;
    let score_s = timer.seconds();

    let timer = Timer::start();
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let mut outputs = Vec::new();
    for r in &reports {
        let path = out_dir.join(format!("{}_stack{:04}.txt", r.scene, r.index));
        std::fs::write(&path, r.report.to_flat_text())
            .with_context(|| format!("writing {}", path.display()))?;
        outputs.push(path);
    }
    let agg_path = out_dir.join("aggregate.txt");
    std::fs::write(&agg_path, aggregate.to_flat_text())
        .with_context(|| format!("writing {}", agg_path.display()))?;
    outputs.push(agg_path);

    let json_path = out_dir.join("reports.json");
    let payload = serde_json::json!({
        "source": predictor.describe(),
        "aggregate": aggregate,
        "stacks": reports,
    });
    std::fs::write(&json_path, serde_json::to_string_pretty(&payload)?)
        .with_context(|| format!("writing {}", json_path.display()))?;
    outputs.push(json_path);

    outputs.push(write_badpix_csv(&out_dir, &reports, &aggregate)?);
    let write_s = timer.seconds();

    log::info!(
        "eval: {} stack(s), {}: mse {:.6}, badpix(0.07) {:.2}%",
        reports.len(),
        predictor.describe(),
        aggregate.mse,
        aggregate.badpix_at(0.07).unwrap_or(f64::NAN)
    );
    Ok(Outcome {
        dataset_hash: Some(hash),
        outputs,
        reports,
        aggregate: Some(aggregate),
        timings: vec![
            ("load".into(), load_s),
            ("score".into(), score_s),
            ("write".into(), write_s),
        ],
        ..Outcome::default()
    })
}

/// `badpix_curve.csv`: one row per threshold, aggregate first, then one
/// column per stack.
fn write_badpix_csv(
    out_dir: &Path,
    reports: &[StackReport],
    aggregate: &ddff_core::metrics::MetricsReport,
) -> anyhow::Result<PathBuf> {
    let path = out_dir.join("badpix_curve.csv");
    let mut csv = String::from("tau,aggregate");
    for r in reports {
        csv.push_str(&format!(",{}_stack{:04}", r.scene, r.index));
    }
    csv.push('\n');
    for (i, (tau, agg_pct)) in aggregate.badpix.iter().enumerate() {
        csv.push_str(&format!("{tau},{agg_pct}"));
        for r in reports {
            csv.push_str(&format!(",{}", r.report.badpix[i].1));
        }
        csv.push('\n');
    }
    std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

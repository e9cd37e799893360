//! `train`: crop patches from a dataset, fit the network, write a
//! checkpoint plus loss-curve artifacts.

use anyhow::Context;
use ddff_core::data_io::load_dataset;
use ddff_net::checkpoint::save_checkpoint;
use ddff_net::network::build_network;
use ddff_net::patches::crop_patches;
use ddff_net::train::train;

use crate::config::Config;
use crate::manifest::dataset_hash;
use crate::plotpng::{line_plot, Series, PALETTE};

use super::{groundtruth_disparity, Outcome, Timer};

pub fn run(cfg: &Config) -> anyhow::Result<Outcome> {
    let root = cfg
        .train
        .dataset
        .clone()
        .unwrap_or_else(|| cfg.dataset.clone());
    let lib_cfg = cfg.train.to_train_config();
    lib_cfg.validate()?;

    let timer = Timer::start();
    let ds = load_dataset(&root)
        .with_context(|| format!("loading dataset from {}", root.display()))?;
    let hash = dataset_hash(&root)?;
    let all_names: Vec<String> = ds.scene_names().iter().map(|s| s.to_string()).collect();
    let scene_names: Vec<String> = match &cfg.train.scenes {
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

    let mut patches = Vec::new();
    let mut stack_index = 0usize;
    for scene in &scene_names {
        for idx in 0..ds.stack_count(scene) {
            let sd = ds
                .load_stack(scene, idx)
                .with_context(|| format!("loading {scene} stack {idx}"))?;
            let (s, ..) = sd.stack.dim();
            anyhow::ensure!(
                s == cfg.network.stack_size,
                "{scene} stack {idx} has {s} slices but network.stack_size is {}",
                cfg.network.stack_size
            );
            let gt = groundtruth_disparity(&sd)?;
            let set = crop_patches(&sd.stack, &gt, stack_index, &cfg.patches)
                .with_context(|| format!("cropping {scene} stack {idx}"))?;
            log::info!(
                "train: {scene} stack {idx}: kept {}/{} patch candidate(s)",
                set.patches.len(),
                set.candidate_count
            );
            patches.extend(set.patches);
            stack_index += 1;
        }
    }
    anyhow::ensure!(
        !patches.is_empty(),
        "no usable patches: check patches.size against the frame size \
         and patches.max_invalid_fraction against the groundtruth masks"
    );
    let prep_s = timer.seconds();

    let timer = Timer::start();
    let mut net = build_network(&cfg.network, lib_cfg.seed)?;
    let report = train(&mut net, &patches, &lib_cfg)?;
    let train_s = timer.seconds();

    let timer = Timer::start();
    let ckpt_path = cfg
        .train
        .out
        .clone()
        .unwrap_or_else(|| cfg.runs_dir.join("model.ckpt"));
    if let Some(parent) = ckpt_path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    let metadata = serde_json::json!({
        "train": lib_cfg,
        "network": cfg.network,
        "dataset_hash": hash,
        "patches": patches.len(),
        "best_epoch": report.best_epoch,
        "best_criterion": report.best_criterion,
        "stopped_early": report.stopped_early,
        "train_stacks": report.train_stacks,
        "val_stacks": report.val_stacks,
    });
    save_checkpoint(&ckpt_path, &net, &metadata)?;

    let csv_path = cfg.runs_dir.join("loss_curve.csv");
    let mut csv = String::from("epoch,learning_rate,train_mse,train_total,val_mse\n");
    for e in &report.history {
        let val = e
            .val_data_term
            .map(|v| v.to_string())
            .unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.learning_rate, e.train_data_term, e.train_total, val
        ));
    }
    std::fs::create_dir_all(&cfg.runs_dir)
        .with_context(|| format!("creating {}", cfg.runs_dir.display()))?;
    std::fs::write(&csv_path, csv)
        .with_context(|| format!("writing {}", csv_path.display()))?;

    let png_path = cfg.runs_dir.join("loss_curve.png");
    let mut series = vec![Series {
        points: report
            .history
            .iter()
            .map(|e| (e.epoch as f64, e.train_data_term))
            .collect(),
        color: PALETTE[0],
    }];
    if report.history.iter().any(|e| e.val_data_term.is_some()) {
        series.push(Series {
            points: report
                .history
                .iter()
                .filter_map(|e| e.val_data_term.map(|v| (e.epoch as f64, v)))
                .collect(),
            color: PALETTE[1],
        });
    }
    line_plot(&png_path, &series)?;
    let write_s = timer.seconds();

    log::info!(
        "train: {} epoch(s) on {} patch(es); best epoch {} ({:.6}); checkpoint {}",
        report.history.len(),
        patches.len(),
        report.best_epoch,
        report.best_criterion,
        ckpt_path.display()
    );
    Ok(Outcome {
        seed: Some(lib_cfg.seed),
        dataset_hash: Some(hash),
        outputs: vec![ckpt_path, csv_path, png_path],
        epochs: report.history,
        timings: vec![
            ("prepare".into(), prep_s),
            ("train".into(), train_s),
            ("write".into(), write_s),
        ],
        ..Outcome::default()
    })
}

//! `predict`: run a trained checkpoint on one focal stack and write the
//! disparity map as a PFM plus a color-mapped PNG preview.

use anyhow::Context;
use ddff_core::data_io::{load_dataset, prediction_path, write_pfm};
use ddff_net::checkpoint::load_checkpoint;
use ddff_net::train::predict_stack;

use crate::colormap::disparity_to_color;
use crate::config::Config;
use crate::manifest::dataset_hash;
use crate::stackio::load_stack_dir;

use super::{Outcome, Timer};

pub fn run(cfg: &Config) -> anyhow::Result<Outcome> {
    let ckpt_path = cfg
        .predict
        .checkpoint
        .as_ref()
        .expect("validated: predict requires a checkpoint");
    let out_dir = cfg
        .predict
        .out
        .clone()
        .unwrap_or_else(|| cfg.runs_dir.join("predict"));

    let timer = Timer::start();
    let (mut net, _) = load_checkpoint(ckpt_path)
        .with_context(|| format!("loading checkpoint {}", ckpt_path.display()))?;

    // The stack comes either from a standalone directory or from a dataset
    // scene; config validation guarantees exactly one source is configured.
    let (stack, pfm_path, png_path, hash) = if let Some(dir) = &cfg.predict.stack_dir {
        let stack = load_stack_dir(dir)?;
        (
            stack,
            out_dir.join("stack.pfm"),
            out_dir.join("stack.png"),
            None,
        )
    } else {
        let root = cfg
            .predict
            .dataset
            .clone()
            .unwrap_or_else(|| cfg.dataset.clone());
        let scene = cfg.predict.scene.as_ref().expect("validated: scene set");
        let ds = load_dataset(&root)
            .with_context(|| format!("loading dataset from {}", root.display()))?;
        let sd = ds
            .load_stack(scene, cfg.predict.index)
            .with_context(|| format!("loading {scene} stack {}", cfg.predict.index))?;
        let pfm = prediction_path(&out_dir, scene, cfg.predict.index);
        let png = pfm.with_extension("png");
        (sd.stack, pfm, png, Some(dataset_hash(&root)?))
    };
    let (s, ..) = stack.dim();
    anyhow::ensure!(
        s == net.spec().stack_size,
        "stack has {s} slices but the checkpoint expects {}",
        net.spec().stack_size
    );
    let load_s = timer.seconds();

    let timer = Timer::start();
    let map = predict_stack(&mut net, &stack)?;
    let infer_s = timer.seconds();

    let timer = Timer::start();
    if let Some(parent) = pfm_path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    write_pfm(&pfm_path, &map.values)?;
    let max_disparity = stack
        .focus_disparities
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let colored = disparity_to_color(&map, max_disparity);
    ddff_core::data_io::save_image(&png_path, colored.view())?;
    let write_s = timer.seconds();

    log::info!(
        "predict: wrote {} and {}",
        pfm_path.display(),
        png_path.display()
    );
    Ok(Outcome {
        dataset_hash: hash,
        outputs: vec![pfm_path, png_path],
        timings: vec![
            ("load".into(), load_s),
            ("infer".into(), infer_s),
            ("write".into(), write_s),
        ],
        ..Outcome::default()
    })
}

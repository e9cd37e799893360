//! `synth`: generate seeded synthetic scenes into a dataset root.

use anyhow::Context;
use ddff_core::data_io::{save_dataset, save_lightfield, Groundtruth, SceneData, StackData};
use ddff_core::lightfield::CameraIntrinsics;
use ddff_core::refocus::synthesize_stack;
use ddff_core::synthgen::{make_random_scene, render_lightfield, RandomSceneParams};

use crate::config::Config;
use crate::manifest::dataset_hash;

use super::{Outcome, Timer};

pub fn run(cfg: &Config) -> anyhow::Result<Outcome> {
    let seed = cfg.synth.seed.expect("seed presence is validated before dispatch");
    let root = cfg
        .synth
        .out
        .clone()
        .unwrap_or_else(|| cfg.dataset.clone());
    let s = &cfg.synth;
    let params = RandomSceneParams {
        frame: (s.frame[0], s.frame[1]),
        intrinsics: CameraIntrinsics::plenoptic_defaults(),
        min_planes: s.min_planes,
        max_planes: s.max_planes,
        depth_range: (s.depth_range[0], s.depth_range[1]),
        dropout_fraction: s.dropout_fraction,
    };

    let timer = Timer::start();
    let mut scenes = Vec::new();
    let mut specs = Vec::new();
    let mut lightfields = Vec::new();
    for i in 0..s.scenes {
        // Scene seeds are consecutive offsets of the master seed; the
        // underlying generator decorrelates nearby seeds.
        let scene_seed = seed.wrapping_add(i as u64);
        let spec = make_random_scene(scene_seed, &params)
            .with_context(|| format!("generating scene {i}"))?;
        let (lf, gt) = render_lightfield(&spec).with_context(|| format!("rendering scene {i}"))?;
        let stack = synthesize_stack(&lf, cfg.stack.slices, cfg.stack.d_near, cfg.stack.d_far)
            .with_context(|| format!("synthesizing the stack of scene {i}"))?;
        scenes.push(SceneData {
            name: format!("scene{i:03}"),
            stacks: vec![StackData {
                stack,
                groundtruth: Groundtruth::Disparity(gt),
            }],
        });
        specs.push(spec);
        if s.save_lightfields {
            lightfields.push(lf);
        }
    }
    let render_s = timer.seconds();

    let timer = Timer::start();
    save_dataset(&root, &scenes)
        .with_context(|| format!("writing dataset to {}", root.display()))?;
    for (i, spec) in specs.iter().enumerate() {
        let path = root.join(&scenes[i].name).join("scene.json");
        let text = serde_json::to_string_pretty(spec).context("serializing scene spec")?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    if s.save_lightfields {
        for (i, lf) in lightfields.iter().enumerate() {
            let dir = root.join(&scenes[i].name).join("lightfield");
            save_lightfield(&dir, lf)
                .with_context(|| format!("writing light field to {}", dir.display()))?;
        }
    }
    let write_s = timer.seconds();

    log::info!(
        "synth: {} scene(s) -> {} ({}x{} frames, {} slices)",
        s.scenes,
        root.display(),
        s.frame[0],
        s.frame[1],
        cfg.stack.slices
    );
    Ok(Outcome {
        seed: Some(seed),
        dataset_hash: Some(dataset_hash(&root)?),
        outputs: vec![root],
        timings: vec![("render".into(), render_s), ("write".into(), write_s)],
        ..Outcome::default()
    })
}

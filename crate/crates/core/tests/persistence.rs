//! Dataset container round trips: bit-exact disparities, manifest
//! validation that names missing files, and decode-on-demand stack access.

use ddff_core::data_io::{
    load_dataset, load_lightfield, save_dataset, save_lightfield, Groundtruth, SceneData,
    StackData, SCHEMA_VERSION,
};
use ddff_core::refocus::synthesize_stack;
use ddff_core::synthgen::{make_random_scene, render_lightfield, RandomSceneParams};
use std::fs;

fn small_params() -> RandomSceneParams {
    RandomSceneParams {
        frame: (32, 32),
        intrinsics: {
            let mut i = ddff_core::lightfield::CameraIntrinsics::plenoptic_defaults();
            i.principal_point = (16.0, 16.0);
            i
        },
        min_planes: 1,
        max_planes: 2,
        depth_range: (0.5, 7.0),
        dropout_fraction: 0.1,
    }
}

fn synthetic_scene(name: &str, seeds: std::ops::Range<u64>) -> SceneData {
    let params = small_params();
    let stacks = seeds
        .map(|seed| {
            let spec = make_random_scene(seed, &params).unwrap();
            let (lf, gt) = render_lightfield(&spec).unwrap();
            let stack = synthesize_stack(&lf, 4, 0.28, 0.02).unwrap();
            StackData {
                stack,
                groundtruth: Groundtruth::Disparity(gt),
            }
        })
        .collect();
    SceneData {
        name: name.to_string(),
        stacks,
    }
}

#[test]
fn save_load_round_trip_preserves_disparities_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = vec![synthetic_scene("alpha", 0..2), synthetic_scene("beta", 2..3)];
    let manifest = save_dataset(dir.path(), &scenes).unwrap();
    assert_eq!(manifest.schema_version, SCHEMA_VERSION);

    let ds = load_dataset(dir.path()).unwrap();
    assert_eq!(ds.scene_names(), vec!["alpha", "beta"]);
    assert_eq!(ds.stack_count("alpha"), 2);
    assert_eq!(ds.total_stacks(), 3);

    for (scene, count) in [("alpha", 2usize), ("beta", 1)] {
        for i in 0..count {
            let original = &scenes
                .iter()
                .find(|s| s.name == scene)
                .unwrap()
                .stacks[i];
            let loaded = ds.load_stack(scene, i).unwrap();

            let Groundtruth::Disparity(orig_gt) = &original.groundtruth else {
                panic!("synthetic groundtruth is disparity");
            };
            let Groundtruth::Disparity(gt) = &loaded.groundtruth else {
                panic!("loaded groundtruth kind changed");
            };
            for (a, b) in orig_gt.values.iter().zip(gt.values.iter()) {
                assert_eq!(a.to_bits(), b.to_bits(), "disparity bits changed");
            }
            assert_eq!(orig_gt.mask, gt.mask);

            assert_eq!(
                loaded.stack.focus_disparities,
                original.stack.focus_disparities
            );
            assert_eq!(loaded.stack.dim(), original.stack.dim());
            // Slices pass through 8-bit quantization.
            for (a, b) in original
                .stack
                .slices
                .iter()
                .zip(loaded.stack.slices.iter())
            {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
    }
}

#[test]
fn loading_checks_the_manifest_but_decodes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &[synthetic_scene("lazy", 0..2)]).unwrap();

    // Corrupt stack 1's first slice. The manifest check (existence only)
    // must still pass, and stack 0 must load cleanly — proof that loading
    // the dataset and stack 0 never decoded stack 1's pixels.
    let victim = dir.path().join("lazy/stack_0001/slice_00.png");
    fs::write(&victim, b"not a png").unwrap();

    let ds = load_dataset(dir.path()).unwrap();
    ds.load_stack("lazy", 0).unwrap();

    let err = ds.load_stack("lazy", 1).unwrap_err();
    assert!(
        err.to_string().contains("slice_00.png"),
        "error should name the corrupt file: {err}"
    );
}

#[test]
fn missing_files_fail_the_manifest_check_by_name() {
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &[synthetic_scene("gone", 0..1)]).unwrap();
    let victim = dir.path().join("gone/stack_0000/disparity.pfm");
    fs::remove_file(&victim).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(
        err.to_string().contains("disparity.pfm"),
        "error should name the missing file: {err}"
    );
}

#[test]
fn schema_version_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &[synthetic_scene("v", 0..1)]).unwrap();
    let manifest_path = dir.path().join("manifest.json");
    let text = fs::read_to_string(&manifest_path)
        .unwrap()
        .replace("\"schema_version\": 1", "\"schema_version\": 999");
    fs::write(&manifest_path, text).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("999"), "{err}");
}

#[test]
fn lightfield_directory_round_trips_within_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let spec = make_random_scene(5, &small_params()).unwrap();
    let (lf, _) = render_lightfield(&spec).unwrap();
    let lf_dir = dir.path().join("lf");
    save_lightfield(&lf_dir, &lf).unwrap();
    let back = load_lightfield(&lf_dir).unwrap();
    assert_eq!(back.dim(), lf.dim());
    for (a, b) in lf.samples().iter().zip(back.samples().iter()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
    }
}

//! Behaviour of the momentum-SGD training loop: loss descent, determinism,
//! the learning-rate schedule, early stopping, and divergence handling.

use ddff_net::error::NetError;
use ddff_net::network::{build_network, NetworkSpec, Variant};
use ddff_net::patches::Patch;
use ddff_net::train::{train, TrainConfig};
use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(stack_size: usize) -> NetworkSpec {
    NetworkSpec {
        variant: Variant::Cc3,
        stack_size,
        width: 1.0 / 16.0,
        input_channels: 3,
    dropout_p: 0.5,
    }
}

/// A fully valid patch whose target is a smooth disparity ramp.
fn make_patch(stack_index: usize, seed: u64) -> Patch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Patch {
        stack_index,
        origin: (0, 0),
        data: Array4::from_shape_fn((3, 32, 32, 3), |_| rng.random::<f32>()),
        target: Array2::from_shape_fn((32, 32), |(y, x)| {
            0.1 + 0.004 * y as f32 - 0.002 * x as f32
        }),
        mask: Array2::from_elem((32, 32), true),
    }
}

#[test]
fn fifty_epochs_on_one_patch_drive_the_loss_down() {
    let mut net = build_network(&spec(3), 1).unwrap();
    let patches = vec![make_patch(0, 10)];
    let cfg = TrainConfig {
        epochs: 50,
        batch_size: 1,
        validation_fraction: 0.0,
        seed: 1,
        ..TrainConfig::default()
    };
    let report = train(&mut net, &patches, &cfg).unwrap();
    assert_eq!(report.history.len(), 50);
    let losses: Vec<f64> = report.history.iter().map(|e| e.train_data_term).collect();
    // Epoch losses are measured with live dropout masks, so individual steps
    // are noisy; compare a head and tail window instead of adjacent epochs.
    let head: f64 = losses[..5].iter().sum::<f64>() / 5.0;
    let tail: f64 = losses[45..].iter().sum::<f64>() / 5.0;
    assert!(
        tail < 0.5 * head,
        "tail mean {tail} must be well below head mean {head}: {losses:?}"
    );
    assert!(
        losses[49] < losses[0],
        "loss must fall overall: first {} vs last {}",
        losses[0],
        losses[49]
    );
}

#[test]
fn identical_seeds_reproduce_identical_parameters() {
    let patches: Vec<Patch> = (0..2).flat_map(|s| [make_patch(s, 20 + s as u64)]).collect();
    let cfg = TrainConfig {
        epochs: 3,
        validation_fraction: 0.0,
        seed: 3,
        ..TrainConfig::default()
    };
    let run = |train_seed: u64| {
        let mut net = build_network(&spec(3), 7).unwrap();
        let cfg = TrainConfig {
            seed: train_seed,
            ..cfg.clone()
        };
        train(&mut net, &patches, &cfg).unwrap();
        net.named_tensors()
    };
    let a = run(3);
    let b = run(3);
    for ((name_a, _, data_a), (_, _, data_b)) in a.iter().zip(b.iter()) {
        let same = data_a
            .iter()
            .zip(data_b.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same, "tensor {name_a} must be bit-identical across reruns");
    }
    let c = run(4);
    assert!(
        a.iter().zip(c.iter()).any(|((_, _, da), (_, _, dc))| da != dc),
        "a different training seed must change the outcome"
    );
}

#[test]
fn learning_rate_schedule_is_recorded_in_the_history() {
    let mut net = build_network(&spec(3), 2).unwrap();
    let patches = vec![make_patch(0, 30)];
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 1,
        validation_fraction: 0.0,
        seed: 2,
        ..TrainConfig::default()
    };
    let report = train(&mut net, &patches, &cfg).unwrap();
    let lrs: Vec<f64> = report.history.iter().map(|e| e.learning_rate).collect();
    for lr in &lrs[0..4] {
        assert_eq!(*lr, 1e-3);
    }
    assert!((lrs[4] - 9e-4).abs() < 1e-12, "epoch 4 runs at the decayed rate");
}

#[test]
fn validation_stacks_are_held_out_and_scored() {
    let patches: Vec<Patch> = (0..5).map(|s| make_patch(s, 40 + s as u64)).collect();
    let mut net = build_network(&spec(3), 9).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        validation_fraction: 0.2,
        seed: 5,
        ..TrainConfig::default()
    };
    let report = train(&mut net, &patches, &cfg).unwrap();
    assert_eq!(report.val_stacks.len(), 1);
    assert_eq!(report.train_stacks.len(), 4);
    for entry in &report.history {
        assert!(entry.val_data_term.is_some(), "validation loss is tracked");
    }
    assert!(report.best_epoch < report.history.len());
}

#[test]
fn early_stopping_ends_the_run_once_the_loss_ratio_is_reached() {
    let mut net = build_network(&spec(3), 1).unwrap();
    let patches = vec![make_patch(0, 10)];
    let cfg = TrainConfig {
        epochs: 50,
        batch_size: 1,
        validation_fraction: 0.0,
        seed: 1,
        early_stop_ratio: Some(0.5),
        ..TrainConfig::default()
    };
    let report = train(&mut net, &patches, &cfg).unwrap();
    assert!(report.stopped_early, "the ratio must trigger before 50 epochs");
    assert!(report.history.len() < 50);
    let first = report.history.first().unwrap().train_data_term;
    let last = report.history.last().unwrap().train_data_term;
    assert!(last < 0.5 * first);
}

#[test]
fn exploding_updates_abort_with_a_divergence_error() {
    let mut net = build_network(&spec(3), 1).unwrap();
    let patches = vec![make_patch(0, 10)];
    let cfg = TrainConfig {
        epochs: 10,
        batch_size: 1,
        learning_rate: 1e6,
        validation_fraction: 0.0,
        seed: 1,
        ..TrainConfig::default()
    };
    let err = train(&mut net, &patches, &cfg).unwrap_err();
    assert!(matches!(err, NetError::Diverged { .. }), "{err}");
}

#[test]
fn stack_size_mismatches_are_rejected_up_front() {
    let mut net = build_network(&spec(4), 1).unwrap();
    let patches = vec![make_patch(0, 10)]; // carries 3 slices
    let err = train(&mut net, &patches, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, NetError::Shape(_)), "{err}");
}

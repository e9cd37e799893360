//! End-to-end gradient verification: backpropagated parameter gradients must
//! match finite differences of the full masked loss through the entire
//! network, dropout and batch normalization included.

use std::collections::HashMap;

use ddff_net::layers::Mode;
use ddff_net::loss::masked_l2_loss;
use ddff_net::network::{build_network, DdffNet, NetworkSpec, Variant};
use ndarray::{Array3, Array5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reseeding the dropout stream before every forward pass pins the masks, so
/// the loss becomes a deterministic function of the parameters and finite
/// differences are well defined.
const DROPOUT_SEED: u64 = 77;

fn spec() -> NetworkSpec {
    NetworkSpec {
        variant: Variant::Cc3,
        stack_size: 2,
        width: 1.0 / 16.0,
        input_channels: 3,
    dropout_p: 0.5,
    }
}

/// 96x96 inputs with a batch of two stacks keep the deepest stage at 3x3
/// spatial resolution with 36 values per batch-normalization channel. Smaller
/// fixtures leave near-zero channel variances at the deepest upsampling
/// layer, where 1/sqrt(var + eps) sits at the epsilon floor and its third
/// derivative (~eps^-5/2) makes central differences meaningless at any
/// usable step size.
fn fixtures() -> (Array5<f32>, Array3<f32>, Array3<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let input = Array5::from_shape_fn((2, 2, 96, 96, 3), |_| rng.random::<f32>());
    let target = Array3::from_shape_fn((2, 96, 96), |(_, y, x)| {
        0.1 + 0.002 * y as f32 - 0.001 * x as f32
    });
    let mask = Array3::from_shape_fn((2, 96, 96), |(_, y, x)| (y + x) % 5 != 0);
    (input, target, mask)
}

fn training_loss(
    net: &mut DdffNet,
    input: &Array5<f32>,
    target: &Array3<f32>,
    mask: &Array3<bool>,
) -> f64 {
    net.set_dropout_seed(DROPOUT_SEED);
    let pred = net.forward_mode(input, Mode::Train).unwrap();
    masked_l2_loss(&pred, target, mask).data_term
}

fn backprop_gradients(
    net: &mut DdffNet,
    input: &Array5<f32>,
    target: &Array3<f32>,
    mask: &Array3<bool>,
) -> HashMap<String, Vec<f32>> {
    net.zero_grad();
    net.set_dropout_seed(DROPOUT_SEED);
    let pred = net.forward_mode(input, Mode::Train).unwrap();
    let loss = masked_l2_loss(&pred, target, mask);
    net.backward(&loss.grad);
    net.named_gradients().into_iter().collect()
}

#[test]
fn directional_derivative_matches_finite_differences_through_the_whole_network() {
    let (input, target, mask) = fixtures();
    let mut net = build_network(&spec(), 5).unwrap();
    let grads = backprop_gradients(&mut net, &input, &target, &mask);
    let params = net.named_tensors();

    // Random +/-1 direction over every trainable parameter.
    let mut dir_rng = ChaCha8Rng::seed_from_u64(9);
    let mut direction: HashMap<String, Vec<f32>> = HashMap::new();
    let mut analytic = 0.0f64;
    for (name, _, data) in &params {
        let Some(g) = grads.get(name) else { continue };
        let d: Vec<f32> = (0..data.len())
            .map(|_| if dir_rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        analytic += g
            .iter()
            .zip(d.iter())
            .map(|(&g, &d)| g as f64 * d as f64)
            .sum::<f64>();
        direction.insert(name.clone(), d);
    }

    // Every parameter moves at once, so the step must keep the *total*
    // displacement small: h * sqrt(n_params) stays well under 1e-2.
    let h = 1e-5f32;
    let apply = |sign: f32, net: &mut DdffNet| {
        for (name, _, data) in &params {
            let Some(d) = direction.get(name) else { continue };
            let moved: Vec<f32> = data
                .iter()
                .zip(d.iter())
                .map(|(&v, &dv)| v + sign * h * dv)
                .collect();
            net.load_tensor(name, &moved).unwrap();
        }
    };
    apply(1.0, &mut net);
    let loss_plus = training_loss(&mut net, &input, &target, &mask);
    apply(-1.0, &mut net);
    let loss_minus = training_loss(&mut net, &input, &target, &mask);
    let fd = (loss_plus - loss_minus) / (2.0 * h as f64);

    let rel = (analytic - fd).abs() / fd.abs().max(1e-9);
    assert!(
        rel < 2e-2,
        "directional derivative mismatch: analytic {analytic:.6e}, finite difference {fd:.6e}, relative error {rel:.3e}"
    );
}

#[test]
fn per_parameter_gradients_match_finite_differences_on_high_signal_tensors() {
    let (input, target, mask) = fixtures();
    let mut net = build_network(&spec(), 5).unwrap();
    let grads = backprop_gradients(&mut net, &input, &target, &mask);
    let params: HashMap<String, Vec<f32>> = net
        .named_tensors()
        .into_iter()
        .map(|(n, _, d)| (n, d))
        .collect();

    // Tensors near the output carry enough gradient signal for single-entry
    // probes to rise above f32 forward noise.
    let h = 1e-3f32;
    for (name, index) in [("score.w", 0usize), ("score.w", 1), ("conv1_1d.b", 0)] {
        let base = &params[name];
        let mut plus = base.clone();
        plus[index] += h;
        net.load_tensor(name, &plus).unwrap();
        let loss_plus = training_loss(&mut net, &input, &target, &mask);
        let mut minus = base.clone();
        minus[index] -= h;
        net.load_tensor(name, &minus).unwrap();
        let loss_minus = training_loss(&mut net, &input, &target, &mask);
        net.load_tensor(name, base).unwrap();
        let fd = (loss_plus - loss_minus) / (2.0 * h as f64);
        let analytic = grads[name][index] as f64;
        let rel = (analytic - fd).abs() / fd.abs().max(1e-9);
        assert!(
            rel < 5e-2,
            "{name}[{index}]: analytic {analytic:.6e}, finite difference {fd:.6e}, relative error {rel:.3e}"
        );
    }
}

#[test]
fn gradients_accumulate_until_cleared() {
    let (input, target, mask) = fixtures();
    let mut net = build_network(&spec(), 5).unwrap();
    let once = backprop_gradients(&mut net, &input, &target, &mask);
    // Second backward without zero_grad doubles the accumulated gradient.
    net.set_dropout_seed(DROPOUT_SEED);
    let pred = net.forward_mode(&input, Mode::Train).unwrap();
    let loss = masked_l2_loss(&pred, &target, &mask);
    net.backward(&loss.grad);
    let twice: HashMap<String, Vec<f32>> = net.named_gradients().into_iter().collect();
    let g1 = &once["score.w"];
    let g2 = &twice["score.w"];
    for (a, b) in g1.iter().zip(g2.iter()) {
        assert!((2.0 * a - b).abs() <= 1e-5 * a.abs().max(1.0), "{a} vs {b}");
    }
}

//! Closed-form parameter counting: the model's inventory must equal the
//! number predicted by layer arithmetic over the documented channel table.

use ddff_net::network::{
    build_network, NetworkSpec, Variant, STAGE_BASE_CHANNELS, STAGE_CONV_COUNTS,
};

/// Independent re-derivation of the trainable parameter count from the
/// architecture table: 3x3 convolutions without bias followed by batch
/// normalization (scale and shift), 4x4 transposed convolutions with bias and
/// batch normalization for learned upsampling, a final biased 3x3 convolution
/// to one channel, and the stack fusion weights.
fn expected_parameters(spec: &NetworkSpec) -> usize {
    let c: Vec<usize> = STAGE_BASE_CHANNELS
        .iter()
        .map(|&base| ((spec.width * base as f64).round() as usize).max(1))
        .collect();
    let conv = |cin: usize, cout: usize| cin * cout * 9 + 2 * cout; // kernel + bn
    let mut total = 0usize;

    // Encoder.
    let mut prev = spec.input_channels;
    for stage in 0..5 {
        for i in 0..STAGE_CONV_COUNTS[stage] {
            let cin = if i == 0 { prev } else { c[stage] };
            total += conv(cin, c[stage]);
        }
        prev = c[stage];
    }

    // Upsampling path.
    if spec.variant.learned_upsampling() {
        for stage in 0..5 {
            // 4x4 kernel, bias, batch normalization.
            total += c[stage] * c[stage] * 16 + c[stage] + 2 * c[stage];
        }
    }

    // Decoder.
    let skips = spec.variant.skip_stages();
    for stage in (0..5).rev() {
        let n = STAGE_CONV_COUNTS[stage];
        for i in (0..n).rev() {
            let mut cin = c[stage];
            if i == n - 1 && stage < skips {
                cin *= 2;
            }
            if stage == 0 && i == 0 {
                // Final regression convolution: bias, no normalization.
                total += cin * 9 + 1;
            } else {
                let cout = if i == 0 { c[stage - 1] } else { c[stage] };
                total += conv(cin, cout);
            }
        }
    }

    // Stack fusion.
    total + spec.stack_size + 1
}

#[test]
fn model_inventory_matches_layer_arithmetic_for_every_variant() {
    for variant in [
        Variant::Unpool,
        Variant::Bilinear,
        Variant::Upconv,
        Variant::Cc1,
        Variant::Cc2,
        Variant::Cc3,
    ] {
        let spec = NetworkSpec {
            variant,
            stack_size: 10,
            width: 0.25,
            input_channels: 3,
        dropout_p: 0.5,
        };
        let net = build_network(&spec, 1).unwrap();
        assert_eq!(
            net.parameter_count(),
            expected_parameters(&spec),
            "variant {variant:?}"
        );
    }
}

#[test]
fn skip_concatenations_add_exactly_the_widened_first_kernels() {
    let base = NetworkSpec {
        variant: Variant::Upconv,
        stack_size: 10,
        width: 0.25,
        input_channels: 3,
    dropout_p: 0.5,
    };
    let cc3 = NetworkSpec {
        variant: Variant::Cc3,
        ..base.clone()
    };
    let n_base = build_network(&base, 2).unwrap().parameter_count();
    let n_cc3 = build_network(&cc3, 2).unwrap().parameter_count();
    // Doubling the input channels of conv1_2d, conv2_2d, and conv3_3d adds
    // one extra c*c*9 kernel block per merged stage (c = 16, 32, 64).
    let extra = 9 * (16 * 16 + 32 * 32 + 64 * 64);
    assert_eq!(n_cc3, n_base + extra);
}

#[test]
fn parameter_free_upsampling_variants_share_one_inventory() {
    let spec = |variant| NetworkSpec {
        variant,
        stack_size: 5,
        width: 0.25,
        input_channels: 3,
    dropout_p: 0.5,
    };
    let unpool = build_network(&spec(Variant::Unpool), 3).unwrap().parameter_count();
    let bilinear = build_network(&spec(Variant::Bilinear), 3).unwrap().parameter_count();
    assert_eq!(unpool, bilinear);
    let upconv = build_network(&spec(Variant::Upconv), 3).unwrap().parameter_count();
    // The five transposed convolutions carry kernel + bias + normalization.
    let c = [16usize, 32, 64, 128, 128];
    let up_params: usize = c.iter().map(|&c| c * c * 16 + 3 * c).sum();
    assert_eq!(upconv, unpool + up_params);
}

#[test]
fn narrowest_width_still_builds_with_single_channel_stages() {
    let spec = NetworkSpec {
        variant: Variant::Cc3,
        stack_size: 2,
        width: 1.0 / 64.0,
        input_channels: 3,
    dropout_p: 0.5,
    };
    let net = build_network(&spec, 4).unwrap();
    assert_eq!(net.parameter_count(), expected_parameters(&spec));
}

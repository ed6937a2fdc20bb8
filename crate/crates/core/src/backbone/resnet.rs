//! ResNet-18 feature trunk (torchvision parameter naming).

use ndarray::{Array4, ArrayView4};

use super::weights::{Init, ParamSpec, ParamStore};
use crate::features::Tap;
use crate::ops::{
    conv2d, conv3x3_transformed, max_pool2d_eval, relu_inplace, BatchNorm2d, ConvGeometry,
};

const STAGE_WIDTHS: [usize; 4] = [64, 128, 256, 512];
const BN_EPS: f32 = 1e-5;

fn push_bn(specs: &mut Vec<ParamSpec>, prefix: &str, c: usize) {
    specs.push(ParamSpec::new(format!("{prefix}.weight"), &[c], Init::Ones));
    specs.push(ParamSpec::new(format!("{prefix}.bias"), &[c], Init::Zeros));
    specs.push(ParamSpec::new(
        format!("{prefix}.running_mean"),
        &[c],
        Init::Zeros,
    ));
    specs.push(ParamSpec::new(
        format!("{prefix}.running_var"),
        &[c],
        Init::Ones,
    ));
}

/// Parameters of the convolutional trunk (the classifier head is not needed).
pub fn param_specs() -> Vec<ParamSpec> {
    let mut specs = vec![ParamSpec::new(
        "conv1.weight",
        &[64, 3, 7, 7],
        Init::HeFanIn,
    )];
    push_bn(&mut specs, "bn1", 64);
    let mut cin = 64;
    for (stage, &width) in STAGE_WIDTHS.iter().enumerate() {
        for block in 0..2 {
            let p = format!("layer{}.{block}", stage + 1);
            let block_in = if block == 0 { cin } else { width };
            specs.push(ParamSpec::new(
                format!("{p}.conv1.weight"),
                &[width, block_in, 3, 3],
                Init::HeFanIn,
            ));
            push_bn(&mut specs, &format!("{p}.bn1"), width);
            specs.push(ParamSpec::new(
                format!("{p}.conv2.weight"),
                &[width, width, 3, 3],
                Init::HeFanIn,
            ));
            push_bn(&mut specs, &format!("{p}.bn2"), width);
            if block == 0 && stage > 0 {
                specs.push(ParamSpec::new(
                    format!("{p}.downsample.0.weight"),
                    &[width, block_in, 1, 1],
                    Init::HeFanIn,
                ));
                push_bn(&mut specs, &format!("{p}.downsample.1"), width);
            }
        }
        cin = width;
    }
    specs
}

fn batch_norm(params: &ParamStore, prefix: &str, x: ArrayView4<f32>) -> Array4<f32> {
    let bn = BatchNorm2d {
        gamma: params.tensor1(&format!("{prefix}.weight")).to_owned(),
        beta: params.tensor1(&format!("{prefix}.bias")).to_owned(),
        running_mean: params.tensor1(&format!("{prefix}.running_mean")).to_owned(),
        running_var: params.tensor1(&format!("{prefix}.running_var")).to_owned(),
        eps: BN_EPS,
        momentum: 0.1,
    };
    bn.forward_eval(x)
}

fn conv_bn(
    params: &ParamStore,
    conv: &str,
    bn: &str,
    x: ArrayView4<f32>,
    g: ConvGeometry,
) -> Array4<f32> {
    let name = format!("{conv}.weight");
    let y = if g == ConvGeometry::new(3, 1, 1) {
        conv3x3_transformed(x, &params.winograd4(&name))
    } else {
        conv2d(x, params.tensor4(&name), None, g)
    };
    batch_norm(params, bn, y.view())
}

fn basic_block(params: &ParamStore, prefix: &str, x: Array4<f32>, stride: usize) -> Array4<f32> {
    let mut h = conv_bn(
        params,
        &format!("{prefix}.conv1"),
        &format!("{prefix}.bn1"),
        x.view(),
        ConvGeometry::new(3, stride, 1),
    );
    relu_inplace(&mut h);
    let mut h = conv_bn(
        params,
        &format!("{prefix}.conv2"),
        &format!("{prefix}.bn2"),
        h.view(),
        ConvGeometry::new(3, 1, 1),
    );
    let shortcut_name = format!("{prefix}.downsample.0");
    if params.get(&format!("{shortcut_name}.weight")).is_some() {
        h += &conv_bn(
            params,
            &shortcut_name,
            &format!("{prefix}.downsample.1"),
            x.view(),
            ConvGeometry::new(1, stride, 0),
        );
    } else {
        h += &x;
    }
    relu_inplace(&mut h);
    h
}

/// Runs the trunk up to the deepest requested tap, returning activations in
/// the order of `taps`.
pub fn forward(params: &ParamStore, x: ArrayView4<f32>, taps: &[Tap]) -> Vec<Array4<f32>> {
    let deepest = taps.iter().map(|t| t.depth()).max().unwrap_or(0);
    let mut found: Vec<(Tap, Array4<f32>)> = Vec::with_capacity(taps.len());
    let mut h = conv_bn(params, "conv1", "bn1", x, ConvGeometry::new(7, 2, 3));
    relu_inplace(&mut h);
    if taps.contains(&Tap::Stem) {
        found.push((Tap::Stem, h.clone()));
    }
    if deepest > 0 {
        h = max_pool2d_eval(h.view(), ConvGeometry::new(3, 2, 1));
        for stage in 1..=deepest {
            let stride = if stage == 1 { 1 } else { 2 };
            h = basic_block(params, &format!("layer{stage}.0"), h, stride);
            h = basic_block(params, &format!("layer{stage}.1"), h, 1);
            if taps.contains(&Tap::Block(stage)) {
                found.push((Tap::Block(stage), h.clone()));
            }
        }
    }
    taps.iter()
        .map(|t| {
            found
                .iter()
                .find(|(ft, _)| ft == t)
                .map(|(_, a)| a.clone())
                .expect("tap validated against architecture")
        })
        .collect()
}

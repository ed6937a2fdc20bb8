//! EfficientNet-b0 feature trunk (torchvision parameter naming).

use ndarray::{Array2, Array4, ArrayView4, Axis};

use super::weights::{Init, ParamSpec, ParamStore};
use crate::features::Tap;
use crate::ops::{
    conv2d, depthwise_conv2d, global_avg_pool, sigmoid, silu_inplace, BatchNorm2d, ConvGeometry,
};

const BN_EPS: f32 = 1e-5;
const STEM_WIDTH: usize = 32;
const HEAD_WIDTH: usize = 1280;

/// One MBConv stage: (expand ratio, kernel, first stride, input, output, repeats).
#[derive(Debug, Clone, Copy)]
struct StageConf {
    expand: usize,
    kernel: usize,
    stride: usize,
    input: usize,
    output: usize,
    layers: usize,
}

const STAGES: [StageConf; 7] = [
    StageConf {
        expand: 1,
        kernel: 3,
        stride: 1,
        input: 32,
        output: 16,
        layers: 1,
    },
    StageConf {
        expand: 6,
        kernel: 3,
        stride: 2,
        input: 16,
        output: 24,
        layers: 2,
    },
    StageConf {
        expand: 6,
        kernel: 5,
        stride: 2,
        input: 24,
        output: 40,
        layers: 2,
    },
    StageConf {
        expand: 6,
        kernel: 3,
        stride: 2,
        input: 40,
        output: 80,
        layers: 3,
    },
    StageConf {
        expand: 6,
        kernel: 5,
        stride: 1,
        input: 80,
        output: 112,
        layers: 3,
    },
    StageConf {
        expand: 6,
        kernel: 5,
        stride: 2,
        input: 112,
        output: 192,
        layers: 4,
    },
    StageConf {
        expand: 6,
        kernel: 3,
        stride: 1,
        input: 192,
        output: 320,
        layers: 1,
    },
];

/// Per-layer view of a stage after expanding its repeats.
struct Layer {
    prefix: String,
    input: usize,
    output: usize,
    expanded: usize,
    squeeze: usize,
    kernel: usize,
    stride: usize,
    has_expand: bool,
}

fn layers_of(stage_index: usize) -> impl Iterator<Item = Layer> {
    let conf = STAGES[stage_index];
    (0..conf.layers).map(move |j| {
        let input = if j == 0 { conf.input } else { conf.output };
        Layer {
            prefix: format!("features.{}.{j}.block", stage_index + 1),
            input,
            output: conf.output,
            expanded: input * conf.expand,
            squeeze: (input / 4).max(1),
            kernel: conf.kernel,
            stride: if j == 0 { conf.stride } else { 1 },
            has_expand: conf.expand != 1,
        }
    })
}

impl Layer {
    /// Module indices inside `block`: (expand?, depthwise, squeeze-excite, project).
    fn indices(&self) -> (Option<usize>, usize, usize, usize) {
        if self.has_expand {
            (Some(0), 1, 2, 3)
        } else {
            (None, 0, 1, 2)
        }
    }
}

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

/// Parameters of `features.*` (stem, seven MBConv stages and the 1x1 head).
pub fn param_specs() -> Vec<ParamSpec> {
    let mut specs = vec![ParamSpec::new(
        "features.0.0.weight",
        &[STEM_WIDTH, 3, 3, 3],
        Init::HeFanIn,
    )];
    push_bn(&mut specs, "features.0.1", STEM_WIDTH);
    for stage in 0..STAGES.len() {
        for l in layers_of(stage) {
            let (expand, dw, se, proj) = l.indices();
            let p = &l.prefix;
            if let Some(e) = expand {
                specs.push(ParamSpec::new(
                    format!("{p}.{e}.0.weight"),
                    &[l.expanded, l.input, 1, 1],
                    Init::HeFanIn,
                ));
                push_bn(&mut specs, &format!("{p}.{e}.1"), l.expanded);
            }
            specs.push(ParamSpec::new(
                format!("{p}.{dw}.0.weight"),
                &[l.expanded, 1, l.kernel, l.kernel],
                Init::HeFanIn,
            ));
            push_bn(&mut specs, &format!("{p}.{dw}.1"), l.expanded);
            specs.push(ParamSpec::new(
                format!("{p}.{se}.fc1.weight"),
                &[l.squeeze, l.expanded, 1, 1],
                Init::HeFanIn,
            ));
            specs.push(ParamSpec::new(
                format!("{p}.{se}.fc1.bias"),
                &[l.squeeze],
                Init::Zeros,
            ));
            specs.push(ParamSpec::new(
                format!("{p}.{se}.fc2.weight"),
                &[l.expanded, l.squeeze, 1, 1],
                Init::HeFanIn,
            ));
            specs.push(ParamSpec::new(
                format!("{p}.{se}.fc2.bias"),
                &[l.expanded],
                Init::Zeros,
            ));
            specs.push(ParamSpec::new(
                format!("{p}.{proj}.0.weight"),
                &[l.output, l.expanded, 1, 1],
                Init::HeFanIn,
            ));
            push_bn(&mut specs, &format!("{p}.{proj}.1"), l.output);
        }
    }
    specs.push(ParamSpec::new(
        "features.8.0.weight",
        &[HEAD_WIDTH, STAGES[6].output, 1, 1],
        Init::HeFanIn,
    ));
    push_bn(&mut specs, "features.8.1", HEAD_WIDTH);
    specs
}

fn batch_norm(params: &ParamStore, prefix: &str, x: &mut Array4<f32>) {
    let bn = BatchNorm2d {
        gamma: params.tensor1(&format!("{prefix}.weight")).to_owned(),
        beta: params.tensor1(&format!("{prefix}.bias")).to_owned(),
        running_mean: params.tensor1(&format!("{prefix}.running_mean")).to_owned(),
        running_var: params.tensor1(&format!("{prefix}.running_var")).to_owned(),
        eps: BN_EPS,
        momentum: 0.1,
    };
    *x = bn.forward_eval(x.view());
}

/// Squeeze-and-excitation: channel gates from globally pooled features.
fn squeeze_excite(params: &ParamStore, prefix: &str, x: &mut Array4<f32>) {
    let pooled = global_avg_pool(x.view());
    let dense = |input: &Array2<f32>, name: &str| -> Array2<f32> {
        let w = params.tensor4(&format!("{prefix}.{name}.weight"));
        let (o, i, _, _) = w.dim();
        let w2 = w.into_shape_with_order((o, i)).expect("1x1 weight");
        let mut out = input.dot(&w2.t());
        out += &params.tensor1(&format!("{prefix}.{name}.bias"));
        out
    };
    let hidden = dense(&pooled, "fc1").mapv(|v| v * sigmoid(v));
    let gates = dense(&hidden, "fc2").mapv(sigmoid);
    for (mut img, g) in x.axis_iter_mut(Axis(0)).zip(gates.axis_iter(Axis(0))) {
        for (mut plane, &gv) in img.axis_iter_mut(Axis(0)).zip(g.iter()) {
            plane.mapv_inplace(|v| v * gv);
        }
    }
}

fn mbconv(params: &ParamStore, l: &Layer, x: Array4<f32>) -> Array4<f32> {
    let (expand, dw, se, proj) = l.indices();
    let p = &l.prefix;
    let mut h = match expand {
        Some(e) => {
            let mut h = conv2d(
                x.view(),
                params.tensor4(&format!("{p}.{e}.0.weight")),
                None,
                ConvGeometry::new(1, 1, 0),
            );
            batch_norm(params, &format!("{p}.{e}.1"), &mut h);
            silu_inplace(&mut h);
            h
        }
        None => x.clone(),
    };
    h = depthwise_conv2d(
        h.view(),
        params.tensor4(&format!("{p}.{dw}.0.weight")),
        ConvGeometry::same(l.kernel, l.stride),
    );
    batch_norm(params, &format!("{p}.{dw}.1"), &mut h);
    silu_inplace(&mut h);
    squeeze_excite(params, &format!("{p}.{se}"), &mut h);
    let mut out = conv2d(
        h.view(),
        params.tensor4(&format!("{p}.{proj}.0.weight")),
        None,
        ConvGeometry::new(1, 1, 0),
    );
    batch_norm(params, &format!("{p}.{proj}.1"), &mut out);
    if l.stride == 1 && l.input == l.output {
        out += &x;
    }
    out
}

/// Runs the trunk up to the deepest requested tap, returning activations in
/// the order of `taps`. The stem output is exposed as [`Tap::Stem`].
pub fn forward(params: &ParamStore, x: ArrayView4<f32>, taps: &[Tap]) -> Vec<Array4<f32>> {
    let deepest = taps.iter().map(|t| t.depth()).max().unwrap_or(0) as usize;
    let mut found: Vec<(Tap, Array4<f32>)> = Vec::with_capacity(taps.len());
    let mut h = conv2d(
        x,
        params.tensor4("features.0.0.weight"),
        None,
        ConvGeometry::new(3, 2, 1),
    );
    batch_norm(params, "features.0.1", &mut h);
    silu_inplace(&mut h);
    if taps.contains(&Tap::Stem) {
        found.push((Tap::Stem, h.clone()));
    }
    for stage in 0..deepest.min(STAGES.len()) {
        for l in layers_of(stage) {
            h = mbconv(params, &l, h);
        }
        let tap = Tap::Stage(stage as u8 + 1);
        if taps.contains(&tap) {
            found.push((tap, h.clone()));
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trunk_parameter_count_matches_efficientnet_b0_without_classifier() {
        let n: usize = param_specs()
            .iter()
            .filter(|s| !s.name.contains("running"))
            .map(|s| s.shape.iter().product::<usize>())
            .sum();
        // 5,288,548 total minus the 1280*1000 + 1000 classifier.
        assert_eq!(n, 5_288_548 - 1_281_000);
    }
}

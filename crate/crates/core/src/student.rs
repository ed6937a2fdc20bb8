//! Trainable student networks.
//!
//! A student is a plain sequential stack of convolution, batch-norm, ReLU and
//! max-pool layers with tap markers where feature maps are emitted. Forward
//! passes in training mode record what the backward pass needs; gradients are
//! computed by hand, layer by layer, in reverse.

use std::fmt::Write as _;

use ndarray::{Array1, Array4, ArrayD, ArrayView4, ArrayViewD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::backbone::{Arch, LayerTapSpec, ParamStore, TapSpec, MAX_STRIDE};
use crate::error::{Error, Result};
use crate::features::{FeatureMap, Tap};
use crate::ops::{
    conv2d, conv2d_backward, max_pool2d, max_pool2d_backward, max_pool2d_eval, relu_backward,
    relu_inplace, BatchNorm2d, BnCache, ConvGeometry, MaxPoolCache, Real,
};

/// Native strides of EfficientNet-b0 stages 1..6.
const EFFNET_STAGE_STRIDES: [usize; 6] = [1, 2, 2, 2, 1, 2];
const EFFNET_STAGE_WIDTHS: [usize; 6] = [16, 24, 40, 80, 112, 192];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Resnet,
    Effnet,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Resnet => "resnet",
            Branch::Effnet => "effnet",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<F> {
    Conv {
        weight: Array4<F>,
        geom: ConvGeometry,
    },
    Norm(BatchNorm2d<F>),
    Relu,
    MaxPool(ConvGeometry),
    /// Emits the current activation as tap output `index`.
    Tap(usize),
}

impl<F: Real> Layer<F> {
    fn describe(&self) -> String {
        match self {
            Layer::Conv { weight, geom } => {
                let (o, i, k, _) = weight.dim();
                format!("conv{k}x{k}/s{} {i}->{o}", geom.stride)
            }
            Layer::Norm(bn) => format!("batchnorm {}", bn.channels()),
            Layer::Relu => "relu".into(),
            Layer::MaxPool(g) => format!("maxpool{}x{}/s{}", g.kernel, g.kernel, g.stride),
            Layer::Tap(i) => format!("tap #{i}"),
        }
    }

    fn trainable_count(&self) -> usize {
        match self {
            Layer::Conv { weight, .. } => weight.len(),
            Layer::Norm(bn) => 2 * bn.channels(),
            _ => 0,
        }
    }

    fn output_shape(&self, (c, h, w): (usize, usize, usize)) -> (usize, usize, usize) {
        match self {
            Layer::Conv { weight, geom } => (weight.dim().0, geom.out_dim(h), geom.out_dim(w)),
            Layer::MaxPool(g) => (c, g.out_dim(h), g.out_dim(w)),
            _ => (c, h, w),
        }
    }
}

/// Incremental construction of a layer stack with seeded initialization.
///
/// Convolutions draw from a normal distribution scaled by fan-out,
/// `std = sqrt(2 / (out_channels * k * k))`; norms start at unit scale and zero shift.
pub struct StudentBuilder<F> {
    layers: Vec<Layer<F>>,
    channels: usize,
    taps: usize,
    rng: ChaCha8Rng,
}

impl<F: Real> StudentBuilder<F> {
    pub fn new(in_channels: usize, seed: u64) -> Self {
        Self {
            layers: Vec::new(),
            channels: in_channels,
            taps: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn conv(mut self, out: usize, geom: ConvGeometry) -> Self {
        let k = geom.kernel;
        let std = (2.0 / (out * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let rng = &mut self.rng;
        let weight =
            Array4::from_shape_simple_fn((out, self.channels, k, k), || F::lit(normal.sample(rng)));
        self.layers.push(Layer::Conv { weight, geom });
        self.channels = out;
        self
    }

    pub fn norm(mut self) -> Self {
        self.layers
            .push(Layer::Norm(BatchNorm2d::identity(self.channels)));
        self
    }

    pub fn relu(mut self) -> Self {
        self.layers.push(Layer::Relu);
        self
    }

    /// Convolution + normalization + ReLU.
    pub fn conv_block(self, out: usize, geom: ConvGeometry) -> Self {
        self.conv(out, geom).norm().relu()
    }

    pub fn max_pool(mut self, geom: ConvGeometry) -> Self {
        self.layers.push(Layer::MaxPool(geom));
        self
    }

    pub fn tap(mut self) -> Self {
        self.layers.push(Layer::Tap(self.taps));
        self.taps += 1;
        self
    }

    pub fn tap_if(self, cond: bool) -> Self {
        if cond {
            self.tap()
        } else {
            self
        }
    }

    pub fn finish(self, branch: Branch, taps: Vec<TapSpec>) -> StudentNet<F> {
        assert_eq!(self.taps, taps.len(), "one tap marker per tap spec");
        StudentNet {
            branch,
            taps,
            layers: self.layers,
        }
    }
}

/// A trainable student mirroring a teacher's tap points.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentNet<F = f32> {
    branch: Branch,
    /// Channels and spatial side (for a 256 input) of each student tap output.
    taps: Vec<TapSpec>,
    layers: Vec<Layer<F>>,
}

/// What a training-mode forward pass saved for the backward pass.
pub struct Trace<F> {
    caches: Vec<Cache<F>>,
}

enum Cache<F> {
    Conv(Array4<F>),
    Norm(BnCache<F>),
    Relu(Array4<F>),
    MaxPool(MaxPoolCache),
    Tap,
}

/// Parameter gradients aligned with the layer stack.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    per_layer: Vec<LayerGrad<F>>,
}

#[derive(Debug, Clone)]
enum LayerGrad<F> {
    None,
    Conv(Array4<F>),
    Norm { gamma: Array1<F>, beta: Array1<F> },
}

impl<F: Real> Gradients<F> {
    /// Gradient slices in the same order as [`StudentNet::trainable_slices_mut`].
    pub fn slices(&self) -> Vec<&[F]> {
        let mut out = Vec::new();
        for g in &self.per_layer {
            match g {
                LayerGrad::None => {}
                LayerGrad::Conv(w) => out.push(w.as_slice().expect("standard")),
                LayerGrad::Norm { gamma, beta } => {
                    out.push(gamma.as_slice().expect("standard"));
                    out.push(beta.as_slice().expect("standard"));
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

impl<F: Real> StudentNet<F> {
    pub fn branch(&self) -> Branch {
        self.branch
    }

    pub fn taps(&self) -> &[TapSpec] {
        &self.taps
    }

    pub fn layers(&self) -> &[Layer<F>] {
        &self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::trainable_count).sum()
    }

    fn check_input(&self, x: &ArrayView4<F>) -> Result<()> {
        let (n, c, h, w) = x.dim();
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        let expected_c = match self.layers.first() {
            Some(Layer::Conv { weight, .. }) => weight.dim().1,
            _ => c,
        };
        if c != expected_c || h != w || h % MAX_STRIDE != 0 {
            return Err(Error::ShapeContractViolation {
                tap: "input".into(),
                expected: vec![n, expected_c, h - h % MAX_STRIDE, h - h % MAX_STRIDE],
                actual: vec![n, c, h, w],
            });
        }
        Ok(())
    }

    fn wrap_taps(&self, outputs: Vec<Array4<F>>, side: usize) -> Result<Vec<FeatureMap<F>>> {
        self.taps
            .iter()
            .zip(outputs)
            .map(|(ts, data)| {
                let s = ts.spatial_for(side);
                let expected = [data.dim().0, ts.channels, s, s];
                if data.shape() != expected {
                    return Err(Error::ShapeContractViolation {
                        tap: ts.tap.to_string(),
                        expected: expected.to_vec(),
                        actual: data.shape().to_vec(),
                    });
                }
                Ok(FeatureMap::new(ts.tap, ts.stride(), data))
            })
            .collect()
    }

    /// Evaluation-mode forward (normalization uses running statistics).
    pub fn forward(&self, x: ArrayView4<F>) -> Result<Vec<FeatureMap<F>>> {
        self.check_input(&x)?;
        let side = x.dim().2;
        let mut outputs = Vec::with_capacity(self.taps.len());
        let mut h = x.as_standard_layout().into_owned();
        for layer in &self.layers {
            h = match layer {
                Layer::Conv { weight, geom } => conv2d(h.view(), weight.view(), None, *geom),
                Layer::Norm(bn) => bn.forward_eval(h.view()),
                Layer::Relu => {
                    relu_inplace(&mut h);
                    h
                }
                Layer::MaxPool(g) => max_pool2d_eval(h.view(), *g),
                Layer::Tap(_) => {
                    outputs.push(h.clone());
                    h
                }
            };
        }
        self.wrap_taps(outputs, side)
    }

    /// Training-mode forward: batch statistics in normalization layers, and
    /// the running statistics are updated when `update_running` is set.
    pub fn forward_train(
        &mut self,
        x: ArrayView4<F>,
        update_running: bool,
    ) -> Result<(Vec<FeatureMap<F>>, Trace<F>)> {
        self.check_input(&x)?;
        let side = x.dim().2;
        let mut outputs = Vec::with_capacity(self.taps.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.as_standard_layout().into_owned();
        for layer in &mut self.layers {
            h = match layer {
                Layer::Conv { weight, geom } => {
                    let y = conv2d(h.view(), weight.view(), None, *geom);
                    caches.push(Cache::Conv(h));
                    y
                }
                Layer::Norm(bn) => {
                    let (y, cache) = bn.forward_train(h.view(), update_running);
                    caches.push(Cache::Norm(cache));
                    y
                }
                Layer::Relu => {
                    relu_inplace(&mut h);
                    caches.push(Cache::Relu(h.clone()));
                    h
                }
                Layer::MaxPool(g) => {
                    let (y, cache) = max_pool2d(h.view(), *g);
                    caches.push(Cache::MaxPool(cache));
                    y
                }
                Layer::Tap(_) => {
                    outputs.push(h.clone());
                    caches.push(Cache::Tap);
                    h
                }
            };
        }
        Ok((self.wrap_taps(outputs, side)?, Trace { caches }))
    }

    /// Backpropagates loss gradients with respect to each tap output.
    pub fn backward(&self, trace: Trace<F>, tap_grads: &[Array4<F>]) -> Gradients<F> {
        assert_eq!(tap_grads.len(), self.taps.len(), "one gradient per tap");
        let mut per_layer: Vec<LayerGrad<F>> = Vec::with_capacity(self.layers.len());
        let mut grad: Option<Array4<F>> = None;
        for (idx, (layer, cache)) in self.layers.iter().zip(trace.caches).enumerate().rev() {
            let (next, pgrad) = match (layer, cache, grad.take()) {
                (Layer::Tap(i), Cache::Tap, g) => {
                    let mut g = g.unwrap_or_else(|| Array4::zeros(tap_grads[*i].dim()));
                    g += &tap_grads[*i];
                    (Some(g), LayerGrad::None)
                }
                (Layer::Conv { weight, .. }, _, None) => {
                    (None, LayerGrad::Conv(Array4::zeros(weight.dim())))
                }
                (Layer::Norm(bn), _, None) => {
                    let z = Array1::zeros(bn.channels());
                    (
                        None,
                        LayerGrad::Norm {
                            gamma: z.clone(),
                            beta: z,
                        },
                    )
                }
                (_, _, None) => (None, LayerGrad::None),
                (Layer::Conv { weight, geom }, Cache::Conv(input), Some(g)) => {
                    let grads =
                        conv2d_backward(input.view(), weight.view(), g.view(), *geom, idx > 0);
                    (grads.dx, LayerGrad::Conv(grads.dw))
                }
                (Layer::Norm(bn), Cache::Norm(cache), Some(g)) => {
                    let grads = bn.backward(&cache, g.view());
                    (
                        Some(grads.dx),
                        LayerGrad::Norm {
                            gamma: grads.dgamma,
                            beta: grads.dbeta,
                        },
                    )
                }
                (Layer::Relu, Cache::Relu(out), Some(g)) => {
                    (Some(relu_backward(out.view(), g.view())), LayerGrad::None)
                }
                (Layer::MaxPool(_), Cache::MaxPool(cache), Some(g)) => {
                    (Some(max_pool2d_backward(&cache, g.view())), LayerGrad::None)
                }
                _ => unreachable!("trace does not match layer stack"),
            };
            grad = next;
            per_layer.push(pgrad);
        }
        per_layer.reverse();
        Gradients { per_layer }
    }

    /// Trainable parameter slices (conv weights, norm scale and shift) in layer order.
    pub fn trainable_slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv { weight, .. } => out.push(weight.as_slice_mut().expect("standard")),
                Layer::Norm(bn) => {
                    out.push(bn.gamma.as_slice_mut().expect("standard"));
                    out.push(bn.beta.as_slice_mut().expect("standard"));
                }
                _ => {}
            }
        }
        out
    }

    /// Plain stochastic gradient descent: `p -= lr * g`.
    pub fn sgd_step(&mut self, grads: &Gradients<F>, lr: F) {
        let gs = grads.slices();
        let ps = self.trainable_slices_mut();
        assert_eq!(gs.len(), ps.len());
        for (p, g) in ps.into_iter().zip(gs) {
            for (pv, gv) in p.iter_mut().zip(g) {
                *pv -= lr * *gv;
            }
        }
    }

    /// All tensors including normalization running statistics, keyed by layer index.
    pub fn named_tensors(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv { weight, .. } => {
                    out.push((format!("{i}.weight"), weight.view().into_dyn()))
                }
                Layer::Norm(bn) => {
                    out.push((format!("{i}.gamma"), bn.gamma.view().into_dyn()));
                    out.push((format!("{i}.beta"), bn.beta.view().into_dyn()));
                    out.push((
                        format!("{i}.running_mean"),
                        bn.running_mean.view().into_dyn(),
                    ));
                    out.push((format!("{i}.running_var"), bn.running_var.view().into_dyn()));
                }
                _ => {}
            }
        }
        out
    }

    /// Per-layer output shapes for a square input of side `input`.
    pub fn output_shapes(&self, input: usize) -> Vec<(usize, usize, usize)> {
        let mut shape = (3, input, input);
        self.layers
            .iter()
            .map(|l| {
                shape = l.output_shape(shape);
                shape
            })
            .collect()
    }

    /// Human-readable layer table with output shapes and parameter counts.
    pub fn summary(&self, input: usize) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} student ({}x{} input)",
            self.branch.name(),
            input,
            input
        );
        let _ = writeln!(
            s,
            "{:>3}  {:<24} {:>16} {:>10}",
            "#", "layer", "output", "params"
        );
        for (i, (layer, (c, h, w))) in self
            .layers
            .iter()
            .zip(self.output_shapes(input))
            .enumerate()
        {
            let label = match layer {
                Layer::Tap(t) => format!("tap {}", self.taps[*t].tap),
                other => other.describe(),
            };
            let _ = writeln!(
                s,
                "{i:>3}  {label:<24} {:>16} {:>10}",
                format!("{c}x{h}x{w}"),
                layer.trainable_count()
            );
        }
        let _ = writeln!(s, "total trainable parameters: {}", self.parameter_count());
        s
    }
}

impl StudentNet<f32> {
    pub fn to_param_store(&self, prefix: &str) -> ParamStore {
        let mut store = ParamStore::new();
        for (name, t) in self.named_tensors() {
            store.insert(format!("{prefix}.{name}"), t.to_owned());
        }
        store
    }

    /// Overwrites every tensor from `store` (names as written by [`Self::to_param_store`]).
    pub fn load_param_store(&mut self, store: &ParamStore, prefix: &str) -> Result<()> {
        let fetch = |name: String, shape: &[usize]| -> Result<ArrayD<f32>> {
            let t = store
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != shape {
                return Err(Error::shape(name, shape, t.shape()));
            }
            Ok(t.clone())
        };
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Conv { weight, .. } => {
                    let t = fetch(format!("{prefix}.{i}.weight"), weight.shape())?;
                    weight.assign(&t.into_dimensionality::<ndarray::Ix4>().expect("4-D"));
                }
                Layer::Norm(bn) => {
                    let c = [bn.channels()];
                    for (field, arr) in [
                        ("gamma", &mut bn.gamma),
                        ("beta", &mut bn.beta),
                        ("running_mean", &mut bn.running_mean),
                        ("running_var", &mut bn.running_var),
                    ] {
                        let t = fetch(format!("{prefix}.{i}.{field}"), &c)?;
                        arr.assign(&t.into_dimensionality::<ndarray::Ix1>().expect("1-D"));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn resnet_taps(spec: &LayerTapSpec) -> Result<Vec<TapSpec>> {
    if spec.arch != Arch::Resnet18 {
        return Err(Error::InvalidSpec(format!(
            "reduced student mirrors ResNet-18 taps, got {}",
            spec.arch
        )));
    }
    Ok(spec
        .taps
        .iter()
        .map(|t| match t.tap {
            Tap::Stem => *t,
            _ => TapSpec {
                tap: t.tap,
                channels: t.channels / 2,
                spatial: t.spatial / 2,
            },
        })
        .collect())
}

fn deepest_block(spec: &LayerTapSpec) -> Result<u8> {
    let deepest = spec.taps.iter().map(|t| t.tap.depth()).max().unwrap_or(0);
    if deepest > 3 {
        return Err(Error::InvalidSpec(
            "ResNet students support taps up to block3".into(),
        ));
    }
    Ok(deepest)
}

/// Stem 7x7/s2 conv, extra 3x3/s1 texture conv, and 3x3/s2 max-pool.
fn resnet_stem<F: Real>(spec: &LayerTapSpec, seed: u64) -> StudentBuilder<F> {
    StudentBuilder::new(3, seed)
        .conv_block(64, ConvGeometry::new(7, 2, 3))
        .conv_block(64, ConvGeometry::new(3, 1, 1))
        .tap_if(spec.tap_ids().contains(&Tap::Stem))
        .max_pool(ConvGeometry::new(3, 2, 1))
}

/// The texture-specific reduced student: one 3x3/s2 convolution per teacher
/// block, with half the teacher's channels, behind a ResNet-style stem with
/// an extra convolution. Taps for blocks sit at half the teacher's spatial
/// extent; the stem tap matches the teacher's stem shape.
pub fn build_reduced_student<F: Real>(spec: &LayerTapSpec, seed: u64) -> Result<StudentNet<F>> {
    let taps = resnet_taps(spec)?;
    let deepest = deepest_block(spec)?;
    let ids = spec.tap_ids();
    let mut b = resnet_stem(spec, seed);
    for block in 1..=deepest {
        let width = 32 << (block - 1);
        b = b
            .conv_block(width, ConvGeometry::new(3, 2, 1))
            .tap_if(ids.contains(&Tap::Block(block)));
    }
    Ok(b.finish(Branch::Resnet, taps))
}

/// Baseline for comparisons: like [`build_reduced_student`] but each teacher
/// stage becomes two blocks of two 3x3 convolutions (the ResNet-18 layer
/// structure, without shortcuts) at the same channel plan.
pub fn build_two_conv_baseline<F: Real>(spec: &LayerTapSpec, seed: u64) -> Result<StudentNet<F>> {
    let taps = resnet_taps(spec)?;
    let deepest = deepest_block(spec)?;
    let ids = spec.tap_ids();
    let mut b = resnet_stem(spec, seed);
    for block in 1..=deepest {
        let width = 32 << (block - 1);
        b = b
            .conv_block(width, ConvGeometry::new(3, 2, 1))
            .conv_block(width, ConvGeometry::new(3, 1, 1))
            .conv_block(width, ConvGeometry::new(3, 1, 1))
            .conv_block(width, ConvGeometry::new(3, 1, 1))
            .tap_if(ids.contains(&Tap::Block(block)));
    }
    Ok(b.finish(Branch::Resnet, taps))
}

/// EfficientNet-branch student: a 3x3/s2 stem, then one 3x3 convolution per
/// stage with that stage's native stride and width. Tap outputs equal the
/// teacher's shapes. Taps are taken after normalization and before the ReLU
/// because the teacher's stage outputs are linear projections.
pub fn build_effnet_student<F: Real>(spec: &LayerTapSpec, seed: u64) -> Result<StudentNet<F>> {
    if spec.arch != Arch::EfficientnetB0 {
        return Err(Error::InvalidSpec(format!(
            "EfficientNet student needs an efficientnet_b0 spec, got {}",
            spec.arch
        )));
    }
    let ids = spec.tap_ids();
    if ids.iter().any(|t| !matches!(t, Tap::Stage(1..=6))) {
        return Err(Error::InvalidSpec(
            "EfficientNet student taps must be stages 1..6".into(),
        ));
    }
    let deepest = ids.iter().map(|t| t.depth()).max().unwrap_or(0) as usize;
    let mut b = StudentBuilder::new(3, seed).conv_block(32, ConvGeometry::new(3, 2, 1));
    for stage in 1..=deepest {
        b = b
            .conv(
                EFFNET_STAGE_WIDTHS[stage - 1],
                ConvGeometry::new(3, EFFNET_STAGE_STRIDES[stage - 1], 1),
            )
            .norm()
            .tap_if(ids.contains(&Tap::Stage(stage as u8)));
        if stage < deepest {
            b = b.relu();
        }
    }
    Ok(b.finish(Branch::Effnet, spec.taps.clone()))
}

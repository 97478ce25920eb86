//! Backbone registry.
//!
//! Each published architecture is rebuilt layer by layer from the
//! [`nn`](crate::nn) primitives so that parameter names, shapes and counts
//! line up with the reference Keras implementations. Published weights are
//! supplied by a [`WeightProvider`]; `toyconv` is a small reference network
//! that always starts from random initialization.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use crate::nn::{Graph, GraphBuilder, NodeId, Padding, ParamStore};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackboneKind {
    DenseNet201,
    InceptionV3,
    ResNet152V2,
    SeResNet152,
    Xception,
    ToyConv,
}

impl BackboneKind {
    pub const ALL: [BackboneKind; 6] = [
        BackboneKind::DenseNet201,
        BackboneKind::InceptionV3,
        BackboneKind::ResNet152V2,
        BackboneKind::SeResNet152,
        BackboneKind::Xception,
        BackboneKind::ToyConv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BackboneKind::DenseNet201 => "densenet201",
            BackboneKind::InceptionV3 => "inceptionv3",
            BackboneKind::ResNet152V2 => "resnet152v2",
            BackboneKind::SeResNet152 => "seresnet152",
            BackboneKind::Xception => "xception",
            BackboneKind::ToyConv => "toyconv",
        }
    }

    /// Whether published ImageNet weights exist for this architecture.
    pub fn has_published_weights(self) -> bool {
        self != BackboneKind::ToyConv
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BackboneKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = BackboneKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown backbone {s:?}; expected one of {known:?}"))
            })
    }
}

/// Source of published backbone weights.
pub trait WeightProvider {
    /// Overwrites every parameter and buffer in `params` with the published
    /// values for `backbone`.
    fn load(&self, backbone: &str, params: &mut ParamStore) -> Result<()>;
}

/// Provider used when no weight source is configured; always fails with an
/// environment error.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoWeights;

impl WeightProvider for NoWeights {
    fn load(&self, backbone: &str, _params: &mut ParamStore) -> Result<()> {
        Err(Error::Environment {
            message: format!("no weight provider is configured for pretrained {backbone}"),
            hint: String::from(
                "set model.weights_dir (or LEAFSCOPE_MODEL_WEIGHTS_DIR) to a directory holding exported weights, \
                 or set model.pretrained = false",
            ),
        })
    }
}

/// A feature extractor: input scaling plus convolutional base.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    kind: BackboneKind,
    graph: Graph,
    pretrained: bool,
}

const IMAGENET_CLASSES: usize = 1000;

impl Backbone {
    pub fn kind(&self) -> BackboneKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn pretrained(&self) -> bool {
        self.pretrained
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }

    /// Feature depth `d` of the output map.
    pub fn depth(&self) -> usize {
        self.feature_shape(224).map(|s| s[2]).unwrap_or(0)
    }

    /// `(h, w, d)` of the feature map for a square input.
    pub fn feature_shape(&self, input_size: usize) -> Result<[usize; 3]> {
        self.graph.output_shape(input_size, input_size)
    }

    /// Scalars held by the extractor, including batch-norm running statistics.
    pub fn parameter_count(&self) -> usize {
        self.graph.params().total_count()
    }

    /// Parameter count of the complete published network, i.e. the extractor
    /// plus its 1000-way ImageNet classifier. Equals
    /// [`Backbone::parameter_count`] for `toyconv`.
    pub fn reference_parameter_count(&self) -> usize {
        let base = self.parameter_count();
        if self.kind.has_published_weights() {
            let d = self.depth();
            base + d * IMAGENET_CLASSES + IMAGENET_CLASSES
        } else {
            base
        }
    }

    /// Inference-mode feature extraction.
    pub fn extract(&self, batch: &Tensor) -> Result<Tensor> {
        self.graph.forward_infer(batch)
    }
}

/// Builds the named backbone. `seed` drives random initialization; with
/// `pretrained` the provider then overwrites every value.
pub fn build_backbone(name: &str, pretrained: bool, provider: &dyn WeightProvider, seed: u64) -> Result<Backbone> {
    let kind: BackboneKind = name.parse()?;
    if pretrained && !kind.has_published_weights() {
        return Err(Error::Config(format!("{name} has no published weights; use pretrained = false")));
    }
    let mut graph = match kind {
        BackboneKind::DenseNet201 => densenet201(seed),
        BackboneKind::InceptionV3 => inception_v3(seed),
        BackboneKind::ResNet152V2 => resnet152_v2(seed),
        BackboneKind::SeResNet152 => se_resnet152(seed),
        BackboneKind::Xception => xception(seed),
        BackboneKind::ToyConv => toyconv(seed),
    };
    if pretrained {
        provider.load(name, graph.params_mut())?;
    }
    Ok(Backbone { kind, graph, pretrained })
}

const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// `[0, 1]` input to per-channel standardized ImageNet statistics.
fn torch_scaling(b: &mut GraphBuilder, x: NodeId) -> NodeId {
    let scale = IMAGENET_STD.iter().map(|s| 1.0 / s).collect();
    let shift = IMAGENET_MEAN.iter().zip(IMAGENET_STD).map(|(m, s)| -m / s).collect();
    b.affine(x, "input_scaling", scale, shift)
}

/// `[0, 1]` input to `[-1, 1]`.
fn tf_scaling(b: &mut GraphBuilder, x: NodeId) -> NodeId {
    b.affine(x, "input_scaling", vec![2.0; 3], vec![-1.0; 3])
}

/// Four blocks of 3x3 convolution, ReLU and 2x2 max pooling with depths
/// 8, 16, 32, 64. The first convolution has stride 2, so a 224 input yields
/// a 7x7x64 map.
pub fn toyconv(seed: u64) -> Graph {
    let (mut b, input) = GraphBuilder::new(3, seed);
    let mut x = tf_scaling(&mut b, input);
    for (i, depth) in [8usize, 16, 32, 64].into_iter().enumerate() {
        let stride = if i == 0 { 2 } else { 1 };
        x = b.conv(x, &format!("block{}_conv", i + 1), depth, (3, 3), (stride, stride), Padding::Same, true);
        x = b.relu(x, &format!("block{}_relu", i + 1));
        x = b.max_pool(x, &format!("block{}_pool", i + 1), 2, 2, Padding::Valid);
    }
    b.finish(x)
}

const DENSENET_EPS: f32 = 1.001e-5;

fn densenet201(seed: u64) -> Graph {
    let (mut b, input) = GraphBuilder::new(3, seed);
    let x = torch_scaling(&mut b, input);
    let x = b.zero_pad(x, "zero_padding2d", (3, 3), (3, 3));
    let x = b.conv(x, "conv1/conv", 64, (7, 7), (2, 2), Padding::Valid, false);
    let x = b.batch_norm(x, "conv1/bn", DENSENET_EPS, true);
    let x = b.relu(x, "conv1/relu");
    let x = b.zero_pad(x, "zero_padding2d_1", (1, 1), (1, 1));
    let mut x = b.max_pool(x, "pool1", 3, 2, Padding::Valid);
    let blocks = [6usize, 12, 48, 32];
    for (stage, &n) in blocks.iter().enumerate() {
        let name = format!("conv{}", stage + 2);
        for i in 1..=n {
            let p = format!("{name}_block{i}");
            let y = b.batch_norm(x, &format!("{p}_0_bn"), DENSENET_EPS, true);
            let y = b.relu(y, &format!("{p}_0_relu"));
            let y = b.conv(y, &format!("{p}_1_conv"), 128, (1, 1), (1, 1), Padding::Valid, false);
            let y = b.batch_norm(y, &format!("{p}_1_bn"), DENSENET_EPS, true);
            let y = b.relu(y, &format!("{p}_1_relu"));
            let y = b.conv(y, &format!("{p}_2_conv"), 32, (3, 3), (1, 1), Padding::Same, false);
            x = b.concat(&[x, y], &format!("{p}_concat"));
        }
        if stage + 1 < blocks.len() {
            let p = format!("pool{}", stage + 2);
            let c = b.channels(x) / 2;
            let y = b.batch_norm(x, &format!("{p}_bn"), DENSENET_EPS, true);
            let y = b.relu(y, &format!("{p}_relu"));
            let y = b.conv(y, &format!("{p}_conv"), c, (1, 1), (1, 1), Padding::Valid, false);
            x = b.avg_pool(y, &format!("{p}_pool"), 2, 2, Padding::Valid);
        }
    }
    let x = b.batch_norm(x, "bn", DENSENET_EPS, true);
    let x = b.relu(x, "relu");
    b.finish(x)
}

const RESNET_EPS: f32 = 1.001e-5;

fn resnet_v2_block(b: &mut GraphBuilder, x: NodeId, filters: usize, stride: usize, conv_shortcut: bool, name: &str) -> NodeId {
    let preact = b.batch_norm(x, &format!("{name}_preact_bn"), RESNET_EPS, true);
    let preact = b.relu(preact, &format!("{name}_preact_relu"));
    let shortcut = if conv_shortcut {
        b.conv(preact, &format!("{name}_0_conv"), 4 * filters, (1, 1), (stride, stride), Padding::Valid, true)
    } else if stride > 1 {
        b.max_pool(x, &format!("{name}_0_pool"), 1, stride, Padding::Valid)
    } else {
        x
    };
    let y = b.conv(preact, &format!("{name}_1_conv"), filters, (1, 1), (1, 1), Padding::Valid, false);
    let y = b.batch_norm(y, &format!("{name}_1_bn"), RESNET_EPS, true);
    let y = b.relu(y, &format!("{name}_1_relu"));
    let y = b.zero_pad(y, &format!("{name}_2_pad"), (1, 1), (1, 1));
    let y = b.conv(y, &format!("{name}_2_conv"), filters, (3, 3), (stride, stride), Padding::Valid, false);
    let y = b.batch_norm(y, &format!("{name}_2_bn"), RESNET_EPS, true);
    let y = b.relu(y, &format!("{name}_2_relu"));
    let y = b.conv(y, &format!("{name}_3_conv"), 4 * filters, (1, 1), (1, 1), Padding::Valid, true);
    b.add(shortcut, y, &format!("{name}_out"))
}

fn resnet152_v2(seed: u64) -> Graph {
    let (mut b, input) = GraphBuilder::new(3, seed);
    let x = tf_scaling(&mut b, input);
    let x = b.zero_pad(x, "conv1_pad", (3, 3), (3, 3));
    let x = b.conv(x, "conv1_conv", 64, (7, 7), (2, 2), Padding::Valid, true);
    let x = b.zero_pad(x, "pool1_pad", (1, 1), (1, 1));
    let mut x = b.max_pool(x, "pool1_pool", 3, 2, Padding::Valid);
    for (stage, (filters, blocks, last_stride)) in [(64usize, 3usize, 2usize), (128, 8, 2), (256, 36, 2), (512, 3, 1)]
        .into_iter()
        .enumerate()
    {
        let name = format!("conv{}", stage + 2);
        x = resnet_v2_block(&mut b, x, filters, 1, true, &format!("{name}_block1"));
        for i in 2..blocks {
            x = resnet_v2_block(&mut b, x, filters, 1, false, &format!("{name}_block{i}"));
        }
        x = resnet_v2_block(&mut b, x, filters, last_stride, false, &format!("{name}_block{blocks}"));
    }
    let x = b.batch_norm(x, "post_bn", RESNET_EPS, true);
    let x = b.relu(x, "post_relu");
    b.finish(x)
}

const SENET_EPS: f32 = 2e-5;

fn se_bottleneck(b: &mut GraphBuilder, x: NodeId, filters: usize, stride: usize, name: &str) -> NodeId {
    let y = b.conv(x, &format!("{name}_conv1"), filters / 4, (1, 1), (stride, stride), Padding::Valid, false);
    let y = b.batch_norm(y, &format!("{name}_bn1"), SENET_EPS, true);
    let y = b.relu(y, &format!("{name}_relu1"));
    let y = b.zero_pad(y, &format!("{name}_pad"), (1, 1), (1, 1));
    let y = b.conv(y, &format!("{name}_conv2"), filters / 4, (3, 3), (1, 1), Padding::Valid, false);
    let y = b.batch_norm(y, &format!("{name}_bn2"), SENET_EPS, true);
    let y = b.relu(y, &format!("{name}_relu2"));
    let y = b.conv(y, &format!("{name}_conv3"), filters, (1, 1), (1, 1), Padding::Valid, false);
    let y = b.batch_norm(y, &format!("{name}_bn3"), SENET_EPS, true);
    let residual = if stride != 1 || b.channels(x) != filters {
        let r = b.conv(x, &format!("{name}_downsample_conv"), filters, (1, 1), (stride, stride), Padding::Valid, false);
        b.batch_norm(r, &format!("{name}_downsample_bn"), SENET_EPS, true)
    } else {
        x
    };
    // squeeze-and-excitation, reduction 16
    let s = b.global_avg_pool(y, &format!("{name}_se_pool"));
    let s = b.conv(s, &format!("{name}_se_reduce"), filters / 16, (1, 1), (1, 1), Padding::Valid, true);
    let s = b.relu(s, &format!("{name}_se_relu"));
    let s = b.conv(s, &format!("{name}_se_expand"), filters, (1, 1), (1, 1), Padding::Valid, true);
    let s = b.sigmoid(s, &format!("{name}_se_sigmoid"));
    let y = b.channel_mul(y, s, &format!("{name}_se_scale"));
    let y = b.add(y, residual, &format!("{name}_add"));
    b.relu(y, &format!("{name}_out"))
}

fn se_resnet152(seed: u64) -> Graph {
    let (mut b, input) = GraphBuilder::new(3, seed);
    let x = torch_scaling(&mut b, input);
    let x = b.zero_pad(x, "stem_pad", (3, 3), (3, 3));
    let x = b.conv(x, "stem_conv", 64, (7, 7), (2, 2), Padding::Valid, false);
    let x = b.batch_norm(x, "stem_bn", SENET_EPS, true);
    let x = b.relu(x, "stem_relu");
    let x = b.zero_pad(x, "pool_pad", (1, 1), (1, 1));
    let mut x = b.max_pool(x, "stem_pool", 3, 2, Padding::Valid);
    let mut filters = 128;
    for (stage, reps) in [3usize, 8, 36, 3].into_iter().enumerate() {
        filters *= 2;
        for j in 0..reps {
            let stride = if stage > 0 && j == 0 { 2 } else { 1 };
            x = se_bottleneck(&mut b, x, filters, stride, &format!("stage{}_unit{}", stage + 1, j + 1));
        }
    }
    b.finish(x)
}

const KERAS_EPS: f32 = 1e-3;

fn xception(seed: u64) -> Graph {
    let (mut b, input) = GraphBuilder::new(3, seed);
    let x = tf_scaling(&mut b, input);
    let x = b.conv(x, "block1_conv1", 32, (3, 3), (2, 2), Padding::Valid, false);
    let x = b.batch_norm(x, "block1_conv1_bn", KERAS_EPS, true);
    let x = b.relu(x, "block1_conv1_act");
    let x = b.conv(x, "block1_conv2", 64, (3, 3), (1, 1), Padding::Valid, false);
    let x = b.batch_norm(x, "block1_conv2_bn", KERAS_EPS, true);
    let mut x = b.relu(x, "block1_conv2_act");

    // entry flow blocks 2-4; block 2 starts without a leading activation
    for (block, filters) in [(2usize, 128usize), (3, 256), (4, 728)] {
        let p = format!("block{block}");
        let r = b.conv(x, &format!("{p}_residual"), filters, (1, 1), (2, 2), Padding::Same, false);
        let r = b.batch_norm(r, &format!("{p}_residual_bn"), KERAS_EPS, true);
        let mut y = x;
        if block != 2 {
            y = b.relu(y, &format!("{p}_sepconv1_act"));
        }
        y = b.separable(y, &format!("{p}_sepconv1"), filters, (3, 3), Padding::Same);
        y = b.batch_norm(y, &format!("{p}_sepconv1_bn"), KERAS_EPS, true);
        y = b.relu(y, &format!("{p}_sepconv2_act"));
        y = b.separable(y, &format!("{p}_sepconv2"), filters, (3, 3), Padding::Same);
        y = b.batch_norm(y, &format!("{p}_sepconv2_bn"), KERAS_EPS, true);
        y = b.max_pool(y, &format!("{p}_pool"), 3, 2, Padding::Same);
        x = b.add(y, r, &format!("{p}_add"));
    }

    for block in 5..13 {
        let p = format!("block{block}");
        let mut y = x;
        for i in 1..=3 {
            y = b.relu(y, &format!("{p}_sepconv{i}_act"));
            y = b.separable(y, &format!("{p}_sepconv{i}"), 728, (3, 3), Padding::Same);
            y = b.batch_norm(y, &format!("{p}_sepconv{i}_bn"), KERAS_EPS, true);
        }
        x = b.add(y, x, &format!("{p}_add"));
    }

    let r = b.conv(x, "block13_residual", 1024, (1, 1), (2, 2), Padding::Same, false);
    let r = b.batch_norm(r, "block13_residual_bn", KERAS_EPS, true);
    let y = b.relu(x, "block13_sepconv1_act");
    let y = b.separable(y, "block13_sepconv1", 728, (3, 3), Padding::Same);
    let y = b.batch_norm(y, "block13_sepconv1_bn", KERAS_EPS, true);
    let y = b.relu(y, "block13_sepconv2_act");
    let y = b.separable(y, "block13_sepconv2", 1024, (3, 3), Padding::Same);
    let y = b.batch_norm(y, "block13_sepconv2_bn", KERAS_EPS, true);
    let y = b.max_pool(y, "block13_pool", 3, 2, Padding::Same);
    let x = b.add(y, r, "block13_add");

    let x = b.separable(x, "block14_sepconv1", 1536, (3, 3), Padding::Same);
    let x = b.batch_norm(x, "block14_sepconv1_bn", KERAS_EPS, true);
    let x = b.relu(x, "block14_sepconv1_act");
    let x = b.separable(x, "block14_sepconv2", 2048, (3, 3), Padding::Same);
    let x = b.batch_norm(x, "block14_sepconv2_bn", KERAS_EPS, true);
    let x = b.relu(x, "block14_sepconv2_act");
    b.finish(x)
}

/// Convolution, scale-free batch norm and ReLU, the Inception building unit.
fn conv_bn(b: &mut GraphBuilder, x: NodeId, name: &str, filters: usize, k: (usize, usize), stride: usize, padding: Padding) -> NodeId {
    let y = b.conv(x, &format!("{name}_conv"), filters, k, (stride, stride), padding, false);
    let y = b.batch_norm(y, &format!("{name}_bn"), KERAS_EPS, false);
    b.relu(y, &format!("{name}_relu"))
}

fn inception_v3(seed: u64) -> Graph {
    use Padding::{Same, Valid};
    let (mut builder, input) = GraphBuilder::new(3, seed);
    let b = &mut builder;
    let x = tf_scaling(b, input);
    let x = conv_bn(b, x, "stem1", 32, (3, 3), 2, Valid);
    let x = conv_bn(b, x, "stem2", 32, (3, 3), 1, Valid);
    let x = conv_bn(b, x, "stem3", 64, (3, 3), 1, Same);
    let x = b.max_pool(x, "stem_pool1", 3, 2, Valid);
    let x = conv_bn(b, x, "stem4", 80, (1, 1), 1, Valid);
    let x = conv_bn(b, x, "stem5", 192, (3, 3), 1, Valid);
    let mut x = b.max_pool(x, "stem_pool2", 3, 2, Valid);

    for (i, pool_filters) in [32usize, 64, 64].into_iter().enumerate() {
        let p = format!("mixed{i}");
        let b1 = conv_bn(b, x, &format!("{p}_1x1"), 64, (1, 1), 1, Same);
        let b5 = conv_bn(b, x, &format!("{p}_5x5a"), 48, (1, 1), 1, Same);
        let b5 = conv_bn(b, b5, &format!("{p}_5x5b"), 64, (5, 5), 1, Same);
        let d = conv_bn(b, x, &format!("{p}_3x3dbl_a"), 64, (1, 1), 1, Same);
        let d = conv_bn(b, d, &format!("{p}_3x3dbl_b"), 96, (3, 3), 1, Same);
        let d = conv_bn(b, d, &format!("{p}_3x3dbl_c"), 96, (3, 3), 1, Same);
        let bp = b.avg_pool(x, &format!("{p}_pool"), 3, 1, Same);
        let bp = conv_bn(b, bp, &format!("{p}_pool_proj"), pool_filters, (1, 1), 1, Same);
        x = b.concat(&[b1, b5, d, bp], &p);
    }

    let b3 = conv_bn(b, x, "mixed3_3x3", 384, (3, 3), 2, Valid);
    let d = conv_bn(b, x, "mixed3_3x3dbl_a", 64, (1, 1), 1, Same);
    let d = conv_bn(b, d, "mixed3_3x3dbl_b", 96, (3, 3), 1, Same);
    let d = conv_bn(b, d, "mixed3_3x3dbl_c", 96, (3, 3), 2, Valid);
    let bp = b.max_pool(x, "mixed3_pool", 3, 2, Valid);
    x = b.concat(&[b3, d, bp], "mixed3");

    for (i, mid) in [128usize, 160, 160, 192].into_iter().enumerate() {
        let p = format!("mixed{}", i + 4);
        let b1 = conv_bn(b, x, &format!("{p}_1x1"), 192, (1, 1), 1, Same);
        let s = conv_bn(b, x, &format!("{p}_7x7a"), mid, (1, 1), 1, Same);
        let s = conv_bn(b, s, &format!("{p}_7x7b"), mid, (1, 7), 1, Same);
        let s = conv_bn(b, s, &format!("{p}_7x7c"), 192, (7, 1), 1, Same);
        let d = conv_bn(b, x, &format!("{p}_7x7dbl_a"), mid, (1, 1), 1, Same);
        let d = conv_bn(b, d, &format!("{p}_7x7dbl_b"), mid, (7, 1), 1, Same);
        let d = conv_bn(b, d, &format!("{p}_7x7dbl_c"), mid, (1, 7), 1, Same);
        let d = conv_bn(b, d, &format!("{p}_7x7dbl_d"), mid, (7, 1), 1, Same);
        let d = conv_bn(b, d, &format!("{p}_7x7dbl_e"), 192, (1, 7), 1, Same);
        let bp = b.avg_pool(x, &format!("{p}_pool"), 3, 1, Same);
        let bp = conv_bn(b, bp, &format!("{p}_pool_proj"), 192, (1, 1), 1, Same);
        x = b.concat(&[b1, s, d, bp], &p);
    }

    let b3 = conv_bn(b, x, "mixed8_3x3a", 192, (1, 1), 1, Same);
    let b3 = conv_bn(b, b3, "mixed8_3x3b", 320, (3, 3), 2, Valid);
    let s = conv_bn(b, x, "mixed8_7x7x3a", 192, (1, 1), 1, Same);
    let s = conv_bn(b, s, "mixed8_7x7x3b", 192, (1, 7), 1, Same);
    let s = conv_bn(b, s, "mixed8_7x7x3c", 192, (7, 1), 1, Same);
    let s = conv_bn(b, s, "mixed8_7x7x3d", 192, (3, 3), 2, Valid);
    let bp = b.max_pool(x, "mixed8_pool", 3, 2, Valid);
    x = b.concat(&[b3, s, bp], "mixed8");

    for i in [9usize, 10] {
        let p = format!("mixed{i}");
        let b1 = conv_bn(b, x, &format!("{p}_1x1"), 320, (1, 1), 1, Same);
        let t = conv_bn(b, x, &format!("{p}_3x3"), 384, (1, 1), 1, Same);
        let t1 = conv_bn(b, t, &format!("{p}_3x3_1x3"), 384, (1, 3), 1, Same);
        let t2 = conv_bn(b, t, &format!("{p}_3x3_3x1"), 384, (3, 1), 1, Same);
        let t = b.concat(&[t1, t2], &format!("{p}_3x3_concat"));
        let d = conv_bn(b, x, &format!("{p}_3x3dbl_a"), 448, (1, 1), 1, Same);
        let d = conv_bn(b, d, &format!("{p}_3x3dbl_b"), 384, (3, 3), 1, Same);
        let d1 = conv_bn(b, d, &format!("{p}_3x3dbl_1x3"), 384, (1, 3), 1, Same);
        let d2 = conv_bn(b, d, &format!("{p}_3x3dbl_3x1"), 384, (3, 1), 1, Same);
        let d = b.concat(&[d1, d2], &format!("{p}_3x3dbl_concat"));
        let bp = b.avg_pool(x, &format!("{p}_pool"), 3, 1, Same);
        let bp = conv_bn(b, bp, &format!("{p}_pool_proj"), 192, (1, 1), 1, Same);
        x = b.concat(&[b1, t, d, bp], &p);
    }
    builder.finish(x)
}

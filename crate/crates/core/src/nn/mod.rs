//! A small static computation graph over NHWC tensors with reverse-mode
//! gradients. Backbones are expressed as [`Graph`]s built with
//! [`GraphBuilder`].

mod builder;
mod graph;
mod kernels;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use builder::GraphBuilder;
pub use graph::{Graph, Tape};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(pub usize);

/// Trainable weight tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
}

/// Non-trainable state (batch-norm running statistics).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Buffer {
    pub name: String,
    pub value: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    pub params: Vec<Param>,
    pub buffers: Vec<Buffer>,
    grads: Vec<Vec<f32>>,
}

impl ParamStore {
    pub(crate) fn add_param(&mut self, name: String, shape: Vec<usize>, value: Vec<f32>) -> ParamId {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.params.push(Param { name, shape, value });
        ParamId(self.params.len() - 1)
    }

    pub(crate) fn add_buffer(&mut self, name: String, value: Vec<f32>) -> BufferId {
        self.buffers.push(Buffer { name, value });
        BufferId(self.buffers.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> &[f32] {
        &self.params[id.0].value
    }

    pub fn buffer(&self, id: BufferId) -> &[f32] {
        &self.buffers[id.0].value
    }

    /// Trainable scalar count.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Trainable plus running-statistic scalars.
    pub fn total_count(&self) -> usize {
        self.trainable_count() + self.buffers.iter().map(|b| b.value.len()).sum::<usize>()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Releases gradient storage (inference-only graphs never allocate it).
    pub fn drop_grads(&mut self) {
        self.grads.clear();
    }

    pub fn grad(&self, id: ParamId) -> Option<&[f32]> {
        self.grads.get(id.0).map(Vec::as_slice)
    }

    fn ensure_grads(&mut self) {
        if self.grads.len() != self.params.len() {
            self.grads = self.params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        }
    }

    /// Moves a gradient out of the store; pair with [`ParamStore::put_grad`].
    pub(crate) fn take_grad(&mut self, id: ParamId) -> Vec<f32> {
        self.ensure_grads();
        core::mem::take(&mut self.grads[id.0])
    }

    pub(crate) fn put_grad(&mut self, id: ParamId, grad: Vec<f32>) {
        self.grads[id.0] = grad;
    }

    /// `(values, gradients)` pairs for every parameter, for optimizers.
    pub fn params_and_grads(&mut self) -> impl Iterator<Item = (&mut [f32], &[f32])> {
        self.ensure_grads();
        self.params
            .iter_mut()
            .zip(&self.grads)
            .map(|(p, g)| (p.value.as_mut_slice(), g.as_slice()))
    }

    /// Flat copy of every parameter and buffer value.
    pub fn flat_values(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.total_count());
        for p in &self.params {
            out.extend_from_slice(&p.value);
        }
        for b in &self.buffers {
            out.extend_from_slice(&b.value);
        }
        out
    }
}

/// Spatial padding policy of a convolution or pooling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    /// Output size `ceil(input / stride)`, odd padding goes after.
    Same,
}

/// `(pad_before, pad_after, output)` along one axis.
pub fn resolve_padding(padding: Padding, input: usize, kernel: usize, stride: usize) -> Option<(usize, usize, usize)> {
    match padding {
        Padding::Valid => {
            if input < kernel {
                None
            } else {
                Some((0, 0, (input - kernel) / stride + 1))
            }
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Some((total / 2, total - total / 2, out))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub padding: Padding,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input,
    /// `x * scale[c] + shift[c]`, constant input scaling.
    ChannelAffine { scale: Vec<f32>, shift: Vec<f32> },
    ZeroPad { top: usize, bottom: usize, left: usize, right: usize },
    Conv { kernel: ParamId, bias: Option<ParamId>, window: Window, cout: usize },
    /// Depth multiplier 1.
    DepthwiseConv { kernel: ParamId, window: Window },
    BatchNorm {
        gamma: Option<ParamId>,
        beta: ParamId,
        mean: BufferId,
        var: BufferId,
        eps: f32,
        momentum: f32,
    },
    Relu,
    Sigmoid,
    MaxPool(Window),
    /// Averages only in-bounds elements.
    AvgPool(Window),
    /// Spatial mean, keeps a `1 x 1` map.
    GlobalAvgPool,
    Add,
    /// `x * s` with `s` of shape `[n, 1, 1, c]`.
    ChannelMul,
    Concat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
}

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::rng::{self, SeededRng};

use super::{Graph, Node, NodeId, Op, Padding, ParamStore, Window};

/// Incrementally assembles a [`Graph`], tracking channel counts and
/// initializing parameters (He-normal kernels, zero biases, unit batch-norm).
pub struct GraphBuilder {
    nodes: Vec<Node>,
    channels: Vec<usize>,
    params: ParamStore,
    input_channels: usize,
    rng: SeededRng,
}

impl GraphBuilder {
    /// Returns the builder and the id of its input node.
    pub fn new(input_channels: usize, seed: u64) -> (Self, NodeId) {
        let mut b = Self {
            nodes: Vec::new(),
            channels: Vec::new(),
            params: ParamStore::default(),
            input_channels,
            rng: rng::seeded(seed),
        };
        let x = b.push("input", Op::Input, vec![], input_channels);
        (b, x)
    }

    fn push(&mut self, name: &str, op: Op, inputs: Vec<NodeId>, channels: usize) -> NodeId {
        self.nodes.push(Node {
            name: String::from(name),
            op,
            inputs,
        });
        self.channels.push(channels);
        self.nodes.len() - 1
    }

    pub fn channels(&self, x: NodeId) -> usize {
        self.channels[x]
    }

    fn he_normal(&mut self, n: usize, fan_in: usize) -> Vec<f32> {
        let std = libm::sqrt(2.0 / fan_in as f64);
        (0..n).map(|_| (rng::normal(&mut self.rng) * std) as f32).collect()
    }

    pub fn affine(&mut self, x: NodeId, name: &str, scale: Vec<f32>, shift: Vec<f32>) -> NodeId {
        let c = self.channels[x];
        assert!(scale.len() == c && shift.len() == c, "affine expects one scale/shift per channel");
        self.push(name, Op::ChannelAffine { scale, shift }, vec![x], c)
    }

    pub fn zero_pad(&mut self, x: NodeId, name: &str, (top, bottom): (usize, usize), (left, right): (usize, usize)) -> NodeId {
        let c = self.channels[x];
        self.push(name, Op::ZeroPad { top, bottom, left, right }, vec![x], c)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        x: NodeId,
        name: &str,
        cout: usize,
        (kh, kw): (usize, usize),
        (sh, sw): (usize, usize),
        padding: Padding,
        bias: bool,
    ) -> NodeId {
        let cin = self.channels[x];
        let fan_in = kh * kw * cin;
        let w = self.he_normal(fan_in * cout, fan_in);
        let kernel = self.params.add_param(alloc::format!("{name}/kernel"), vec![kh, kw, cin, cout], w);
        let bias = bias.then(|| self.params.add_param(alloc::format!("{name}/bias"), vec![cout], vec![0.0; cout]));
        let window = Window { kh, kw, sh, sw, padding };
        self.push(name, Op::Conv { kernel, bias, window, cout }, vec![x], cout)
    }

    pub fn depthwise(&mut self, x: NodeId, name: &str, (kh, kw): (usize, usize), (sh, sw): (usize, usize), padding: Padding) -> NodeId {
        let c = self.channels[x];
        let w = self.he_normal(kh * kw * c, kh * kw);
        let kernel = self.params.add_param(alloc::format!("{name}/depthwise_kernel"), vec![kh, kw, c, 1], w);
        let window = Window { kh, kw, sh, sw, padding };
        self.push(name, Op::DepthwiseConv { kernel, window }, vec![x], c)
    }

    /// Depthwise 3x3-style convolution followed by a bias-free pointwise projection.
    pub fn separable(&mut self, x: NodeId, name: &str, cout: usize, k: (usize, usize), padding: Padding) -> NodeId {
        let d = self.depthwise(x, &alloc::format!("{name}/depthwise"), k, (1, 1), padding);
        self.conv(d, &alloc::format!("{name}/pointwise"), cout, (1, 1), (1, 1), Padding::Valid, false)
    }

    /// Batch normalization with momentum 0.99; `scale = false` drops the gain.
    pub fn batch_norm(&mut self, x: NodeId, name: &str, eps: f32, scale: bool) -> NodeId {
        let c = self.channels[x];
        let gamma = scale.then(|| self.params.add_param(alloc::format!("{name}/gamma"), vec![c], vec![1.0; c]));
        let beta = self.params.add_param(alloc::format!("{name}/beta"), vec![c], vec![0.0; c]);
        let mean = self.params.add_buffer(alloc::format!("{name}/moving_mean"), vec![0.0; c]);
        let var = self.params.add_buffer(alloc::format!("{name}/moving_variance"), vec![1.0; c]);
        self.push(
            name,
            Op::BatchNorm {
                gamma,
                beta,
                mean,
                var,
                eps,
                momentum: 0.99,
            },
            vec![x],
            c,
        )
    }

    pub fn relu(&mut self, x: NodeId, name: &str) -> NodeId {
        let c = self.channels[x];
        self.push(name, Op::Relu, vec![x], c)
    }

    pub fn sigmoid(&mut self, x: NodeId, name: &str) -> NodeId {
        let c = self.channels[x];
        self.push(name, Op::Sigmoid, vec![x], c)
    }

    pub fn max_pool(&mut self, x: NodeId, name: &str, k: usize, stride: usize, padding: Padding) -> NodeId {
        let c = self.channels[x];
        let w = Window { kh: k, kw: k, sh: stride, sw: stride, padding };
        self.push(name, Op::MaxPool(w), vec![x], c)
    }

    pub fn avg_pool(&mut self, x: NodeId, name: &str, k: usize, stride: usize, padding: Padding) -> NodeId {
        let c = self.channels[x];
        let w = Window { kh: k, kw: k, sh: stride, sw: stride, padding };
        self.push(name, Op::AvgPool(w), vec![x], c)
    }

    pub fn global_avg_pool(&mut self, x: NodeId, name: &str) -> NodeId {
        let c = self.channels[x];
        self.push(name, Op::GlobalAvgPool, vec![x], c)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId, name: &str) -> NodeId {
        assert_eq!(self.channels[a], self.channels[b], "add at {name}: channel mismatch");
        let c = self.channels[a];
        self.push(name, Op::Add, vec![a, b], c)
    }

    pub fn channel_mul(&mut self, x: NodeId, scale: NodeId, name: &str) -> NodeId {
        let c = self.channels[x];
        self.push(name, Op::ChannelMul, vec![x, scale], c)
    }

    pub fn concat(&mut self, xs: &[NodeId], name: &str) -> NodeId {
        let c = xs.iter().map(|&x| self.channels[x]).sum();
        self.push(name, Op::Concat, xs.to_vec(), c)
    }

    pub fn finish(self, output: NodeId) -> Graph {
        let mut last_use: Vec<usize> = (0..self.nodes.len()).collect();
        for (idx, node) in self.nodes.iter().enumerate() {
            for &i in &node.inputs {
                last_use[i] = idx;
            }
        }
        Graph {
            nodes: self.nodes,
            output,
            input_channels: self.input_channels,
            params: self.params,
            last_use,
        }
    }
}

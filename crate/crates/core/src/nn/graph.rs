use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Tensor;
use crate::{Error, Result};

use super::kernels::{self, Geom};
use super::{Node, NodeId, Op, ParamStore};

/// A built network: nodes in topological order, node 0 is the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub(super) nodes: Vec<Node>,
    pub(super) output: NodeId,
    pub(super) input_channels: usize,
    pub(super) params: ParamStore,
    /// Index of the last node reading each node's output.
    pub(super) last_use: Vec<usize>,
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    Moments { mean: Vec<f32>, var: Vec<f32>, inv_std: Vec<f32> },
    Argmax(Vec<u32>),
}

/// Activations recorded by [`Graph::forward_train`] for the backward pass.
#[derive(Debug)]
pub struct Tape {
    values: Vec<Option<Tensor>>,
    aux: Vec<Aux>,
}

fn geom(x: [usize; 3], win: &super::Window, name: &str) -> Result<Geom> {
    Geom::new(x[0], x[1], x[2], win)
        .ok_or_else(|| Error::shape(format!("input of {name} at least {}x{}", win.kh, win.kw), format!("{}x{}", x[0], x[1])))
}

fn hwc(t: &Tensor) -> [usize; 3] {
    let s = t.shape();
    [s[1], s[2], s[3]]
}

impl Graph {
    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    /// Propagates `(h, w, c)` through every node without touching data.
    pub fn shape_trace(&self, height: usize, width: usize) -> Result<Vec<[usize; 3]>> {
        let mut shapes: Vec<[usize; 3]> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let ins: Vec<[usize; 3]> = node.inputs.iter().map(|&i| shapes[i]).collect();
            let s = match &node.op {
                Op::Input => [height, width, self.input_channels],
                Op::ChannelAffine { .. } | Op::Relu | Op::Sigmoid | Op::BatchNorm { .. } => ins[0],
                Op::ZeroPad { top, bottom, left, right } => [ins[0][0] + top + bottom, ins[0][1] + left + right, ins[0][2]],
                Op::Conv { window, cout, .. } => {
                    let g = geom(ins[0], window, &node.name)?;
                    [g.oh, g.ow, *cout]
                }
                Op::DepthwiseConv { window, .. } | Op::MaxPool(window) | Op::AvgPool(window) => {
                    let g = geom(ins[0], window, &node.name)?;
                    [g.oh, g.ow, ins[0][2]]
                }
                Op::GlobalAvgPool => [1, 1, ins[0][2]],
                Op::Add => {
                    if ins[0] != ins[1] {
                        return Err(Error::shape(format!("{:?} at {}", ins[0], node.name), format!("{:?}", ins[1])));
                    }
                    ins[0]
                }
                Op::ChannelMul => {
                    if ins[1] != [1, 1, ins[0][2]] {
                        return Err(Error::shape(format!("[1, 1, {}] at {}", ins[0][2], node.name), format!("{:?}", ins[1])));
                    }
                    ins[0]
                }
                Op::Concat => {
                    let (h, w) = (ins[0][0], ins[0][1]);
                    if ins.iter().any(|s| s[0] != h || s[1] != w) {
                        return Err(Error::shape(format!("equal spatial sizes at {}", node.name), format!("{ins:?}")));
                    }
                    [h, w, ins.iter().map(|s| s[2]).sum()]
                }
            };
            shapes.push(s);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self, height: usize, width: usize) -> Result<[usize; 3]> {
        Ok(self.shape_trace(height, width)?[self.output])
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if s[3] != self.input_channels || s[0] == 0 {
            return Err(Error::shape(format!("[n>0, h, w, {}]", self.input_channels), format!("{s:?}")));
        }
        self.shape_trace(s[1], s[2]).map(|_| ())
    }

    /// Inference pass: batch norm uses running statistics, intermediate
    /// activations are released as soon as their last consumer has run.
    pub fn forward_infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (idx, node) in self.nodes.iter().enumerate() {
            let out = if let Op::Input = node.op {
                x.clone()
            } else {
                let ins: Vec<&Tensor> = node.inputs.iter().map(|&i| values[i].as_ref().expect("topological order")).collect();
                let (out, _) = eval(node, &ins, &self.params, false)?;
                out
            };
            values[idx] = Some(out);
            for &i in &node.inputs {
                if self.last_use[i] == idx && i != self.output {
                    values[i] = None;
                }
            }
        }
        Ok(values[self.output].take().expect("output computed"))
    }

    /// Training pass: batch norm normalizes with batch statistics and updates
    /// its running averages. Every activation is kept for [`Graph::backward`].
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, Tape)> {
        self.check_input(x)?;
        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut aux = Vec::with_capacity(self.nodes.len());
        for (idx, node) in self.nodes.iter().enumerate() {
            let (out, a) = if let Op::Input = node.op {
                (x.clone(), Aux::None)
            } else {
                let ins: Vec<&Tensor> = node.inputs.iter().map(|&i| values[i].as_ref().expect("topological order")).collect();
                let (out, a) = eval(node, &ins, &self.params, true)?;
                if let (Op::BatchNorm { mean: m, var: v, momentum, .. }, Aux::Moments { mean, var, .. }) = (&node.op, &a) {
                    let mom = *momentum;
                    for (r, b) in self.params.buffers[m.0].value.iter_mut().zip(mean) {
                        *r = *r * mom + b * (1.0 - mom);
                    }
                    for (r, b) in self.params.buffers[v.0].value.iter_mut().zip(var) {
                        *r = *r * mom + b * (1.0 - mom);
                    }
                }
                (out, a)
            };
            values[idx] = Some(out);
            aux.push(a);
        }
        let out = values[self.output].clone().expect("output computed");
        Ok((out, Tape { values, aux }))
    }

    /// Accumulates parameter gradients for `d_output` into the store and
    /// returns the gradient with respect to the graph input.
    pub fn backward(&mut self, tape: Tape, d_output: Tensor) -> Result<Tensor> {
        let Tape { mut values, aux } = tape;
        let out_shape = values[self.output].as_ref().map(Tensor::shape);
        if out_shape != Some(d_output.shape()) {
            return Err(Error::shape(format!("{out_shape:?}"), format!("{:?}", d_output.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[self.output] = Some(d_output);
        for idx in (1..self.nodes.len()).rev() {
            let Some(dy) = grads[idx].take() else {
                values[idx] = None;
                continue;
            };
            let node = &self.nodes[idx];
            let y = values[idx].take().expect("recorded");
            let ins: Vec<&Tensor> = node.inputs.iter().map(|&i| values[i].as_ref().expect("recorded")).collect();
            let dins = backward_node(node, &ins, &y, dy, &aux[idx], &mut self.params);
            for (&i, d) in node.inputs.iter().zip(dins) {
                match &mut grads[i] {
                    Some(g) => g.add_assign(&d),
                    slot => *slot = Some(d),
                }
            }
        }
        Ok(grads[0].take().unwrap_or_else(|| Tensor::zeros(values[0].as_ref().expect("input").shape())))
    }
}

fn eval(node: &Node, ins: &[&Tensor], params: &ParamStore, train: bool) -> Result<(Tensor, Aux)> {
    let x = ins[0];
    let out = match &node.op {
        Op::Input => unreachable!("input handled by caller"),
        Op::ChannelAffine { scale, shift } => kernels::affine_channels(x, scale, shift),
        Op::ZeroPad { top, bottom, left, right } => {
            let [n, h, w, c] = x.shape();
            let (oh, ow) = (h + top + bottom, w + left + right);
            let mut out = Tensor::zeros([n, oh, ow, c]);
            for i in 0..n {
                let xs = x.sample(i);
                for yy in 0..h {
                    let dst = (i * oh * ow + (yy + top) * ow + left) * c;
                    out.data_mut()[dst..dst + w * c].copy_from_slice(&xs[yy * w * c..(yy + 1) * w * c]);
                }
            }
            out
        }
        Op::Conv { kernel, bias, window, cout } => {
            let g = geom(hwc(x), window, &node.name)?;
            kernels::conv_forward(x, &g, params.param(*kernel), bias.map(|b| params.param(b)), *cout)
        }
        Op::DepthwiseConv { kernel, window } => {
            let g = geom(hwc(x), window, &node.name)?;
            kernels::depthwise_forward(x, &g, params.param(*kernel))
        }
        Op::BatchNorm { gamma, beta, mean, var, eps, .. } => {
            let (m, v) = if train {
                kernels::channel_moments(x)
            } else {
                (params.buffer(*mean).to_vec(), params.buffer(*var).to_vec())
            };
            let inv_std: Vec<f32> = v.iter().map(|v| 1.0 / libm::sqrtf(v + eps)).collect();
            let ones;
            let g = match gamma {
                Some(g) => params.param(*g),
                None => {
                    ones = vec![1.0; m.len()];
                    &ones
                }
            };
            let scale: Vec<f32> = g.iter().zip(&inv_std).map(|(g, s)| g * s).collect();
            let shift: Vec<f32> = params
                .param(*beta)
                .iter()
                .zip(&m)
                .zip(&scale)
                .map(|((b, m), s)| b - m * s)
                .collect();
            let out = kernels::affine_channels(x, &scale, &shift);
            let aux = if train { Aux::Moments { mean: m, var: v, inv_std } } else { Aux::None };
            return Ok((out, aux));
        }
        Op::Relu => {
            let mut out = x.clone();
            out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            out
        }
        Op::Sigmoid => {
            let mut out = x.clone();
            out.data_mut().iter_mut().for_each(|v| *v = 1.0 / (1.0 + libm::expf(-*v)));
            out
        }
        Op::MaxPool(window) => {
            let g = geom(hwc(x), window, &node.name)?;
            let (out, arg) = kernels::max_pool_forward(x, &g);
            return Ok((out, if train { Aux::Argmax(arg) } else { Aux::None }));
        }
        Op::AvgPool(window) => {
            let g = geom(hwc(x), window, &node.name)?;
            kernels::avg_pool_forward(x, &g)
        }
        Op::GlobalAvgPool => {
            let [n, h, w, c] = x.shape();
            let mut out = Tensor::zeros([n, 1, 1, c]);
            let inv = 1.0 / (h * w) as f64;
            for i in 0..n {
                let mut acc = vec![0.0f64; c];
                for px in x.sample(i).chunks_exact(c) {
                    acc.iter_mut().zip(px).for_each(|(a, v)| *a += *v as f64);
                }
                for (o, a) in out.data_mut()[i * c..(i + 1) * c].iter_mut().zip(acc) {
                    *o = (a * inv) as f32;
                }
            }
            out
        }
        Op::Add => {
            let mut out = x.clone();
            out.add_assign(ins[1]);
            out
        }
        Op::ChannelMul => {
            let s = ins[1];
            let [n, _, _, c] = x.shape();
            let mut out = x.clone();
            let len = x.sample_len();
            for i in 0..n {
                let sc = s.sample(i);
                for px in out.data_mut()[i * len..(i + 1) * len].chunks_exact_mut(c) {
                    px.iter_mut().zip(sc).for_each(|(v, s)| *v *= s);
                }
            }
            out
        }
        Op::Concat => {
            let [n, h, w, _] = x.shape();
            let widths: Vec<usize> = ins.iter().map(|t| t.shape()[3]).collect();
            let c: usize = widths.iter().sum();
            let mut out = Tensor::zeros([n, h, w, c]);
            let mut off = 0;
            for (t, &cw) in ins.iter().zip(&widths) {
                for (dst, src) in out.data_mut().chunks_exact_mut(c).zip(t.data().chunks_exact(cw)) {
                    dst[off..off + cw].copy_from_slice(src);
                }
                off += cw;
            }
            out
        }
    };
    Ok((out, Aux::None))
}

fn take_grad(params: &mut ParamStore, id: super::ParamId) -> Vec<f32> {
    params.take_grad(id)
}

fn backward_node(node: &Node, ins: &[&Tensor], y: &Tensor, dy: Tensor, aux: &Aux, params: &mut ParamStore) -> Vec<Tensor> {
    let x = ins[0];
    match &node.op {
        Op::Input => Vec::new(),
        Op::ChannelAffine { scale, .. } => {
            let zero = vec![0.0; scale.len()];
            vec![kernels::affine_channels(&dy, scale, &zero)]
        }
        Op::ZeroPad { top, left, .. } => {
            let [n, h, w, c] = x.shape();
            let ow = dy.shape()[2];
            let oh = dy.shape()[1];
            let mut dx = Tensor::zeros(x.shape());
            for i in 0..n {
                for yy in 0..h {
                    let src = (i * oh * ow + (yy + top) * ow + left) * c;
                    let dst = (i * h + yy) * w * c;
                    dx.data_mut()[dst..dst + w * c].copy_from_slice(&dy.data()[src..src + w * c]);
                }
            }
            vec![dx]
        }
        Op::Conv { kernel, bias, window, cout } => {
            let g = Geom::new(x.shape()[1], x.shape()[2], x.shape()[3], window).expect("checked in forward");
            let mut dk = take_grad(params, *kernel);
            let mut db = bias.map(|b| take_grad(params, b));
            let dx = kernels::conv_backward(x, &dy, &g, params.param(*kernel), &mut dk, db.as_deref_mut(), *cout);
            params.put_grad(*kernel, dk);
            if let (Some(b), Some(db)) = (bias, db) {
                params.put_grad(*b, db);
            }
            vec![dx]
        }
        Op::DepthwiseConv { kernel, window } => {
            let g = Geom::new(x.shape()[1], x.shape()[2], x.shape()[3], window).expect("checked in forward");
            let mut dk = take_grad(params, *kernel);
            let dx = kernels::depthwise_backward(x, &dy, &g, params.param(*kernel), &mut dk);
            params.put_grad(*kernel, dk);
            vec![dx]
        }
        Op::BatchNorm { gamma, beta, .. } => {
            let Aux::Moments { mean, inv_std, .. } = aux else {
                unreachable!("batch norm tape without moments")
            };
            let mut dgamma = gamma.map(|g| take_grad(params, g));
            let mut dbeta = take_grad(params, *beta);
            let gvals = gamma.map(|g| params.param(g).to_vec());
            let dx = kernels::batch_norm_backward(x, &dy, mean, inv_std, gvals.as_deref(), dgamma.as_deref_mut(), &mut dbeta);
            params.put_grad(*beta, dbeta);
            if let (Some(g), Some(dg)) = (gamma, dgamma) {
                params.put_grad(*g, dg);
            }
            vec![dx]
        }
        Op::Relu => {
            let mut dx = dy;
            dx.data_mut().iter_mut().zip(y.data()).for_each(|(d, &v)| {
                if v <= 0.0 {
                    *d = 0.0
                }
            });
            vec![dx]
        }
        Op::Sigmoid => {
            let mut dx = dy;
            dx.data_mut().iter_mut().zip(y.data()).for_each(|(d, &s)| *d *= s * (1.0 - s));
            vec![dx]
        }
        Op::MaxPool(_) => {
            let Aux::Argmax(arg) = aux else { unreachable!("max pool tape without argmax") };
            vec![kernels::max_pool_backward(x.shape(), &dy, arg)]
        }
        Op::AvgPool(window) => {
            let g = Geom::new(x.shape()[1], x.shape()[2], x.shape()[3], window).expect("checked in forward");
            vec![kernels::avg_pool_backward(x.shape(), &dy, &g)]
        }
        Op::GlobalAvgPool => {
            let [n, h, w, c] = x.shape();
            let inv = 1.0 / (h * w) as f32;
            let mut dx = Tensor::zeros(x.shape());
            let len = x.sample_len();
            for i in 0..n {
                let d = dy.sample(i);
                for px in dx.data_mut()[i * len..(i + 1) * len].chunks_exact_mut(c) {
                    px.iter_mut().zip(d).for_each(|(p, d)| *p = d * inv);
                }
            }
            vec![dx]
        }
        Op::Add => vec![dy.clone(), dy],
        Op::ChannelMul => {
            let s = ins[1];
            let [n, _, _, c] = x.shape();
            let len = x.sample_len();
            let mut dx = dy.clone();
            let mut ds = Tensor::zeros(s.shape());
            for i in 0..n {
                let sc = s.sample(i);
                let xs = x.sample(i);
                let dys = &dy.data()[i * len..(i + 1) * len];
                for (j, px) in dx.data_mut()[i * len..(i + 1) * len].chunks_exact_mut(c).enumerate() {
                    px.iter_mut().zip(sc).for_each(|(d, s)| *d *= s);
                    let dsi = &mut ds.data_mut()[i * c..(i + 1) * c];
                    for ch in 0..c {
                        dsi[ch] += dys[j * c + ch] * xs[j * c + ch];
                    }
                }
            }
            vec![dx, ds]
        }
        Op::Concat => {
            let c = dy.shape()[3];
            let mut off = 0;
            ins.iter()
                .map(|t| {
                    let cw = t.shape()[3];
                    let mut d = Tensor::zeros(t.shape());
                    for (dst, src) in d.data_mut().chunks_exact_mut(cw).zip(dy.data().chunks_exact(c)) {
                        dst.copy_from_slice(&src[off..off + cw]);
                    }
                    off += cw;
                    d
                })
                .collect()
        }
    }
}

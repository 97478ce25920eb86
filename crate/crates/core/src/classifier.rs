//! Backbone plus head, with phase-dependent trainability.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backbone::Backbone;
use crate::head::{self, HeadParams};
use crate::nn::ParamStore;
use crate::optim::{Adam, AdamConfig, AdamSlot};
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Which parameters receive updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Backbone frozen and run in inference mode; only the head trains.
    HeadOnly,
    /// Every parameter trains; backbone batch norm uses batch statistics.
    FullFinetune,
}

/// Loss and accuracy tallies of one optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub correct: usize,
    pub count: usize,
}

/// Frozen copy of every value that training can change.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierState {
    pub backbone: ParamStore,
    pub head: HeadParams,
}

#[derive(Debug, Clone)]
struct OptimizerState {
    adam: Adam,
    gamma: AdamSlot<f64>,
    beta: AdamSlot<f64>,
    weights: AdamSlot<f64>,
    bias: AdamSlot<f64>,
    backbone: Vec<AdamSlot<f32>>,
}

impl OptimizerState {
    fn new(config: AdamConfig, head: &HeadParams) -> Self {
        Self {
            adam: Adam::new(config),
            gamma: AdamSlot::new(head.depth),
            beta: AdamSlot::new(head.depth),
            weights: AdamSlot::new(head.weights.len()),
            bias: AdamSlot::new(head.classes),
            backbone: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Classifier {
    backbone: Backbone,
    head: HeadParams,
    phase: Phase,
    input_size: usize,
    optimizer: OptimizerState,
}

impl Classifier {
    /// Attaches a fresh head sized to the backbone's feature depth. Starts in
    /// [`Phase::HeadOnly`].
    pub fn new(backbone: Backbone, classes: usize, dropout_rate: f64, input_size: usize, optimizer: AdamConfig, rng: &mut SeededRng) -> Result<Self> {
        let [fh, fw, depth] = backbone.feature_shape(input_size)?;
        if fh == 0 || fw == 0 {
            return Err(Error::Structural(format!("{} yields an empty feature map at {input_size}", backbone.name())));
        }
        let head = HeadParams::new(depth, classes, dropout_rate, rng)?;
        let optimizer = OptimizerState::new(optimizer, &head);
        Ok(Self {
            backbone,
            head,
            phase: Phase::HeadOnly,
            input_size,
            optimizer,
        })
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn head(&self) -> &HeadParams {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut HeadParams {
        &mut self.head
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn classes(&self) -> usize {
        self.head.classes
    }

    /// Switches phase. A change starts a fresh optimizer (moment estimates
    /// and step count reset).
    pub fn set_trainable_phase(&mut self, phase: Phase) {
        if phase != self.phase {
            self.phase = phase;
            self.optimizer = OptimizerState::new(self.optimizer.adam.config, &self.head);
            if phase == Phase::HeadOnly {
                self.backbone.graph_mut().params_mut().drop_grads();
            }
        }
    }

    /// Replaces the optimizer settings and resets its state.
    pub fn set_optimizer(&mut self, config: AdamConfig) {
        self.optimizer = OptimizerState::new(config, &self.head);
    }

    /// Scalars that the current phase updates.
    pub fn trainable_count(&self) -> usize {
        match self.phase {
            Phase::HeadOnly => self.head.trainable_count(),
            Phase::FullFinetune => self.head.trainable_count() + self.backbone.graph().params().trainable_count(),
        }
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let [n, h, w, c] = batch.shape();
        let s = self.input_size;
        if n == 0 || h != s || w != s || c != 3 {
            return Err(Error::shape(format!("[n>0, {s}, {s}, 3]"), format!("{:?}", batch.shape())));
        }
        Ok(())
    }

    /// Inference-mode feature maps `[n, h, w, d]`.
    pub fn extract_features(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        self.backbone.extract(batch)
    }

    /// Class logits, row-major `n x classes`, in inference mode.
    pub fn predict_logits(&self, batch: &Tensor) -> Result<Vec<f64>> {
        let features = self.extract_features(batch)?;
        self.head.forward_infer(&global_average_pool(&features))
    }

    /// Softmax probabilities, row-major `n x classes`.
    pub fn predict_proba(&self, batch: &Tensor) -> Result<Vec<f64>> {
        Ok(head::softmax_rows(&self.predict_logits(batch)?, self.head.classes))
    }

    /// Arg-max class ids.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        Ok(self.predict_logits(batch)?.chunks(self.head.classes).map(head::argmax).collect())
    }

    /// One optimization step on a labelled batch at learning rate `lr`.
    pub fn train_step(&mut self, batch: &Tensor, labels: &[usize], lr: f64, rng: &mut SeededRng) -> Result<StepOutcome> {
        self.check_batch(batch)?;
        if labels.len() != batch.batch() {
            return Err(Error::shape(format!("{} labels", batch.batch()), format!("{}", labels.len())));
        }
        let classes = self.head.classes;
        let full = self.phase == Phase::FullFinetune;
        let (features, tape) = if full {
            let (f, t) = self.backbone.graph_mut().forward_train(batch)?;
            (f, Some(t))
        } else {
            (self.backbone.extract(batch)?, None)
        };
        let pooled = global_average_pool(&features);
        let (logits, cache) = self.head.forward_train(&pooled, rng)?;
        let (loss, d_logits) = head::softmax_cross_entropy(&logits, labels, classes)?;
        let correct = logits
            .chunks(classes)
            .zip(labels)
            .filter(|(row, &y)| head::argmax(row) == y)
            .count();
        if !loss.is_finite() {
            return Ok(StepOutcome { loss, correct, count: labels.len() });
        }
        let (grads, d_pooled) = self.head.backward(&cache, &d_logits)?;

        let opt = &mut self.optimizer;
        opt.adam.begin_step();
        if let Some(tape) = tape {
            let [n, h, w, d] = features.shape();
            let area = (h * w) as f64;
            let mut d_features = Tensor::zeros([n, h, w, d]);
            for (i, v) in d_features.data_mut().iter_mut().enumerate() {
                let row = i / (h * w * d);
                *v = (d_pooled[row * d + i % d] / area) as f32;
            }
            let graph = self.backbone.graph_mut();
            graph.params_mut().zero_grads();
            graph.backward(tape, d_features)?;
            let store = graph.params_mut();
            if opt.backbone.len() != store.params.len() {
                opt.backbone = store.params.iter().map(|p| AdamSlot::new(p.value.len())).collect();
            }
            for ((p, g), slot) in store.params_and_grads().zip(&mut opt.backbone) {
                opt.adam.update(slot, p, g, lr);
            }
        }
        let head = &mut self.head;
        opt.adam.update(&mut opt.gamma, &mut head.gamma, &grads.gamma, lr);
        opt.adam.update(&mut opt.beta, &mut head.beta, &grads.beta, lr);
        opt.adam.update(&mut opt.weights, &mut head.weights, &grads.weights, lr);
        opt.adam.update(&mut opt.bias, &mut head.bias, &grads.bias, lr);
        Ok(StepOutcome { loss, correct, count: labels.len() })
    }

    pub fn snapshot(&self) -> ClassifierState {
        ClassifierState {
            backbone: self.backbone.graph().params().clone(),
            head: self.head.clone(),
        }
    }

    /// Restores values captured by [`Classifier::snapshot`].
    pub fn restore(&mut self, state: &ClassifierState) -> Result<()> {
        let current = self.backbone.graph().params();
        let same_layout = current.params.len() == state.backbone.params.len()
            && current.buffers.len() == state.backbone.buffers.len()
            && current.params.iter().zip(&state.backbone.params).all(|(a, b)| a.shape == b.shape);
        if !same_layout || state.head.depth != self.head.depth || state.head.classes != self.head.classes {
            return Err(Error::State(format!("snapshot does not match {} with {} classes", self.backbone.name(), self.head.classes)));
        }
        let store = self.backbone.graph_mut().params_mut();
        for (p, s) in store.params.iter_mut().zip(&state.backbone.params) {
            p.value.clone_from(&s.value);
        }
        for (b, s) in store.buffers.iter_mut().zip(&state.backbone.buffers) {
            b.value.clone_from(&s.value);
        }
        self.head = state.head.clone();
        Ok(())
    }
}

/// Spatial mean of `[n, h, w, d]` features, row-major `n x d` in `f64`.
pub fn global_average_pool(features: &Tensor) -> Vec<f64> {
    let [n, h, w, d] = features.shape();
    let area = (h * w) as f64;
    let mut out = alloc::vec![0.0f64; n * d];
    for i in 0..n {
        let s = features.sample(i);
        let row = &mut out[i * d..(i + 1) * d];
        for px in s.chunks(d) {
            for (o, v) in row.iter_mut().zip(px) {
                *o += *v as f64;
            }
        }
        row.iter_mut().for_each(|v| *v /= area);
    }
    out
}

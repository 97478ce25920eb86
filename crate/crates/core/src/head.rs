//! Classification head: batch normalization, inverted dropout and a dense
//! layer producing class logits. Computed in `f64`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::SeededRng;
use crate::{Error, Result};

pub const HEAD_BN_EPS: f64 = 1e-3;
pub const HEAD_BN_MOMENTUM: f64 = 0.99;

/// Parameters and running statistics of the head. `weights` is row-major
/// `depth x classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub depth: usize,
    pub classes: usize,
    pub dropout_rate: f64,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients of the trainable head parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Values saved by [`HeadParams::forward_train`] for the backward pass.
#[derive(Debug, Clone)]
pub struct HeadCache {
    rows: usize,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    mask: Vec<f64>,
    dropped: Vec<f64>,
}

impl HeadParams {
    /// Glorot-uniform dense weights, zero bias, identity batch norm.
    pub fn new(depth: usize, classes: usize, dropout_rate: f64, rng: &mut SeededRng) -> Result<Self> {
        if depth == 0 || classes < 2 {
            return Err(Error::Config(format!("head needs depth > 0 and at least 2 classes, got {depth} and {classes}")));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Config(format!("dropout_rate must lie in [0, 1), got {dropout_rate}")));
        }
        let limit = libm::sqrt(6.0 / (depth + classes) as f64);
        let weights = (0..depth * classes).map(|_| rng.random_range(-limit..limit)).collect();
        Ok(Self {
            depth,
            classes,
            dropout_rate,
            gamma: vec![1.0; depth],
            beta: vec![0.0; depth],
            running_mean: vec![0.0; depth],
            running_var: vec![1.0; depth],
            weights,
            bias: vec![0.0; classes],
        })
    }

    /// Checks that every vector matches `depth` and `classes`, the dropout
    /// rate lies in `[0, 1)` and running variances are positive.
    pub fn validate(&self) -> Result<()> {
        let (d, c) = (self.depth, self.classes);
        let sizes_ok = self.gamma.len() == d
            && self.beta.len() == d
            && self.running_mean.len() == d
            && self.running_var.len() == d
            && self.weights.len() == d * c
            && self.bias.len() == c;
        if !sizes_ok {
            return Err(Error::shape(format!("head vectors sized for d={d}, C={c}"), "inconsistent lengths"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate)));
        }
        if self.running_var.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Numeric("head running variance must be positive".into()));
        }
        Ok(())
    }

    /// Trainable scalar count.
    pub fn trainable_count(&self) -> usize {
        2 * self.depth + self.depth * self.classes + self.classes
    }

    /// Trainable plus running-statistic scalars.
    pub fn total_count(&self) -> usize {
        self.trainable_count() + 2 * self.depth
    }

    fn check(&self, x: &[f64]) -> Result<usize> {
        if x.len() % self.depth != 0 || x.is_empty() {
            return Err(Error::shape(format!("rows of {}", self.depth), format!("{} values", x.len())));
        }
        Ok(x.len() / self.depth)
    }

    fn dense(&self, h: &[f64], rows: usize) -> Vec<f64> {
        let (d, c) = (self.depth, self.classes);
        let mut out = Vec::with_capacity(rows * c);
        for r in 0..rows {
            let hr = &h[r * d..(r + 1) * d];
            out.extend((0..c).map(|k| self.bias[k] + hr.iter().enumerate().map(|(i, v)| v * self.weights[i * c + k]).sum::<f64>()));
        }
        out
    }

    /// Inference logits: running statistics, no dropout.
    pub fn forward_infer(&self, x: &[f64]) -> Result<Vec<f64>> {
        let rows = self.check(x)?;
        let d = self.depth;
        let mut h = x.to_vec();
        for (i, v) in h.iter_mut().enumerate() {
            let j = i % d;
            *v = self.gamma[j] * (*v - self.running_mean[j]) / libm::sqrt(self.running_var[j] + HEAD_BN_EPS) + self.beta[j];
        }
        Ok(self.dense(&h, rows))
    }

    /// Training logits: batch statistics (running averages updated) and
    /// inverted dropout drawn from `rng`.
    pub fn forward_train(&mut self, x: &[f64], rng: &mut SeededRng) -> Result<(Vec<f64>, HeadCache)> {
        let rows = self.check(x)?;
        let d = self.depth;
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        for r in 0..rows {
            for j in 0..d {
                mean[j] += x[r * d + j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        for r in 0..rows {
            for j in 0..d {
                let t = x[r * d + j] - mean[j];
                var[j] += t * t;
            }
        }
        var.iter_mut().for_each(|v| *v /= rows as f64);
        for j in 0..d {
            self.running_mean[j] = self.running_mean[j] * HEAD_BN_MOMENTUM + mean[j] * (1.0 - HEAD_BN_MOMENTUM);
            self.running_var[j] = self.running_var[j] * HEAD_BN_MOMENTUM + var[j] * (1.0 - HEAD_BN_MOMENTUM);
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + HEAD_BN_EPS)).collect();
        let xhat: Vec<f64> = x.iter().enumerate().map(|(i, v)| (v - mean[i % d]) * inv_std[i % d]).collect();
        let normed: Vec<f64> = xhat.iter().enumerate().map(|(i, v)| self.gamma[i % d] * v + self.beta[i % d]).collect();
        let (dropped, mask) = dropout(&normed, self.dropout_rate, rng);
        let logits = self.dense(&dropped, rows);
        Ok((logits, HeadCache { rows, xhat, inv_std, mask, dropped }))
    }

    /// Gradients for `d_logits` (row-major `rows x classes`); also returns
    /// the gradient with respect to the head input.
    pub fn backward(&self, cache: &HeadCache, d_logits: &[f64]) -> Result<(HeadGrads, Vec<f64>)> {
        let (d, c, rows) = (self.depth, self.classes, cache.rows);
        if d_logits.len() != rows * c {
            return Err(Error::shape(format!("{} logit gradients", rows * c), format!("{}", d_logits.len())));
        }
        let mut gw = vec![0.0; d * c];
        let mut gb = vec![0.0; c];
        let mut d_dropped = vec![0.0; rows * d];
        for r in 0..rows {
            let g = &d_logits[r * c..(r + 1) * c];
            let h = &cache.dropped[r * d..(r + 1) * d];
            for k in 0..c {
                gb[k] += g[k];
            }
            for i in 0..d {
                let mut acc = 0.0;
                for k in 0..c {
                    gw[i * c + k] += h[i] * g[k];
                    acc += self.weights[i * c + k] * g[k];
                }
                d_dropped[r * d + i] = acc;
            }
        }
        let d_normed: Vec<f64> = d_dropped.iter().zip(&cache.mask).map(|(g, m)| g * m).collect();
        let mut ggamma = vec![0.0; d];
        let mut gbeta = vec![0.0; d];
        for (i, g) in d_normed.iter().enumerate() {
            ggamma[i % d] += g * cache.xhat[i];
            gbeta[i % d] += g;
        }
        let n = rows as f64;
        let mut dx = vec![0.0; rows * d];
        for (i, v) in dx.iter_mut().enumerate() {
            let j = i % d;
            let dxhat = d_normed[i] * self.gamma[j];
            *v = cache.inv_std[j] / n * (n * dxhat - self.gamma[j] * gbeta[j] - cache.xhat[i] * self.gamma[j] * ggamma[j]);
        }
        Ok((HeadGrads { gamma: ggamma, beta: gbeta, weights: gw, bias: gb }, dx))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMode {
    Train,
    Infer,
}

/// Logits for a single pooled vector. Train mode needs `draw` for dropout
/// and normalizes with the statistics of this one-row batch.
pub fn head_forward(pooled: &[f64], head: &mut HeadParams, mode: HeadMode, draw: Option<&mut SeededRng>) -> Result<Vec<f64>> {
    if pooled.len() != head.depth {
        return Err(Error::shape(format!("pooled vector of length {}", head.depth), format!("{}", pooled.len())));
    }
    match (mode, draw) {
        (HeadMode::Infer, _) => head.forward_infer(pooled),
        (HeadMode::Train, Some(rng)) => Ok(head.forward_train(pooled, rng)?.0),
        (HeadMode::Train, None) => Err(Error::State("train-mode head forward needs a random state".into())),
    }
}

/// Inverted dropout: each element is zeroed with probability `rate` and the
/// survivors are scaled by `1 / (1 - rate)`. Returns the output and the
/// per-element multiplier.
pub fn dropout(x: &[f64], rate: f64, rng: &mut SeededRng) -> (Vec<f64>, Vec<f64>) {
    if rate <= 0.0 {
        return (x.to_vec(), vec![1.0; x.len()]);
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = x.iter().map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
    (x.iter().zip(&mask).map(|(v, m)| v * m).collect(), mask)
}

/// Numerically stable softmax of one logit row.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() || logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numeric(format!("softmax needs finite logits, got {logits:?}")));
    }
    Ok(softmax_unchecked(logits))
}

fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| libm::exp(z - max)).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// `ln(sum(exp(z)))` without overflow.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + libm::log(logits.iter().map(|z| libm::exp(z - max)).sum::<f64>())
}

/// Row-wise softmax of a `rows x classes` matrix.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    logits.chunks(classes).flat_map(softmax_unchecked).collect()
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean sparse categorical cross-entropy of `rows x classes` logits and the
/// gradient of that mean with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> Result<(f64, Vec<f64>)> {
    if logits.len() != labels.len() * classes || labels.is_empty() {
        return Err(Error::shape(format!("{} logits", labels.len() * classes), format!("{}", logits.len())));
    }
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &y) in logits.chunks(classes).zip(labels) {
        if y >= classes {
            return Err(Error::Label(format!("label {y} outside 0..{classes}")));
        }
        loss += log_sum_exp(row) - row[y];
        let p = softmax_unchecked(row);
        grad.extend(p.iter().enumerate().map(|(k, pk)| (pk - if k == y { 1.0 } else { 0.0 }) / n));
    }
    Ok((loss / n, grad))
}

//! Dense feed-forward classifier with hand-written backpropagation.
//!
//! Parameters live in one flat `Vec<f64>`. Each layer contributes its weight
//! matrix (`out x in`, row-major) followed by its bias vector.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    layer_sizes: Vec<usize>,
    activation: Activation,
}

#[derive(Debug, Clone, Copy)]
struct LayerShape {
    inputs: usize,
    outputs: usize,
    offset: usize,
}

impl LayerShape {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.inputs * self.outputs
    }

    fn biases(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.inputs * self.outputs;
        start..start + self.outputs
    }
}

impl ModelSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidSpec("need at least input and output layers".into()));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidSpec("layer sizes must be positive".into()));
        }
        if *layer_sizes.last().unwrap() < 2 {
            return Err(Error::InvalidSpec("need at least 2 output classes".into()));
        }
        Ok(Self {
            layer_sizes,
            activation,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn layers(&self) -> Vec<LayerShape> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let shape = LayerShape {
                    inputs: w[0],
                    outputs: w[1],
                    offset,
                };
                offset += w[0] * w[1] + w[1];
                shape
            })
            .collect()
    }
}

/// Flat model parameters tied to the spec that gives them shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    spec: Arc<ModelSpec>,
}

impl ParamVector {
    pub fn new(spec: Arc<ModelSpec>, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.n_params() {
            return Err(Error::DimensionMismatch {
                expected: spec.n_params(),
                found: values.len(),
            });
        }
        Ok(Self { values, spec })
    }

    pub fn zeros(spec: Arc<ModelSpec>) -> Self {
        let n = spec.n_params();
        Self {
            values: vec![0.0; n],
            spec,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn spec(&self) -> &Arc<ModelSpec> {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_spec(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.spec, &other.spec) || *self.spec == *other.spec
    }

    /// Copy of `self` with new values, keeping the spec.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(Arc::clone(&self.spec), values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Xavier-uniform weights, zero biases.
pub fn init_params(spec: &Arc<ModelSpec>, seed: u64) -> ParamVector {
    let mut rng = rng::seeded(seed);
    let mut values = vec![0.0; spec.n_params()];
    for layer in spec.layers() {
        let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
        for w in &mut values[layer.weights()] {
            *w = rng.random_range(-limit..limit);
        }
    }
    ParamVector {
        values,
        spec: Arc::clone(spec),
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Per-layer pre-activations and outputs for one sample. `acts[0]` is the input.
struct Trace {
    pre: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
}

fn forward_trace(params: &ParamVector, x: &[f64]) -> Trace {
    let spec = &params.spec;
    let layers = spec.layers();
    let mut pre = Vec::with_capacity(layers.len());
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(x.to_vec());
    for (l, layer) in layers.iter().enumerate() {
        let input = &acts[l];
        let w = &params.values[layer.weights()];
        let b = &params.values[layer.biases()];
        let z: Vec<f64> = (0..layer.outputs)
            .map(|o| {
                let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                b[o] + row.iter().zip(input).map(|(wi, xi)| wi * xi).sum::<f64>()
            })
            .collect();
        let a = if l + 1 == layers.len() {
            z.clone()
        } else {
            z.iter().map(|&v| spec.activation.apply(v)).collect()
        };
        pre.push(z);
        acts.push(a);
    }
    Trace { pre, acts }
}

fn check_input(params: &ParamVector, x: &[f64]) -> Result<()> {
    let d = params.spec.input_dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: x.len(),
        });
    }
    Ok(())
}

pub fn logits(params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    check_input(params, x)?;
    let mut trace = forward_trace(params, x);
    Ok(trace.acts.pop().unwrap())
}

pub fn predict_proba(params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    Ok(softmax(&logits(params, x)?))
}

fn check_batch(params: &ParamVector, data: &LabeledDataset) -> Result<()> {
    if data.n_features() != params.spec.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.spec.input_dim(),
            found: data.n_features(),
        });
    }
    if data.n_classes() > params.spec.n_classes() {
        return Err(Error::DimensionMismatch {
            expected: params.spec.n_classes(),
            found: data.n_classes(),
        });
    }
    Ok(())
}

/// Accumulates the summed cross-entropy gradient of `indices` into `grad`
/// and returns the summed loss.
fn accumulate_ce(params: &ParamVector, data: &LabeledDataset, indices: &[usize], grad: &mut [f64]) -> f64 {
    let spec = &params.spec;
    let layers = spec.layers();
    let mut loss = 0.0;
    for &i in indices {
        let trace = forward_trace(params, data.row(i));
        let out = trace.acts.last().unwrap();
        let y = data.label(i);
        loss += log_sum_exp(out) - out[y];

        let mut delta = softmax(out);
        delta[y] -= 1.0;
        for l in (0..layers.len()).rev() {
            let layer = layers[l];
            let input = &trace.acts[l];
            let gw = &mut grad[layer.weights()];
            for (o, d) in delta.iter().enumerate() {
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for (g, xi) in row.iter_mut().zip(input) {
                    *g += d * xi;
                }
            }
            for (g, d) in grad[layer.biases()].iter_mut().zip(&delta) {
                *g += d;
            }
            if l == 0 {
                break;
            }
            let w = &params.values[layer.weights()];
            let mut back = vec![0.0; layer.inputs];
            for (o, d) in delta.iter().enumerate() {
                let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                for (b, wi) in back.iter_mut().zip(row) {
                    *b += d * wi;
                }
            }
            let z = &trace.pre[l - 1];
            let a = &trace.acts[l];
            for (k, b) in back.iter_mut().enumerate() {
                *b *= spec.activation.derivative(z[k], a[k]);
            }
            delta = back;
        }
    }
    loss
}

fn batch_loss_and_grad(
    params: &ParamVector,
    data: &LabeledDataset,
    indices: &[usize],
    weight_decay: f64,
    grad: &mut [f64],
) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let n = indices.len() as f64;
    let ce = accumulate_ce(params, data, indices, grad) / n;
    let mut sq = 0.0;
    for (g, theta) in grad.iter_mut().zip(&params.values) {
        *g = *g / n + weight_decay * theta;
        sq += theta * theta;
    }
    ce + 0.5 * weight_decay * sq
}

/// Mean cross-entropy plus `weight_decay / 2 * ||theta||^2`, and its exact gradient.
pub fn loss_and_grad(params: &ParamVector, batch: &LabeledDataset, weight_decay: f64) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(Error::EmptyData("loss_and_grad"));
    }
    check_batch(params, batch)?;
    let indices: Vec<usize> = (0..batch.len()).collect();
    let mut grad = vec![0.0; params.len()];
    let loss = batch_loss_and_grad(params, batch, &indices, weight_decay, &mut grad);
    Ok((loss, params.with_values(grad)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHyper {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl Default for OptimizerHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 32,
            local_epochs: 1,
        }
    }
}

impl OptimizerHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.local_epochs == 0 {
            return bad("local_epochs must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub momentum_buffer: Vec<f64>,
    pub hyper: OptimizerHyper,
}

impl OptimizerState {
    pub fn new(n_params: usize, hyper: OptimizerHyper) -> Self {
        Self {
            momentum_buffer: vec![0.0; n_params],
            hyper,
        }
    }
}

/// Mini-batch SGD with momentum and weight decay over a seeded shuffle.
///
/// The buffer update is `v = momentum * v + g`, then `theta -= lr * v`.
pub fn train_local(
    params: &ParamVector,
    opt: &OptimizerState,
    train: &LabeledDataset,
    seed: u64,
) -> Result<(ParamVector, OptimizerState)> {
    if train.is_empty() {
        return Err(Error::EmptyData("train_local"));
    }
    check_batch(params, train)?;
    opt.hyper.validate()?;
    if opt.momentum_buffer.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            found: opt.momentum_buffer.len(),
        });
    }
    let hyper = opt.hyper;
    let mut theta = params.clone();
    let mut velocity = opt.momentum_buffer.clone();
    let mut grad = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = rng::seeded(seed);

    for _ in 0..hyper.local_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hyper.batch_size) {
            batch_loss_and_grad(&theta, train, batch, hyper.weight_decay, &mut grad);
            for ((t, v), g) in theta.values.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = hyper.momentum * *v + g;
                *t -= hyper.learning_rate * *v;
            }
        }
    }
    Ok((
        theta,
        OptimizerState {
            momentum_buffer: velocity,
            hyper,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(sizes: &[usize]) -> Arc<ModelSpec> {
        Arc::new(ModelSpec::new(sizes.to_vec(), Activation::Relu).unwrap())
    }

    fn toy_batch() -> LabeledDataset {
        LabeledDataset::new(vec![0.5, -1.0, 1.5, 0.25, -0.3, 0.8], vec![0, 1, 1], 2, 2).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::new(vec![3], Activation::Relu).is_err());
        assert!(ModelSpec::new(vec![3, 1], Activation::Relu).is_err());
        assert!(ModelSpec::new(vec![3, 0, 2], Activation::Relu).is_err());
        assert_eq!(spec(&[2, 3, 4]).n_params(), 25);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let s = spec(&[2, 2]);
        let a = init_params(&s, 7);
        assert_eq!(a, init_params(&s, 7));
        assert_ne!(a, init_params(&s, 8));
        assert_eq!(&a.values()[4..], &[0.0, 0.0]);
        let limit = (6.0f64 / 4.0).sqrt();
        assert!(a.values()[..4].iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn zero_model_predicts_uniform() {
        let s = spec(&[3, 4, 5]);
        let p = predict_proba(&ParamVector::zeros(s), &[1.0, -2.0, 3.0]).unwrap();
        for v in p {
            assert_eq!(v, 0.2);
        }
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax(&[1000.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] >= 0.0 && p[1] < 1e-300);
        let q = softmax(&[1e4, -1e4, 3.0]);
        assert!(q.iter().all(|v| v.is_finite()));
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let s = spec(&[3, 2]);
        assert!(matches!(
            predict_proba(&ParamVector::zeros(s), &[1.0]),
            Err(Error::DimensionMismatch { expected: 3, found: 1 })
        ));
    }

    #[test]
    fn uniform_loss_is_ln_k() {
        let s = spec(&[2, 2]);
        let batch = toy_batch();
        let (loss, _) = loss_and_grad(&ParamVector::zeros(s.clone()), &batch, 0.0).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);

        let mut p = ParamVector::zeros(s);
        p.values_mut()[0] = 2.0;
        let (with_decay, _) = loss_and_grad(&p, &batch, 0.1).unwrap();
        let (without, _) = loss_and_grad(&p, &batch, 0.0).unwrap();
        assert!((with_decay - without - 0.5 * 0.1 * 4.0).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_loss_near_zero() {
        // logits = [x0 * 50, -x0 * 50] on x0 > 0 samples labelled 0
        let s = spec(&[1, 2]);
        let p = ParamVector::new(s, vec![50.0, -50.0, 0.0, 0.0]).unwrap();
        let batch = LabeledDataset::new(vec![1.0, 2.0], vec![0, 0], 1, 2).unwrap();
        let (loss, _) = loss_and_grad(&p, &batch, 0.0).unwrap();
        assert!(loss < 1e-40);
    }

    #[test]
    fn empty_batch_rejected() {
        let s = spec(&[2, 2]);
        let empty = LabeledDataset::new(vec![], vec![], 2, 2).unwrap();
        assert!(loss_and_grad(&ParamVector::zeros(s), &empty, 0.0).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let s = spec(&[2, 3, 2]);
        let p = init_params(&s, 1);
        let hyper = OptimizerHyper {
            learning_rate: 0.0,
            ..Default::default()
        };
        let (q, _) = train_local(&p, &OptimizerState::new(p.len(), hyper), &toy_batch(), 3).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn single_step_matches_hand_update() {
        let s = spec(&[2, 3, 2]);
        let p = init_params(&s, 11);
        let one = LabeledDataset::new(vec![0.3, -0.7], vec![1], 2, 2).unwrap();
        let hyper = OptimizerHyper {
            learning_rate: 0.1,
            momentum: 0.0,
            weight_decay: 0.01,
            batch_size: 4,
            local_epochs: 1,
        };
        let (q, _) = train_local(&p, &OptimizerState::new(p.len(), hyper), &one, 0).unwrap();
        let (_, g) = loss_and_grad(&p, &one, 0.01).unwrap();
        for ((a, b), gi) in q.values().iter().zip(p.values()).zip(g.values()) {
            assert_eq!(*a, b - 0.1 * gi);
        }
    }

    #[test]
    fn training_is_bit_reproducible() {
        let s = spec(&[2, 4, 2]);
        let p = init_params(&s, 5);
        let opt = OptimizerState::new(p.len(), OptimizerHyper { learning_rate: 0.05, batch_size: 2, ..Default::default() });
        let a = train_local(&p, &opt, &toy_batch(), 99).unwrap();
        let b = train_local(&p, &opt, &toy_batch(), 99).unwrap();
        assert_eq!(a, b);
    }
}

//! Dense ReLU networks over flat parameter vectors.
//!
//! The federated layer never looks inside a model: it moves [`ParamVector`]s
//! around, averages them and differences them. This module is the only place
//! that knows how a flat vector maps onto layers.
//!
//! Layout, per consecutive layer pair `(fan_in, fan_out)`: the weight matrix
//! stored input-major (`w[i * fan_out + o]`), followed by `fan_out` biases.
//! Input-major storage lets the forward and backward passes skip zero inputs
//! entirely, which matters for MNIST where most pixels are zero.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::rng_from;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NnError {
    #[error("model needs at least two layers, got {0}")]
    TooFewLayers(usize),
    #[error("layer sizes must be positive")]
    EmptyLayer,
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("batch shape mismatch: {0}")]
    Shape(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u8, classes: usize },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("empty dataset")]
    Empty,
    #[error("learning rate must be finite and non-negative, got {0}")]
    BadLearningRate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

/// Network shape. Hidden layers use `activation`; the output layer emits raw
/// logits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    layer_sizes: Vec<usize>,
    #[serde(default)]
    activation: Activation,
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    bias: usize,
}

impl ModelSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self, NnError> {
        let spec = Self {
            layer_sizes,
            activation: Activation::Relu,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The 784-128-10 MLP used for MNIST runs.
    pub fn reference() -> Self {
        Self::new(vec![784, 128, 10]).expect("valid")
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.layer_sizes.len() < 2 {
            return Err(NnError::TooFewLayers(self.layer_sizes.len()));
        }
        if self.layer_sizes.contains(&0) {
            return Err(NnError::EmptyLayer);
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Σ (in + 1) · out over consecutive layers.
    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    fn layers(&self) -> Vec<Layer> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let l = Layer {
                    fan_in: w[0],
                    fan_out: w[1],
                    weights: offset,
                    bias: offset + w[0] * w[1],
                };
                offset += (w[0] + 1) * w[1];
                l
            })
            .collect()
    }

    /// Index ranges of every bias block in the flat layout.
    pub fn bias_ranges(&self) -> Vec<std::ops::Range<usize>> {
        self.layers().iter().map(|l| l.bias..l.bias + l.fan_out).collect()
    }
}

/// Flat model weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self, NnError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("parameters"));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn check_len(&self, spec: &ModelSpec) -> Result<(), NnError> {
        expect_len(spec.param_count(), self.len())
    }
}

/// A gradient (or pseudo-gradient) tagged with the local round it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradSnapshot {
    pub values: Vec<f64>,
    pub round_index: u64,
}

impl GradSnapshot {
    pub fn new(values: Vec<f64>, round_index: u64) -> Result<Self, NnError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("gradient"));
        }
        Ok(Self { values, round_index })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Borrowed view of a row-major input matrix and its labels.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    inputs: &'a [f64],
    labels: &'a [u8],
    input_dim: usize,
}

impl<'a> Batch<'a> {
    pub fn new(inputs: &'a [f64], labels: &'a [u8], input_dim: usize) -> Result<Self, NnError> {
        if labels.is_empty() {
            return Err(NnError::Empty);
        }
        if input_dim == 0 || inputs.len() != labels.len() * input_dim {
            return Err(NnError::Shape(format!(
                "{} inputs for {} labels of dimension {}",
                inputs.len(),
                labels.len(),
                input_dim
            )));
        }
        Ok(Self {
            inputs,
            labels,
            input_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn labels(&self) -> &'a [u8] {
        self.labels
    }

    fn check(&self, spec: &ModelSpec) -> Result<(), NnError> {
        if self.input_dim != spec.input_dim() {
            return Err(NnError::Shape(format!(
                "input dimension {} but model expects {}",
                self.input_dim,
                spec.input_dim()
            )));
        }
        let classes = spec.num_classes();
        if let Some(&label) = self.labels.iter().find(|&&l| l as usize >= classes) {
            return Err(NnError::LabelOutOfRange { label, classes });
        }
        Ok(())
    }
}

fn expect_len(expected: usize, actual: usize) -> Result<(), NnError> {
    if expected != actual {
        return Err(NnError::LengthMismatch { expected, actual });
    }
    Ok(())
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = rng_from(seed, &[]);
    let mut values = vec![0.0; spec.param_count()];
    for layer in spec.layers() {
        let s = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
        for w in &mut values[layer.weights..layer.bias] {
            *w = rng.random_range(-s..s);
        }
    }
    ParamVector(values)
}

/// Reusable forward/backward buffers for one model shape.
///
/// [`loss_and_grad`] and [`evaluate_accuracy`] are the value-in, value-out
/// entry points; the trainer exists so that local training does not allocate
/// per mini-batch.
#[derive(Debug, Clone)]
pub struct Trainer {
    spec: ModelSpec,
    layers: Vec<Layer>,
    // activations[0] is unused (the input is borrowed); activations[l] is the
    // output of layer l-1, post-ReLU for hidden layers, logits for the last.
    activations: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
    grad: Vec<f64>,
}

impl Trainer {
    pub fn new(spec: &ModelSpec) -> Self {
        let sizes = spec.layer_sizes();
        Self {
            spec: spec.clone(),
            layers: spec.layers(),
            activations: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            deltas: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            grad: vec![0.0; spec.param_count()],
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn forward(&mut self, params: &[f64], x: &[f64]) {
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = self.activations.split_at_mut(l + 1);
            let input: &[f64] = if l == 0 { x } else { &before[l] };
            let out = &mut after[0];
            out.copy_from_slice(&params[layer.bias..layer.bias + layer.fan_out]);
            for (i, &xi) in input.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let row = &params[layer.weights + i * layer.fan_out..][..layer.fan_out];
                for (o, w) in out.iter_mut().zip(row) {
                    *o += xi * w;
                }
            }
            if l != last {
                for v in out.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
    }

    fn logits(&self) -> &[f64] {
        self.activations.last().unwrap()
    }

    /// Forward + backward for one sample, accumulating `scale * dL/dθ` into
    /// the internal gradient buffer. Returns the sample's cross-entropy.
    fn accumulate(&mut self, params: &[f64], x: &[f64], label: usize, scale: f64) -> f64 {
        self.forward(params, x);
        let n = self.layers.len();

        // softmax cross-entropy on the logits
        let logits = &self.activations[n];
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        let loss = max + sum.ln() - logits[label];
        let top = &mut self.deltas[n];
        for (d, z) in top.iter_mut().zip(logits) {
            *d = (z - max).exp() / sum * scale;
        }
        top[label] -= scale;

        for l in (0..n).rev() {
            let layer = self.layers[l];
            let (lower, upper) = self.deltas.split_at_mut(l + 1);
            let delta = &upper[0];
            let input: &[f64] = if l == 0 { x } else { &self.activations[l] };
            for (g, d) in self.grad[layer.bias..layer.bias + layer.fan_out].iter_mut().zip(delta) {
                *g += d;
            }
            for (i, &xi) in input.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let row = &mut self.grad[layer.weights + i * layer.fan_out..][..layer.fan_out];
                for (g, d) in row.iter_mut().zip(delta) {
                    *g += xi * d;
                }
            }
            if l > 0 {
                // backpropagate through the weights and the ReLU of layer l-1;
                // a zero activation means the unit was inactive (or exactly at
                // the kink, where the subgradient 0 is used)
                let below = &mut lower[l];
                for (i, (b, &a)) in below.iter_mut().zip(input).enumerate() {
                    *b = if a > 0.0 {
                        let row = &params[layer.weights + i * layer.fan_out..][..layer.fan_out];
                        row.iter().zip(delta.iter()).map(|(w, d)| w * d).sum()
                    } else {
                        0.0
                    };
                }
            }
        }
        loss
    }

    /// Mean loss and gradient over the rows of `batch`, left in the trainer's
    /// gradient buffer.
    fn batch_gradient(&mut self, params: &[f64], batch: &Batch<'_>) -> Result<f64, NnError> {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for i in 0..batch.len() {
            loss += self.accumulate(params, batch.row(i), batch.labels[i] as usize, scale);
        }
        let loss = loss * scale;
        if !loss.is_finite() {
            return Err(NnError::NonFinite("loss"));
        }
        Ok(loss)
    }

    /// One SGD step in place. Returns the batch loss before the step.
    pub fn step(&mut self, params: &mut [f64], batch: &Batch<'_>, eta: f64) -> Result<f64, NnError> {
        expect_len(self.grad.len(), params.len())?;
        batch.check(&self.spec)?;
        let loss = self.batch_gradient(params, batch)?;
        if eta != 0.0 {
            for (p, g) in params.iter_mut().zip(&self.grad) {
                *p -= eta * g;
            }
        }
        Ok(loss)
    }

    /// Gradient of the most recent [`Trainer::step`].
    pub fn last_gradient(&self) -> &[f64] {
        &self.grad
    }

    pub fn accuracy(&mut self, params: &[f64], data: &Batch<'_>) -> Result<f64, NnError> {
        expect_len(self.grad.len(), params.len())?;
        data.check(&self.spec)?;
        let mut correct = 0usize;
        for i in 0..data.len() {
            self.forward(params, data.row(i));
            if argmax(self.logits()) == data.labels[i] as usize {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean softmax cross-entropy over `batch` and its gradient.
pub fn loss_and_grad(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch<'_>,
) -> Result<(f64, GradSnapshot), NnError> {
    params.check_len(spec)?;
    batch.check(spec)?;
    let mut trainer = Trainer::new(spec);
    let loss = trainer.batch_gradient(params.as_slice(), batch)?;
    let grad = GradSnapshot::new(trainer.grad, 0)?;
    Ok((loss, grad))
}

/// `params - eta * grad`.
pub fn sgd_step(params: &ParamVector, grad: &GradSnapshot, eta: f64) -> Result<ParamVector, NnError> {
    expect_len(params.len(), grad.len())?;
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(NnError::BadLearningRate(eta));
    }
    let values = params
        .as_slice()
        .iter()
        .zip(&grad.values)
        .map(|(p, g)| p - eta * g)
        .collect();
    ParamVector::new(values)
}

/// Fraction of rows whose argmax logit equals the label.
pub fn evaluate_accuracy(spec: &ModelSpec, params: &ParamVector, dataset: &Batch<'_>) -> Result<f64, NnError> {
    Trainer::new(spec).accuracy(params.as_slice(), dataset)
}

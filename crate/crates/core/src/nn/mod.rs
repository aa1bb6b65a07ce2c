//! Small layer library with hand-derived, layer-local backward passes.
//!
//! Every layer caches nothing itself: [`Sequential::forward`] returns a
//! [`Tape`] holding each layer's input, and [`Sequential::backward`] walks it
//! in reverse, accumulating parameter gradients into [`Param::grad`].

mod adam;
mod conv;
mod dense;

pub use adam::{Adam, AdamConfig};
pub use conv::{conv_out_len, transpose_axis, Conv2d, ConvTranspose2d, Padding};
pub use dense::Dense;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

impl Param {
    pub fn new(value: ArrayD<f64>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(ArrayD::zeros(IxDyn(shape)))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

pub(crate) fn glorot_uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> ArrayD<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-limit..limit))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    /// `x · sigmoid(x)`
    Silu,
    Elu,
    Sigmoid,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Silu => x * sigmoid(x),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Sigmoid => sigmoid(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }

    pub fn forward(self, x: &ArrayD<f64>) -> ArrayD<f64> {
        if self == Activation::Identity {
            return x.clone();
        }
        x.mapv(|v| self.apply(v))
    }

    pub fn backward(self, x: &ArrayD<f64>, dy: &ArrayD<f64>) -> ArrayD<f64> {
        if self == Activation::Identity {
            return dy.clone();
        }
        let mut out = dy.clone();
        out.zip_mut_with(x, |g, &v| *g *= self.derivative(v));
        out
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d(Conv2d),
    ConvTranspose2d(ConvTranspose2d),
    Dense(Dense),
    Activation(Activation),
    /// `(n, ...) -> (n, prod)`
    Flatten,
    /// `(n, prod) -> (n, dims...)`
    Reshape(Vec<usize>),
}

impl Layer {
    fn forward(&self, x: &ArrayD<f64>) -> ArrayD<f64> {
        match self {
            Layer::Conv2d(l) => l.forward(x),
            Layer::ConvTranspose2d(l) => l.forward(x),
            Layer::Dense(l) => l.forward(x),
            Layer::Activation(a) => a.forward(x),
            Layer::Flatten => {
                let n = x.shape()[0];
                let rest = x.len() / n.max(1);
                reshape(x, &[n, rest])
            }
            Layer::Reshape(dims) => {
                let mut shape = vec![x.shape()[0]];
                shape.extend_from_slice(dims);
                reshape(x, &shape)
            }
        }
    }

    fn backward(&mut self, x: &ArrayD<f64>, dy: &ArrayD<f64>, need_input_grad: bool) -> Option<ArrayD<f64>> {
        match self {
            Layer::Conv2d(l) => l.backward(x, dy, need_input_grad),
            Layer::ConvTranspose2d(l) => l.backward(x, dy, need_input_grad),
            Layer::Dense(l) => l.backward(x, dy, need_input_grad),
            Layer::Activation(a) => need_input_grad.then(|| a.backward(x, dy)),
            Layer::Flatten | Layer::Reshape(_) => need_input_grad.then(|| reshape(dy, x.shape())),
        }
    }

    fn params(&self) -> Vec<(&'static str, &Param)> {
        match self {
            Layer::Conv2d(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::ConvTranspose2d(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::Dense(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv2d(l) => vec![&mut l.weight, &mut l.bias],
            Layer::ConvTranspose2d(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }

    fn reproject(&mut self) {
        if let Layer::Dense(d) = self {
            d.apply_mask();
        }
    }
}

fn reshape(x: &ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    let data: Vec<f64> = match x.as_slice() {
        Some(s) => s.to_vec(),
        None => x.iter().copied().collect(),
    };
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("reshape preserves element count")
}

/// Inputs of each layer recorded during a forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    inputs: Vec<ArrayD<f64>>,
}

/// Layers applied in order.
#[derive(Debug, Clone, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    /// Forward pass without recording.
    pub fn infer(&self, x: &ArrayD<f64>) -> ArrayD<f64> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h);
        }
        h
    }

    pub fn forward(&self, x: &ArrayD<f64>) -> (ArrayD<f64>, Tape) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let next = layer.forward(&h);
            inputs.push(h);
            h = next;
        }
        (h, Tape { inputs })
    }

    /// Accumulates parameter gradients for `dy = ∂L/∂output`; returns
    /// `∂L/∂input` when requested.
    pub fn backward(&mut self, tape: &Tape, dy: ArrayD<f64>, need_input_grad: bool) -> Option<ArrayD<f64>> {
        assert_eq!(tape.inputs.len(), self.layers.len(), "tape does not belong to this network");
        let mut g = dy;
        for (idx, layer) in self.layers.iter_mut().enumerate().rev() {
            let want = need_input_grad || idx > 0;
            g = layer.backward(&tape.inputs[idx], &g, want)?;
        }
        Some(g)
    }

    /// Named parameters in a stable order: `"{layer}.weight"`, `"{layer}.bias"`.
    pub fn named_params(&self) -> Vec<(String, &Param)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.params().into_iter().map(move |(n, p)| (format!("{i}.{n}"), p)))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Re-applies layer constraints (weight masks) after an update.
    pub fn reproject(&mut self) {
        for l in &mut self.layers {
            l.reproject();
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Vec<usize> {
        let mut shape = input.to_vec();
        for layer in &self.layers {
            shape = match layer {
                Layer::Conv2d(l) => l.output_shape(&shape),
                Layer::ConvTranspose2d(l) => l.output_shape(&shape),
                Layer::Dense(l) => vec![shape[0], l.out_dim()],
                Layer::Activation(_) => shape,
                Layer::Flatten => vec![shape[0], shape[1..].iter().product()],
                Layer::Reshape(d) => std::iter::once(shape[0]).chain(d.iter().copied()).collect(),
            };
        }
        shape
    }

    pub fn parameter_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.len()).sum()
    }
}

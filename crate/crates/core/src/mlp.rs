//! Fully connected rectifier networks with hand-derived gradients.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// Layer widths from input to output. A single width is the identity map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    /// Apply the rectifier after the output layer as well as the hidden ones.
    pub relu_last: bool,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, relu_last: bool) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {widths:?}")));
        }
        Ok(MlpSpec { widths, relu_last })
    }

    pub fn identity(width: usize) -> Self {
        MlpSpec { widths: vec![width], relu_last: false }
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense { weights: Matrix::zeros(fan_out, fan_in), bias: vec![0.0; fan_out] }
    }

    /// Uniform in ±√(6/(fan_in+fan_out)), zero bias.
    fn glorot<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut d = Dense::zeros(fan_in, fan_out);
        d.weights.as_mut_slice().iter_mut().for_each(|w| *w = rng.random_range(-limit..limit));
        d
    }

    pub fn fan_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.rows()
    }

    /// `x·Wᵀ + b` for a batch `x` of shape `n x fan_in`.
    fn affine(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), self.fan_out());
        for n in 0..x.rows() {
            let xn = x.row(n);
            for (o, y) in out.row_mut(n).iter_mut().enumerate() {
                *y = dot(self.weights.row(o), xn) + self.bias[o];
            }
        }
        out
    }
}

/// Per-layer outputs kept for the backward pass. `activations[0]` is the input.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub activations: Vec<Matrix>,
}

impl MlpTrace {
    pub fn output(&self) -> &Matrix {
        self.activations.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    input_dim: usize,
    layers: Vec<Dense>,
    relu_last: bool,
}

impl Mlp {
    pub fn new<R: Rng>(spec: &MlpSpec, rng: &mut R) -> Self {
        let layers = spec.widths.windows(2).map(|w| Dense::glorot(w[0], w[1], rng)).collect();
        Mlp { input_dim: spec.input_dim(), layers, relu_last: spec.relu_last }
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        let layers = spec.widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Mlp { input_dim: spec.input_dim(), layers, relu_last: spec.relu_last }
    }

    /// Same topology with every parameter zero; doubles as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Mlp {
            input_dim: self.input_dim,
            layers: self.layers.iter().map(|l| Dense::zeros(l.fan_in(), l.fan_out())).collect(),
            relu_last: self.relu_last,
        }
    }

    pub fn spec(&self) -> MlpSpec {
        let mut widths = vec![self.input_dim];
        widths.extend(self.layers.iter().map(Dense::fan_out));
        MlpSpec { widths, relu_last: self.relu_last }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, Dense::fan_out)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    fn rectified(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.relu_last
    }

    pub fn forward(&self, x: &Matrix) -> Result<MlpTrace> {
        if x.cols() != self.input_dim {
            return Err(Error::Shape(format!("network expects {} inputs, got {}", self.input_dim, x.cols())));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.affine(activations.last().unwrap());
            if self.rectified(i) {
                z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            activations.push(z);
        }
        Ok(MlpTrace { activations })
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input.
    pub fn backward(&self, trace: &MlpTrace, d_out: &Matrix, grads: &mut Mlp) -> Matrix {
        let mut delta = d_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if self.rectified(i) {
                let out = &trace.activations[i + 1];
                for (d, &a) in delta.as_mut_slice().iter_mut().zip(out.as_slice()) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &trace.activations[i];
            let g = &mut grads.layers[i];
            let mut d_in = Matrix::zeros(input.rows(), layer.fan_in());
            for n in 0..input.rows() {
                let xn = input.row(n);
                let dn = delta.row(n);
                for (o, &d) in dn.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    g.bias[o] += d;
                    for (w, &x) in g.weights.row_mut(o).iter_mut().zip(xn) {
                        *w += d * x;
                    }
                    for (di, &w) in d_in.row_mut(n).iter_mut().zip(layer.weights.row(o)) {
                        *di += d * w;
                    }
                }
            }
            delta = d_in;
        }
        delta
    }

    /// Parameter tensors in declaration order: per layer, weights then bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()]).collect()
    }
}

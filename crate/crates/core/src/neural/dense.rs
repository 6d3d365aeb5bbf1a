use rand::Rng;
use rand_distr::StandardNormal;

use super::params::{ParamSet, TensorKind, TensorStore};
use crate::error::{Error, Result};

/// Fully connected layer `y = W x + b` with `W` stored row-major (out × in).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Gaussian weights with variance `gain / in_dim`, zero bias.
    pub fn random<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, gain: f64, rng: &mut R) -> Self {
        let std = (gain / in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn from_parts(in_dim: usize, out_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::ShapeMismatch(format!(
                "dense layer {out_dim}x{in_dim} given {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + crate::vecmath::dot(row, x))
            .collect()
    }

    /// Accumulates `dL/dW`, `dL/db` into `grads` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], upstream: &[f64], grads: &mut DenseLayer) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim];
        for (o, &g) in upstream.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads.bias[o] += g;
            let row = o * self.in_dim;
            for i in 0..self.in_dim {
                grads.weight[row + i] += g * x[i];
                dx[i] += g * self.weight[row + i];
            }
        }
        dx
    }

    pub(crate) fn visit_named(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &[usize], TensorKind, &[f64]),
    ) {
        f(
            &format!("{prefix}.weight"),
            &[self.out_dim, self.in_dim],
            TensorKind::Weight,
            &self.weight,
        );
        f(&format!("{prefix}.bias"), &[self.out_dim], TensorKind::Bias, &self.bias);
    }

    pub(crate) fn visit_named_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, TensorKind, &mut [f64]),
    ) {
        f(&format!("{prefix}.weight"), TensorKind::Weight, &mut self.weight);
        f(&format!("{prefix}.bias"), TensorKind::Bias, &mut self.bias);
    }

    pub(crate) fn from_store(store: &TensorStore, name: &str) -> Result<Self> {
        let w = store.require(&format!("{name}.weight"))?;
        let b = store.require(&format!("{name}.bias"))?;
        if w.shape.len() != 2 {
            return Err(Error::Checkpoint(format!("`{name}.weight` must be a matrix")));
        }
        Self::from_parts(w.shape[1], w.shape[0], w.data.clone(), b.data.clone())
    }
}

pub(crate) fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Multiplies `upstream` by the rectifier derivative (0 at the kink).
pub(crate) fn relu_backward(pre_activation: &[f64], upstream: &mut [f64]) {
    for (g, &z) in upstream.iter_mut().zip(pre_activation) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Two dense layers with a rectifier in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layer1: DenseLayer,
    pub layer2: DenseLayer,
}

impl Mlp {
    pub fn new(layer1: DenseLayer, layer2: DenseLayer) -> Result<Self> {
        if layer1.out_dim != layer2.in_dim {
            return Err(Error::ShapeMismatch(format!(
                "layer1 produces {} values but layer2 expects {}",
                layer1.out_dim, layer2.in_dim
            )));
        }
        Ok(Self { layer1, layer2 })
    }

    /// He-style first layer and unit-gain output layer.
    pub fn random<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        Self {
            layer1: DenseLayer::random(input, hidden, 2.0, rng),
            layer2: DenseLayer::random(hidden, output, 1.0, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer1.in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layer2.out_dim
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_traced(input)?.output)
    }

    pub fn forward_traced(&self, input: &[f64]) -> Result<MlpTrace> {
        if input.len() != self.layer1.in_dim {
            return Err(Error::ShapeMismatch(format!(
                "mlp expects {} inputs, got {}",
                self.layer1.in_dim,
                input.len()
            )));
        }
        if !crate::vecmath::all_finite(input) {
            return Err(Error::NonFiniteValue("mlp input".into()));
        }
        let pre = self.layer1.forward(input);
        let mut hidden = pre.clone();
        relu(&mut hidden);
        let output = self.layer2.forward(&hidden);
        if !crate::vecmath::all_finite(&output) {
            return Err(Error::NonFiniteValue("mlp output".into()));
        }
        Ok(MlpTrace {
            input: input.to_vec(),
            pre,
            hidden,
            output,
        })
    }

    /// Accumulates parameter gradients into `grads`; returns `dL/dinput`.
    pub fn backward(&self, trace: &MlpTrace, upstream: &[f64], grads: &mut Mlp) -> Result<Vec<f64>> {
        if upstream.len() != self.layer2.out_dim {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient has {} entries, mlp output has {}",
                upstream.len(),
                self.layer2.out_dim
            )));
        }
        let mut d_hidden = self.layer2.backward(&trace.hidden, upstream, &mut grads.layer2);
        relu_backward(&trace.pre, &mut d_hidden);
        Ok(self.layer1.backward(&trace.input, &d_hidden, &mut grads.layer1))
    }

    /// Fresh gradients for a single input.
    pub fn gradient(&self, input: &[f64], upstream: &[f64]) -> Result<(Mlp, Vec<f64>)> {
        let trace = self.forward_traced(input)?;
        let mut grads = self.zeros_like();
        let dx = self.backward(&trace, upstream, &mut grads)?;
        Ok((grads, dx))
    }

    pub fn from_store(store: &TensorStore, prefix: &str) -> Result<Self> {
        Self::new(
            DenseLayer::from_store(store, &format!("{prefix}.layer1"))?,
            DenseLayer::from_store(store, &format!("{prefix}.layer2"))?,
        )
    }
}

/// Intermediate values of one forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub input: Vec<f64>,
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

impl ParamSet for Mlp {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], TensorKind, &[f64])) {
        self.layer1.visit_named("layer1", f);
        self.layer2.visit_named("layer2", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, TensorKind, &mut [f64])) {
        self.layer1.visit_named_mut("layer1", f);
        self.layer2.visit_named_mut("layer2", f);
    }

    fn zeros_like(&self) -> Self {
        Self {
            layer1: DenseLayer::zeros(self.layer1.in_dim, self.layer1.out_dim),
            layer2: DenseLayer::zeros(self.layer2.in_dim, self.layer2.out_dim),
        }
    }
}

//! The classification head `V`: two length-preserving 1-D convolutions over
//! the representation (treated as a single-channel sequence) followed by two
//! dense layers. Rectifiers follow every layer except the last.

use rand::Rng;
use rand_distr::StandardNormal;

use super::dense::{relu, relu_backward, DenseLayer};
use super::params::{ParamSet, TensorKind, TensorStore};
use crate::error::{Error, Result};

/// Stride-1 convolution with zero padding `(kernel - 1) / 2` on each side.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// Layout `[out][in][kernel]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv1d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::ShapeMismatch(format!("kernel size {kernel} must be odd")));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            weight: vec![0.0; out_channels * in_channels * kernel],
            bias: vec![0.0; out_channels],
        })
    }

    pub fn random<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut c = Self::zeros(in_channels, out_channels, kernel)?;
        let std = (2.0 / (in_channels * kernel) as f64).sqrt();
        for w in &mut c.weight {
            *w = std * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(c)
    }

    fn w(&self, o: usize, i: usize, k: usize) -> f64 {
        self.weight[(o * self.in_channels + i) * self.kernel + k]
    }

    /// `x` is channel-major, `in_channels × len`.
    pub fn forward(&self, x: &[f64], len: usize) -> Vec<f64> {
        let pad = self.kernel / 2;
        let mut out = vec![0.0; self.out_channels * len];
        for o in 0..self.out_channels {
            let row = &mut out[o * len..(o + 1) * len];
            row.fill(self.bias[o]);
            for i in 0..self.in_channels {
                let xin = &x[i * len..(i + 1) * len];
                for k in 0..self.kernel {
                    let w = self.w(o, i, k);
                    if w == 0.0 {
                        continue;
                    }
                    // source index s = t + k - pad must lie in [0, len)
                    let t_lo = pad.saturating_sub(k);
                    let t_hi = (len + pad).saturating_sub(k).min(len);
                    for t in t_lo..t_hi {
                        row[t] += w * xin[t + k - pad];
                    }
                }
            }
        }
        out
    }

    pub fn backward(&self, x: &[f64], len: usize, upstream: &[f64], grads: &mut Conv1d) -> Vec<f64> {
        let pad = self.kernel / 2;
        let mut dx = vec![0.0; self.in_channels * len];
        for o in 0..self.out_channels {
            let g = &upstream[o * len..(o + 1) * len];
            grads.bias[o] += g.iter().sum::<f64>();
            for i in 0..self.in_channels {
                let xin = &x[i * len..(i + 1) * len];
                for k in 0..self.kernel {
                    let t_lo = pad.saturating_sub(k);
                    let t_hi = (len + pad).saturating_sub(k).min(len);
                    let w = self.w(o, i, k);
                    let mut dw = 0.0;
                    for t in t_lo..t_hi {
                        let s = t + k - pad;
                        dw += g[t] * xin[s];
                        dx[i * len + s] += g[t] * w;
                    }
                    grads.weight[(o * self.in_channels + i) * self.kernel + k] += dw;
                }
            }
        }
        dx
    }

    fn from_store(store: &TensorStore, name: &str) -> Result<Self> {
        let w = store.require(&format!("{name}.weight"))?;
        let b = store.require(&format!("{name}.bias"))?;
        if w.shape.len() != 3 || b.data.len() != w.shape[0] {
            return Err(Error::Checkpoint(format!("bad shape for `{name}`")));
        }
        let mut c = Self::zeros(w.shape[1], w.shape[0], w.shape[2])
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        c.weight.copy_from_slice(&w.data);
        c.bias.copy_from_slice(&b.data);
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierShape {
    pub input_len: usize,
    pub kernel: usize,
    pub conv_channels: usize,
    pub hidden: usize,
    pub output: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub input_len: usize,
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub fc1: DenseLayer,
    pub fc2: DenseLayer,
}

#[derive(Debug, Clone)]
pub struct ClassifierTrace {
    input: Vec<f64>,
    c1_pre: Vec<f64>,
    c1: Vec<f64>,
    c2_pre: Vec<f64>,
    c2: Vec<f64>,
    f1_pre: Vec<f64>,
    f1: Vec<f64>,
    pub output: Vec<f64>,
}

impl Classifier {
    pub fn new(input_len: usize, conv1: Conv1d, conv2: Conv1d, fc1: DenseLayer, fc2: DenseLayer) -> Result<Self> {
        let ok = conv1.in_channels == 1
            && conv2.in_channels == conv1.out_channels
            && fc1.in_dim == conv2.out_channels * input_len
            && fc2.in_dim == fc1.out_dim;
        if !ok {
            return Err(Error::ShapeMismatch(
                "classifier layers do not compose for the given input length".into(),
            ));
        }
        Ok(Self {
            input_len,
            conv1,
            conv2,
            fc1,
            fc2,
        })
    }

    pub fn random<R: Rng + ?Sized>(shape: ClassifierShape, rng: &mut R) -> Result<Self> {
        let c = shape.conv_channels;
        Self::new(
            shape.input_len,
            Conv1d::random(1, c, shape.kernel, rng)?,
            Conv1d::random(c, c, shape.kernel, rng)?,
            DenseLayer::random(c * shape.input_len, shape.hidden, 2.0, rng),
            DenseLayer::random(shape.hidden, shape.output, 1.0, rng),
        )
    }

    pub fn output_dim(&self) -> usize {
        self.fc2.out_dim
    }

    pub fn forward(&self, omega: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_traced(omega)?.output)
    }

    pub fn forward_traced(&self, omega: &[f64]) -> Result<ClassifierTrace> {
        if omega.len() != self.input_len {
            return Err(Error::ShapeMismatch(format!(
                "classifier expects input length {}, got {}",
                self.input_len,
                omega.len()
            )));
        }
        let len = self.input_len;
        let c1_pre = self.conv1.forward(omega, len);
        let mut c1 = c1_pre.clone();
        relu(&mut c1);
        let c2_pre = self.conv2.forward(&c1, len);
        let mut c2 = c2_pre.clone();
        relu(&mut c2);
        let f1_pre = self.fc1.forward(&c2);
        let mut f1 = f1_pre.clone();
        relu(&mut f1);
        let output = self.fc2.forward(&f1);
        Ok(ClassifierTrace {
            input: omega.to_vec(),
            c1_pre,
            c1,
            c2_pre,
            c2,
            f1_pre,
            f1,
            output,
        })
    }

    /// Accumulates parameter gradients; returns `dL/domega`.
    pub fn backward(&self, trace: &ClassifierTrace, upstream: &[f64], grads: &mut Classifier) -> Result<Vec<f64>> {
        if upstream.len() != self.fc2.out_dim {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient has {} entries, classifier output has {}",
                upstream.len(),
                self.fc2.out_dim
            )));
        }
        let len = self.input_len;
        let mut g = self.fc2.backward(&trace.f1, upstream, &mut grads.fc2);
        relu_backward(&trace.f1_pre, &mut g);
        let mut g = self.fc1.backward(&trace.c2, &g, &mut grads.fc1);
        relu_backward(&trace.c2_pre, &mut g);
        let mut g = self.conv2.backward(&trace.c1, len, &g, &mut grads.conv2);
        relu_backward(&trace.c1_pre, &mut g);
        Ok(self.conv1.backward(&trace.input, len, &g, &mut grads.conv1))
    }

    pub fn gradient(&self, omega: &[f64], upstream: &[f64]) -> Result<(Classifier, Vec<f64>)> {
        let trace = self.forward_traced(omega)?;
        let mut grads = self.zeros_like();
        let d = self.backward(&trace, upstream, &mut grads)?;
        Ok((grads, d))
    }

    pub fn from_store(store: &TensorStore, prefix: &str) -> Result<Self> {
        let conv1 = Conv1d::from_store(store, &format!("{prefix}.conv1"))?;
        let conv2 = Conv1d::from_store(store, &format!("{prefix}.conv2"))?;
        let fc1 = DenseLayer::from_store(store, &format!("{prefix}.fc1"))?;
        let fc2 = DenseLayer::from_store(store, &format!("{prefix}.fc2"))?;
        if conv2.out_channels == 0 || fc1.in_dim % conv2.out_channels != 0 {
            return Err(Error::Checkpoint("classifier shapes inconsistent".into()));
        }
        let input_len = fc1.in_dim / conv2.out_channels;
        Self::new(input_len, conv1, conv2, fc1, fc2).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

impl ParamSet for Classifier {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], TensorKind, &[f64])) {
        for (name, c) in [("conv1", &self.conv1), ("conv2", &self.conv2)] {
            f(
                &format!("{name}.weight"),
                &[c.out_channels, c.in_channels, c.kernel],
                TensorKind::Weight,
                &c.weight,
            );
            f(&format!("{name}.bias"), &[c.out_channels], TensorKind::Bias, &c.bias);
        }
        self.fc1.visit_named("fc1", f);
        self.fc2.visit_named("fc2", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, TensorKind, &mut [f64])) {
        for (name, c) in [("conv1", &mut self.conv1), ("conv2", &mut self.conv2)] {
            f(&format!("{name}.weight"), TensorKind::Weight, &mut c.weight);
            f(&format!("{name}.bias"), TensorKind::Bias, &mut c.bias);
        }
        self.fc1.visit_named_mut("fc1", f);
        self.fc2.visit_named_mut("fc2", f);
    }

    fn zeros_like(&self) -> Self {
        let zc = |c: &Conv1d| Conv1d::zeros(c.in_channels, c.out_channels, c.kernel).expect("odd kernel");
        Self {
            input_len: self.input_len,
            conv1: zc(&self.conv1),
            conv2: zc(&self.conv2),
            fc1: DenseLayer::zeros(self.fc1.in_dim, self.fc1.out_dim),
            fc2: DenseLayer::zeros(self.fc2.in_dim, self.fc2.out_dim),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_dense(n: usize) -> DenseLayer {
        let mut d = DenseLayer::zeros(n, n);
        for i in 0..n {
            d.weight[i * n + i] = 1.0;
        }
        d
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let mut conv1 = Conv1d::zeros(1, 1, 3).unwrap();
        conv1.weight = vec![0.0, 1.0, 0.0];
        let conv2 = conv1.clone();
        let v = Classifier::new(5, conv1, conv2, identity_dense(5), identity_dense(5)).unwrap();
        let x = [0.5, 1.0, 2.0, 0.25, 3.0];
        assert_eq!(v.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let v = Classifier::new(
            4,
            Conv1d::zeros(1, 2, 3).unwrap(),
            Conv1d::zeros(2, 2, 3).unwrap(),
            DenseLayer::zeros(8, 3),
            DenseLayer::zeros(3, 2),
        )
        .unwrap();
        assert_eq!(v.forward(&[1.0, -1.0, 2.0, 5.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(Conv1d::zeros(1, 1, 2).is_err());
    }

    #[test]
    fn bad_composition_rejected() {
        assert!(Classifier::new(
            4,
            Conv1d::zeros(1, 2, 3).unwrap(),
            Conv1d::zeros(2, 2, 3).unwrap(),
            DenseLayer::zeros(7, 3),
            DenseLayer::zeros(3, 2),
        )
        .is_err());
    }

    fn conv_reference(c: &Conv1d, x: &[f64], len: usize) -> Vec<f64> {
        let pad = c.kernel as isize / 2;
        let mut out = vec![0.0; c.out_channels * len];
        for o in 0..c.out_channels {
            for t in 0..len as isize {
                let mut acc = c.bias[o];
                for i in 0..c.in_channels {
                    for k in 0..c.kernel as isize {
                        let s = t + k - pad;
                        if s >= 0 && s < len as isize {
                            acc += c.w(o, i, k as usize) * x[i * len + s as usize];
                        }
                    }
                }
                out[o * len + t as usize] = acc;
            }
        }
        out
    }

    #[test]
    fn matches_independent_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let shape = ClassifierShape {
            input_len: 7,
            kernel: 3,
            conv_channels: 3,
            hidden: 5,
            output: 2,
        };
        for _ in 0..20 {
            let mut v = Classifier::random(shape, &mut rng).unwrap();
            for b in v.conv1.bias.iter_mut().chain(v.conv2.bias.iter_mut()) {
                *b = rng.random_range(-0.5..0.5);
            }
            let x: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
            let relu = |v: Vec<f64>| v.into_iter().map(|z| z.max(0.0)).collect::<Vec<_>>();
            let h1 = relu(conv_reference(&v.conv1, &x, 7));
            let h2 = relu(conv_reference(&v.conv2, &h1, 7));
            let mut f1 = Vec::new();
            for o in 0..5 {
                let mut acc = v.fc1.bias[o];
                for (i, h) in h2.iter().enumerate() {
                    acc += v.fc1.weight[o * h2.len() + i] * h;
                }
                f1.push(acc.max(0.0));
            }
            let got = v.forward(&x).unwrap();
            for o in 0..2 {
                let mut acc = v.fc2.bias[o];
                for (i, h) in f1.iter().enumerate() {
                    acc += v.fc2.weight[o * 5 + i] * h;
                }
                assert!((got[o] - acc).abs() < 1e-12);
            }
        }
    }
}

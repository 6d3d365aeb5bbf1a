//! Parameter containers and the text checkpoint format.
//!
//! ```text
//! claster-checkpoint<TAB>v1
//! @key<TAB>value                      (metadata, sorted by key)
//! name<TAB>shape<TAB>v1,v2,...        (tensors, sorted by name)
//! ```
//!
//! Shapes are written as `4x3` (row-major); values use shortest round-trip
//! decimals so a save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const CHECKPOINT_HEADER: &str = "claster-checkpoint\tv1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    /// Multiplicative weights; counted by the Frobenius regularizer.
    Weight,
    Bias,
}

/// Anything holding named trainable tensors. Gradient sets reuse the same
/// type, so every container also knows how to build a zeroed copy.
pub trait ParamSet {
    /// Visits tensors in a fixed order: `(name, shape, kind, data)`.
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], TensorKind, &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, TensorKind, &mut [f64]));
    fn zeros_like(&self) -> Self
    where
        Self: Sized;

    /// Sum of squared entries of all weight tensors (biases excluded).
    fn weight_sq_norm(&self) -> f64 {
        let mut total = 0.0;
        self.visit(&mut |_, _, kind, data| {
            if kind == TensorKind::Weight {
                total += data.iter().map(|x| x * x).sum::<f64>();
            }
        });
        total
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, _, d| n += d.len());
        n
    }

    /// First tensor containing a non-finite entry, if any.
    fn first_non_finite(&self) -> Option<String> {
        let mut bad = None;
        self.visit(&mut |name, _, _, d| {
            if bad.is_none() && d.iter().any(|v| !v.is_finite()) {
                bad = Some(name.to_string());
            }
        });
        bad
    }

    /// Flattened copy of all tensors in visit order.
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |_, _, _, d| out.extend_from_slice(d));
        out
    }

    fn store_into(&self, prefix: &str, store: &mut TensorStore) {
        self.visit(&mut |name, shape, _, data| {
            store.insert(format!("{prefix}.{name}"), shape.to_vec(), data.to_vec());
        });
    }

    /// Overwrites tensors from `store`; shapes must match the receiver.
    fn load_from(&mut self, prefix: &str, store: &TensorStore) -> Result<()> {
        let mut err = None;
        self.visit_mut(&mut |name, _, data| {
            if err.is_some() {
                return;
            }
            let key = format!("{prefix}.{name}");
            match store.get(&key) {
                Some(t) if t.data.len() == data.len() => data.copy_from_slice(&t.data),
                Some(t) => {
                    err = Some(Error::Checkpoint(format!(
                        "tensor `{key}` has {} values, expected {}",
                        t.data.len(),
                        data.len()
                    )))
                }
                None => err = Some(Error::Checkpoint(format!("missing tensor `{key}`"))),
            }
        });
        err.map_or(Ok(()), Err)
    }
}

/// `acc += scale * other`, tensor by tensor.
pub fn accumulate<P: ParamSet>(acc: &mut P, other: &P, scale: f64) {
    let flat = other.flatten();
    let mut offset = 0;
    acc.visit_mut(&mut |_, _, d| {
        for (a, b) in d.iter_mut().zip(&flat[offset..]) {
            *a += scale * b;
        }
        offset += d.len();
    });
}

/// `grads += coeff * weights` for weight tensors only.
pub fn add_weight_penalty<P: ParamSet>(grads: &mut P, params: &P, coeff: f64) {
    let mut weights = Vec::new();
    params.visit(&mut |_, _, kind, d| weights.push((kind, d.to_vec())));
    let mut it = weights.into_iter();
    grads.visit_mut(&mut |_, _, d| {
        let (kind, w) = it.next().expect("gradient mirrors parameters");
        if kind == TensorKind::Weight {
            for (g, x) in d.iter_mut().zip(&w) {
                *g += coeff * x;
            }
        }
    });
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Named tensors plus string metadata, serialized deterministically.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorStore {
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl TensorStore {
    pub fn insert(&mut self, name: String, shape: Vec<usize>, data: Vec<f64>) {
        self.tensors.insert(name, Tensor { shape, data });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.insert(key.into(), value.into());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata `{key}`")))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(CHECKPOINT_HEADER);
        s.push('\n');
        for (k, v) in &self.meta {
            writeln!(s, "@{k}\t{v}").unwrap();
        }
        for (name, t) in &self.tensors {
            let shape: Vec<String> = t.shape.iter().map(usize::to_string).collect();
            writeln!(
                s,
                "{name}\t{}\t{}",
                shape.join("x"),
                crate::vecmath::join(&t.data)
            )
            .unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == CHECKPOINT_HEADER => {}
            _ => {
                return Err(Error::Checkpoint(format!(
                    "missing `{}` header",
                    CHECKPOINT_HEADER.replace('\t', " ")
                )))
            }
        }
        let mut store = TensorStore::default();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let bad = |m: &str| Error::Checkpoint(format!("line {}: {m}", i + 1));
            if let Some(rest) = line.strip_prefix('@') {
                let (k, v) = rest.split_once('\t').ok_or_else(|| bad("metadata needs a value"))?;
                store.set_meta(k, v);
                continue;
            }
            let mut fields = line.split('\t');
            let (name, shape, values) = match (fields.next(), fields.next(), fields.next()) {
                (Some(n), Some(s), Some(v)) => (n, s, v),
                _ => return Err(bad("expected name<TAB>shape<TAB>values")),
            };
            let shape: Vec<usize> = shape
                .split('x')
                .map(|d| d.parse().map_err(|_| bad("bad shape")))
                .collect::<Result<_>>()?;
            let data: Vec<f64> = if values.is_empty() {
                Vec::new()
            } else {
                values
                    .split(',')
                    .map(|v| v.parse::<f64>().map_err(|_| bad("bad value")))
                    .collect::<Result<_>>()?
            };
            if shape.iter().product::<usize>() != data.len() {
                return Err(bad("shape does not match value count"));
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue(format!("checkpoint tensor `{name}`")));
            }
            store.insert(name.to_string(), shape, data);
        }
        Ok(store)
    }
}

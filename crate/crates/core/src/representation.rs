//! The intermediate point ψ, centroid weights η, and the final
//! representation `ω = ψ + Σ_j η_j c_j`.

use crate::clustering::ClusterModel;
use crate::error::{Error, Result};
use crate::neural::Mlp;
use crate::vecmath;

/// Cap on `1/d` so an exact centroid hit stays finite.
pub const INVERSE_DISTANCE_CAP: f64 = 1e12;

/// A visual vector joined with its semantic counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualSemanticPoint {
    joined: Vec<f64>,
    visual_len: usize,
}

impl VisualSemanticPoint {
    pub fn new(visual: &[f64], semantic: &[f64]) -> Result<Self> {
        let mut joined = Vec::with_capacity(visual.len() + semantic.len());
        joined.extend_from_slice(visual);
        joined.extend_from_slice(semantic);
        if !vecmath::all_finite(&joined) {
            return Err(Error::NonFiniteValue("visual-semantic point".into()));
        }
        Ok(Self {
            joined,
            visual_len: visual.len(),
        })
    }

    pub fn joined(&self) -> &[f64] {
        &self.joined
    }

    pub fn visual_part(&self) -> &[f64] {
        &self.joined[..self.visual_len]
    }

    pub fn semantic_part(&self) -> &[f64] {
        &self.joined[self.visual_len..]
    }

    pub fn into_joined(self) -> Vec<f64> {
        self.joined
    }
}

/// `ψ = x ++ φ(x)`.
pub fn build_psi(mapper: &Mlp, x: &[f64]) -> Result<VisualSemanticPoint> {
    let phi = mapper.forward(x)?;
    VisualSemanticPoint::new(x, &phi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterWeights {
    pub distances: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ClusterWeights {
    /// Index of the nearest centroid (lowest index on ties).
    pub fn closest(&self) -> usize {
        let mut best = 0;
        for j in 1..self.distances.len() {
            if self.distances[j] < self.distances[best] {
                best = j;
            }
        }
        best
    }
}

fn inverse(d: f64) -> f64 {
    if d > 0.0 {
        (1.0 / d).min(INVERSE_DISTANCE_CAP)
    } else {
        INVERSE_DISTANCE_CAP
    }
}

/// Min-max normalized inverse distances.
pub fn cluster_weights(model: &ClusterModel, psi: &[f64]) -> Result<ClusterWeights> {
    let distances = model.distances(psi)?;
    let weights = weights_from_distances(&distances);
    Ok(ClusterWeights { distances, weights })
}

/// Weight rule applied to a precomputed distance vector.
pub fn weights_from_distances(distances: &[f64]) -> Vec<f64> {
    let inv: Vec<f64> = distances.iter().map(|&d| inverse(d)).collect();
    let max = inv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = inv.iter().copied().fold(f64::INFINITY, f64::min);
    if max == min {
        return vec![1.0; inv.len()];
    }
    inv.iter().map(|s| (s - min) / (max - min)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClasterRepresentation {
    pub psi: VisualSemanticPoint,
    pub weights: ClusterWeights,
    pub omega: Vec<f64>,
}

pub fn claster_representation(
    model: &ClusterModel,
    psi: VisualSemanticPoint,
) -> Result<ClasterRepresentation> {
    let weights = cluster_weights(model, psi.joined())?;
    let mut omega = psi.joined().to_vec();
    for (w, c) in weights.weights.iter().zip(model.centroids()) {
        vecmath::axpy(&mut omega, *w, c);
    }
    Ok(ClasterRepresentation {
        psi,
        weights,
        omega,
    })
}

/// Pulls `∂L/∂ω` back to `∂L/∂ψ`, including the dependence of η on ψ.
///
/// The weights are piecewise smooth: the derivative is taken with the
/// current argmin/argmax clusters held fixed, and capped or degenerate
/// weights contribute nothing.
pub fn omega_backward(
    model: &ClusterModel,
    rep: &ClasterRepresentation,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    let psi = rep.psi.joined();
    if upstream.len() != psi.len() {
        return Err(Error::ShapeMismatch(format!(
            "upstream has {} entries, ω has {}",
            upstream.len(),
            psi.len()
        )));
    }
    let mut grad = upstream.to_vec();
    let d = &rep.weights.distances;
    let k = d.len();
    let inv: Vec<f64> = d.iter().map(|&x| inverse(x)).collect();
    let (mut a, mut b) = (0, 0);
    for j in 1..k {
        if inv[j] > inv[a] {
            a = j;
        }
        if inv[j] < inv[b] {
            b = j;
        }
    }
    let span = inv[a] - inv[b];
    if span <= 0.0 {
        return Ok(grad);
    }
    // ∂L/∂s_m accumulated over every non-endpoint weight.
    let mut ds = vec![0.0; k];
    for j in 0..k {
        if j == a || j == b {
            continue;
        }
        let g = vecmath::dot(upstream, model.centroid(j));
        ds[j] += g / span;
        ds[b] += g * (inv[j] - inv[a]) / (span * span);
        ds[a] -= g * (inv[j] - inv[b]) / (span * span);
    }
    for m in 0..k {
        if ds[m] == 0.0 || d[m] <= 0.0 || 1.0 / d[m] >= INVERSE_DISTANCE_CAP {
            continue;
        }
        let scale = -ds[m] / (d[m] * d[m] * d[m]);
        for ((gi, p), c) in grad.iter_mut().zip(psi).zip(model.centroid(m)) {
            *gi += scale * (p - c);
        }
    }
    Ok(grad)
}

//! Embedding rectification, zero-shot nearest-neighbor prediction and the
//! seen/unseen routing gate for the generalized setting.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::neural::check_distribution;
use crate::vecmath;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Seen,
    Unseen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RectifiedEmbedding {
    pub class_label: String,
    pub vector: Vec<f64>,
    pub source: Source,
}

/// A projected class embedding `a'(y)` with its label.
#[derive(Debug, Clone, Copy)]
pub struct Projected<'a> {
    pub label: &'a str,
    pub vector: &'a [f64],
}

/// `â = a' + (1/k)·Σ_n cos(a', n)·n` over the `k_nn` Euclidean-nearest seen
/// projections. A seen target named `exclude` is left out of its own
/// neighborhood.
pub fn rectify(
    target: &[f64],
    seen: &[Projected<'_>],
    exclude: Option<&str>,
    k_nn: usize,
) -> Result<Vec<f64>> {
    let mut pool: Vec<(f64, &Projected<'_>)> = seen
        .iter()
        .filter(|p| Some(p.label) != exclude)
        .map(|p| {
            if p.vector.len() != target.len() {
                return Err(Error::ShapeMismatch(format!(
                    "neighbor `{}` has {} entries, target {}",
                    p.label,
                    p.vector.len(),
                    target.len()
                )));
            }
            Ok((vecmath::squared_distance(target, p.vector), p))
        })
        .collect::<Result<_>>()?;
    if k_nn == 0 || pool.is_empty() {
        return Err(Error::EmptyNeighborSet);
    }
    if k_nn > pool.len() {
        return Err(Error::OutOfRange(format!(
            "rectification asks for {k_nn} neighbors but only {} seen projections exist",
            pool.len()
        )));
    }
    pool.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.label.cmp(b.1.label)));
    let mut out = target.to_vec();
    let scale = 1.0 / k_nn as f64;
    for (_, n) in &pool[..k_nn] {
        let cos = vecmath::cosine(target, n.vector).ok_or(Error::ZeroVector)?;
        vecmath::axpy(&mut out, scale * cos, n.vector);
    }
    Ok(out)
}

/// Rectifies every unseen projection against the seen ones.
pub fn rectify_unseen(
    unseen: &[Projected<'_>],
    seen: &[Projected<'_>],
    k_nn: usize,
) -> Result<Vec<RectifiedEmbedding>> {
    unseen
        .iter()
        .map(|u| {
            Ok(RectifiedEmbedding {
                class_label: u.label.to_string(),
                vector: rectify(u.vector, seen, None, k_nn)?,
                source: Source::Unseen,
            })
        })
        .collect()
}

/// How the zero-shot query vector is formed from a test instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryMode {
    /// Projected embedding of the most probable seen class.
    Hard,
    /// Probability-weighted average of the seen projections.
    Soft,
    /// The instance's own estimate φ of its projected embedding.
    Instance,
}

impl fmt::Display for QueryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryMode::Hard => "hard",
            QueryMode::Soft => "soft",
            QueryMode::Instance => "instance",
        })
    }
}

impl FromStr for QueryMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(QueryMode::Hard),
            "soft" => Ok(QueryMode::Soft),
            "instance" => Ok(QueryMode::Instance),
            other => Err(Error::Config(format!("unknown query mode `{other}`"))),
        }
    }
}

/// Model outputs for one test instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceOutputs {
    /// Softmax over seen classes, in sorted seen-label order.
    pub y_hat: Vec<f64>,
    /// Semantic half of ψ.
    pub phi: Vec<f64>,
}

/// Builds the zero-shot query. `seen_projected` rows follow `y_hat` order.
pub fn zsl_query(mode: QueryMode, outputs: &InstanceOutputs, seen_projected: &[Vec<f64>]) -> Result<Vec<f64>> {
    if outputs.y_hat.len() != seen_projected.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} seen probabilities for {} seen projections",
            outputs.y_hat.len(),
            seen_projected.len()
        )));
    }
    match mode {
        QueryMode::Hard => Ok(seen_projected[vecmath::argmax(&outputs.y_hat)].clone()),
        QueryMode::Soft => {
            let dim = seen_projected.first().map_or(0, Vec::len);
            let mut q = vec![0.0; dim];
            for (p, row) in outputs.y_hat.iter().zip(seen_projected) {
                vecmath::axpy(&mut q, *p, row);
            }
            Ok(q)
        }
        QueryMode::Instance => Ok(outputs.phi.clone()),
    }
}

/// Unseen class with the highest cosine similarity to `query`; exact ties go
/// to the lexicographically smallest label.
pub fn nearest_unseen<'a>(query: &[f64], unseen: &'a [RectifiedEmbedding]) -> Result<&'a str> {
    let mut best: Option<(f64, &str)> = None;
    for u in unseen {
        if u.vector.len() != query.len() {
            return Err(Error::ShapeMismatch(format!(
                "query has {} entries, `{}` has {}",
                query.len(),
                u.class_label,
                u.vector.len()
            )));
        }
        let cos = vecmath::cosine(query, &u.vector).ok_or(Error::ZeroVector)?;
        let better = match best {
            None => true,
            Some((bc, bl)) => cos > bc || (cos == bc && u.class_label.as_str() < bl),
        };
        if better {
            best = Some((cos, &u.class_label));
        }
    }
    best.map(|b| b.1).ok_or(Error::EmptyUnseenSet)
}

pub fn zsl_predict(
    mode: QueryMode,
    outputs: &InstanceOutputs,
    seen_projected: &[Vec<f64>],
    unseen: &[RectifiedEmbedding],
) -> Result<String> {
    if unseen.is_empty() {
        return Err(Error::EmptyUnseenSet);
    }
    let q = zsl_query(mode, outputs, seen_projected)?;
    nearest_unseen(&q, unseen).map(str::to_string)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateConfig {
    tau: f64,
}

impl GateConfig {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::OutOfRange(format!("gate threshold {tau} outside (0, 1)")));
        }
        Ok(Self { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Seen,
    Unseen,
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Route::Seen => "seen",
            Route::Unseen => "unseen",
        })
    }
}

/// Seen when the top seen-class probability reaches `tau`.
pub fn bias_gate(y_hat: &[f64], config: GateConfig) -> Result<Route> {
    check_distribution(y_hat)?;
    let max = y_hat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(if max >= config.tau {
        Route::Seen
    } else {
        Route::Unseen
    })
}

/// Threshold that keeps roughly `target_recall` of held-out seen instances on
/// the seen route, given their top seen-class probabilities.
pub fn tune_tau(held_out_max: &[f64], target_recall: f64) -> Result<GateConfig> {
    if held_out_max.is_empty() {
        return Err(Error::EmptyInput("gate tuning needs held-out seen instances"));
    }
    if !(target_recall > 0.0 && target_recall <= 1.0) {
        return Err(Error::OutOfRange(format!("target recall {target_recall}")));
    }
    let mut sorted = held_out_max.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let keep = ((target_recall * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let tau = sorted[keep - 1].clamp(1e-6, 1.0 - 1e-6);
    GateConfig::new(tau)
}

pub fn gzsl_predict(
    mode: QueryMode,
    outputs: &InstanceOutputs,
    gate: GateConfig,
    seen_labels: &[String],
    seen_projected: &[Vec<f64>],
    unseen: &[RectifiedEmbedding],
) -> Result<(Route, String)> {
    if seen_labels.len() != outputs.y_hat.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} seen labels for {} probabilities",
            seen_labels.len(),
            outputs.y_hat.len()
        )));
    }
    match bias_gate(&outputs.y_hat, gate)? {
        Route::Seen => Ok((Route::Seen, seen_labels[vecmath::argmax(&outputs.y_hat)].clone())),
        Route::Unseen => Ok((
            Route::Unseen,
            zsl_predict(mode, outputs, seen_projected, unseen)?,
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unseen(items: &[(&str, Vec<f64>)]) -> Vec<RectifiedEmbedding> {
        items
            .iter()
            .map(|(l, v)| RectifiedEmbedding {
                class_label: l.to_string(),
                vector: v.clone(),
                source: Source::Unseen,
            })
            .collect()
    }

    fn proj<'a>(label: &'a str, v: &'a [f64]) -> Projected<'a> {
        Projected { label, vector: v }
    }

    #[test]
    fn rectify_examples() {
        let a = [1.0, 0.0];
        let dup = [1.0, 0.0];
        assert_eq!(rectify(&a, &[proj("s", &dup)], None, 1).unwrap(), vec![2.0, 0.0]);
        let orth = [0.0, 3.0];
        assert_eq!(rectify(&a, &[proj("s", &orth)], None, 1).unwrap(), vec![1.0, 0.0]);
        let b = [0.0, 1.0];
        let out = rectify(&a, &[proj("p", &dup), proj("q", &b)], None, 2).unwrap();
        assert_eq!(out, vec![1.5, 0.0]);
    }

    #[test]
    fn rectify_excludes_self_and_checks_counts() {
        let a = [1.0, 0.0];
        let other = [0.0, 1.0];
        let out = rectify(&a, &[proj("me", &a), proj("o", &other)], Some("me"), 1).unwrap();
        assert_eq!(out, vec![1.0, 0.0]);
        assert!(matches!(rectify(&a, &[], None, 1), Err(Error::EmptyNeighborSet)));
        assert!(matches!(rectify(&a, &[proj("o", &other)], None, 0), Err(Error::EmptyNeighborSet)));
        assert!(matches!(rectify(&a, &[proj("o", &other)], None, 2), Err(Error::OutOfRange(_))));
        assert!(matches!(rectify(&[0.0, 0.0], &[proj("o", &other)], None, 1), Err(Error::ZeroVector)));
    }

    #[test]
    fn rectify_uses_nearest_neighbors() {
        let a = [1.0, 0.0];
        let near = [1.0, 0.1];
        let far = [-5.0, 0.0];
        let out = rectify(&a, &[proj("far", &far), proj("near", &near)], None, 1).unwrap();
        let cos = 1.0 / (1.01f64).sqrt();
        assert!((out[0] - (1.0 + cos)).abs() < 1e-15);
        assert!((out[1] - 0.1 * cos).abs() < 1e-15);
    }

    #[test]
    fn nearest_unseen_examples() {
        let u = unseen(&[("a", vec![0.0, 1.0]), ("b", vec![2.0, 0.0])]);
        assert_eq!(nearest_unseen(&[1.0, 0.0], &u).unwrap(), "b");
        let tie = unseen(&[("z", vec![1.0, 0.0]), ("m", vec![2.0, 0.0])]);
        assert_eq!(nearest_unseen(&[1.0, 0.0], &tie).unwrap(), "m");
        assert!(matches!(nearest_unseen(&[1.0, 0.0], &[]), Err(Error::EmptyUnseenSet)));
    }

    #[test]
    fn query_modes() {
        let seen = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let out = InstanceOutputs {
            y_hat: vec![0.25, 0.75],
            phi: vec![3.0, 3.0],
        };
        assert_eq!(zsl_query(QueryMode::Hard, &out, &seen).unwrap(), vec![0.0, 1.0]);
        assert_eq!(zsl_query(QueryMode::Soft, &out, &seen).unwrap(), vec![0.25, 0.75]);
        assert_eq!(zsl_query(QueryMode::Instance, &out, &seen).unwrap(), vec![3.0, 3.0]);
        for m in ["hard", "soft", "instance"] {
            assert_eq!(m.parse::<QueryMode>().unwrap().to_string(), m);
        }
    }

    #[test]
    fn zsl_exact_match_wins() {
        let seen = vec![vec![1.0, 2.0], vec![-1.0, 0.5]];
        let out = InstanceOutputs {
            y_hat: vec![0.9, 0.1],
            phi: vec![0.0, 0.0],
        };
        let u = unseen(&[("x", vec![1.0, 2.0]), ("y", vec![2.0, -1.0])]);
        assert_eq!(zsl_predict(QueryMode::Hard, &out, &seen, &u).unwrap(), "x");
        assert!(matches!(
            zsl_predict(QueryMode::Hard, &out, &seen, &[]),
            Err(Error::EmptyUnseenSet)
        ));
    }

    #[test]
    fn gate_examples() {
        let g = GateConfig::new(0.5).unwrap();
        assert_eq!(bias_gate(&[0.9, 0.1], g).unwrap(), Route::Seen);
        assert_eq!(bias_gate(&[0.3, 0.3, 0.4], g).unwrap(), Route::Unseen);
        assert_eq!(bias_gate(&[0.5, 0.5], g).unwrap(), Route::Seen);
        assert!(GateConfig::new(0.0).is_err());
        assert!(GateConfig::new(1.0).is_err());
        assert!(bias_gate(&[0.9, 0.9], g).is_err());
    }

    #[test]
    fn gzsl_routes() {
        let labels = vec!["s0".to_string(), "s1".to_string()];
        let seen = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let u = unseen(&[("u0", vec![0.0, 1.0]), ("u1", vec![1.0, 0.0])]);
        let gate = GateConfig::new(0.5).unwrap();
        let confident = InstanceOutputs {
            y_hat: vec![0.1, 0.9],
            phi: vec![1.0, 0.0],
        };
        let got = gzsl_predict(QueryMode::Hard, &confident, gate, &labels, &seen, &u).unwrap();
        assert_eq!(got, (Route::Seen, "s1".to_string()));
        let gate = GateConfig::new(0.95).unwrap();
        let got = gzsl_predict(QueryMode::Hard, &confident, gate, &labels, &seen, &u).unwrap();
        assert_eq!(got, (Route::Unseen, "u0".to_string()));
    }

    #[test]
    fn tau_tuning_keeps_target_fraction() {
        let probs: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let g = tune_tau(&probs, 0.9).unwrap();
        assert_eq!(g.tau(), 0.2);
        let kept = probs.iter().filter(|&&p| p >= g.tau()).count();
        assert_eq!(kept, 9);
        assert!(tune_tau(&[], 0.9).is_err());
        assert!(tune_tau(&[1.0], 0.9).unwrap().tau() < 1.0);
    }

    proptest! {
        #[test]
        fn rectify_ignores_orthogonal_neighbors(a in -5.0f64..5.0, b in 0.1f64..5.0, c in 0.1f64..5.0) {
            prop_assume!(a != 0.0);
            let target = [a, 0.0, 0.0];
            let n1 = [0.0, b, 0.0];
            let n2 = [0.0, 0.0, c];
            let out = rectify(&target, &[proj("p", &n1), proj("q", &n2)], None, 2).unwrap();
            prop_assert_eq!(out, target.to_vec());
        }

        #[test]
        fn nearest_unseen_is_scale_invariant(
            q in prop::collection::vec(-3.0f64..3.0, 3),
            scale in 0.01f64..100.0,
            cands in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 1..6),
        ) {
            prop_assume!(vecmath::norm(&q) > 1e-6);
            prop_assume!(cands.iter().all(|c| vecmath::norm(c) > 1e-6));
            let items: Vec<(String, Vec<f64>)> = cands.iter().enumerate().map(|(i, c)| (format!("c{i}"), c.clone())).collect();
            let u: Vec<RectifiedEmbedding> = items.iter().map(|(l, v)| RectifiedEmbedding {
                class_label: l.clone(), vector: v.clone(), source: Source::Unseen }).collect();
            let scaled: Vec<f64> = q.iter().map(|x| x * scale).collect();
            let a = nearest_unseen(&q, &u).unwrap();
            let b = nearest_unseen(&scaled, &u).unwrap();
            if a != b {
                // Only acceptable when the two similarities agree to rounding.
                let ca = vecmath::cosine(&q, &u.iter().find(|e| e.class_label == a).unwrap().vector).unwrap();
                let cb = vecmath::cosine(&q, &u.iter().find(|e| e.class_label == b).unwrap().vector).unwrap();
                prop_assert!((ca - cb).abs() < 1e-12);
            }
        }

        #[test]
        fn low_tau_never_routes_unseen(raw in prop::collection::vec(0.01f64..1.0, 2..6)) {
            let total: f64 = raw.iter().sum();
            let y_hat: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let g = GateConfig::new(1e-9).unwrap();
            prop_assert_eq!(bias_gate(&y_hat, g).unwrap(), Route::Seen);
        }
    }
}

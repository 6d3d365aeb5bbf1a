use crate::error::{Error, Result};
use crate::vecmath;

/// Floor applied to the true-class probability inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean squared difference and its gradient with respect to `prediction`.
pub fn least_squares_loss(prediction: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if prediction.len() != target.len() || prediction.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} entries, target {}",
            prediction.len(),
            target.len()
        )));
    }
    let n = prediction.len() as f64;
    let diff: Vec<f64> = prediction.iter().zip(target).map(|(p, t)| p - t).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad = diff.iter().map(|d| 2.0 * d / n).collect();
    Ok((loss, grad))
}

/// Logits `a(y_j)ᵀ v` for each row of the row-major `S × d_s` matrix.
pub fn semantic_logits(embeddings: &[f64], dim: usize, projected: &[f64]) -> Result<Vec<f64>> {
    if dim == 0 || projected.len() != dim || embeddings.len() % dim != 0 || embeddings.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "embedding matrix of {} values with dim {dim}, projected vector of {}",
            embeddings.len(),
            projected.len()
        )));
    }
    Ok(embeddings
        .chunks_exact(dim)
        .map(|row| vecmath::dot(row, projected))
        .collect())
}

/// Softmax over semantic logits, computed with max subtraction.
pub fn semantic_softmax(embeddings: &[f64], dim: usize, projected: &[f64]) -> Result<Vec<f64>> {
    let logits = semantic_logits(embeddings, dim, projected)?;
    softmax(&logits)
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if !vecmath::all_finite(logits) {
        return Err(Error::NonFiniteValue("softmax logits".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    Ok(exp.into_iter().map(|e| e / total).collect())
}

/// Rejects vectors that are not a probability distribution.
pub fn check_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidProbability("empty vector".into()));
    }
    if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::InvalidProbability("entry outside [0, 1]".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidProbability(format!("entries sum to {total}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationLoss {
    pub loss: f64,
    /// Gradient of the cross-entropy term with respect to `V(ω)`.
    pub grad_projected: Vec<f64>,
    /// Set when the true-class probability fell below [`PROB_FLOOR`].
    pub clamped: bool,
}

/// Regularized cross-entropy: `-ln ŷ_true + λ·‖W‖²_F`.
///
/// `weight_sq_norm` is the summed squared Frobenius norm of every network
/// weight. The gradient returned is `Σ_j (ŷ_j - 1[j = true])·a(y_j)`, the
/// derivative through the semantic softmax; the regularizer's own gradient
/// (`2λW`) is applied to the weights by the caller.
pub fn regularized_cross_entropy(
    probabilities: &[f64],
    true_index: usize,
    embeddings: &[f64],
    dim: usize,
    weight_sq_norm: f64,
    lambda: f64,
) -> Result<ClassificationLoss> {
    check_distribution(probabilities)?;
    if true_index >= probabilities.len() {
        return Err(Error::OutOfRange(format!(
            "true class {true_index} of {}",
            probabilities.len()
        )));
    }
    if embeddings.len() != probabilities.len() * dim {
        return Err(Error::ShapeMismatch(format!(
            "{} probabilities but {} embedding values of dim {dim}",
            probabilities.len(),
            embeddings.len()
        )));
    }
    let p_true = probabilities[true_index];
    let clamped = p_true < PROB_FLOOR;
    let loss = -p_true.max(PROB_FLOOR).ln() + lambda * weight_sq_norm;
    let mut grad = vec![0.0; dim];
    for (j, row) in embeddings.chunks_exact(dim).enumerate() {
        let coeff = probabilities[j] - if j == true_index { 1.0 } else { 0.0 };
        vecmath::axpy(&mut grad, coeff, row);
    }
    Ok(ClassificationLoss {
        loss,
        grad_projected: grad,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    const IDENTITY2: [f64; 4] = [1.0, 0.0, 0.0, 1.0];

    #[test]
    fn least_squares_examples() {
        let (l, g) = least_squares_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((l, g), (0.0, vec![0.0, 0.0]));
        let (l, g) = least_squares_loss(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(g, vec![1.0, 1.0]);
        assert!(least_squares_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn least_squares_matches_re_evaluation() {
        let p = [0.3, -1.25, 4.0, 0.0];
        let t = [1.0, 0.5, -2.0, 0.125];
        let mut want = 0.0;
        for i in 0..4 {
            want += (p[i] - t[i]) * (p[i] - t[i]);
        }
        want /= 4.0;
        let (l, _) = least_squares_loss(&p, &t).unwrap();
        assert!((l - want).abs() < 1e-12);
    }

    #[test]
    fn softmax_hand_cases() {
        assert_eq!(semantic_softmax(&IDENTITY2, 2, &[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = semantic_softmax(&IDENTITY2, 2, &[LN_2, 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let p = semantic_softmax(&IDENTITY2, 2, &[1e4, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
        assert!(semantic_softmax(&IDENTITY2, 2, &[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let l = regularized_cross_entropy(&[1.0, 0.0], 0, &IDENTITY2, 2, 3.0, 0.0).unwrap();
        assert_eq!(l.loss, 0.0);
        let l = regularized_cross_entropy(&[0.5, 0.5], 0, &IDENTITY2, 2, 3.0, 0.0).unwrap();
        assert!((l.loss - LN_2).abs() < 1e-15);
        assert_eq!(l.grad_projected, vec![-0.5, 0.5]);
        let l = regularized_cross_entropy(&[0.5, 0.5], 0, &IDENTITY2, 2, 3.0, 0.1).unwrap();
        assert!((l.loss - (LN_2 + 0.3)).abs() < 1e-15);
    }

    #[test]
    fn zero_probability_is_clamped_and_flagged() {
        let l = regularized_cross_entropy(&[0.0, 1.0], 0, &IDENTITY2, 2, 0.0, 0.0).unwrap();
        assert!(l.clamped);
        assert!((l.loss - (-PROB_FLOOR.ln())).abs() < 1e-9);
        assert!(regularized_cross_entropy(&[0.7, 0.7], 0, &IDENTITY2, 2, 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn softmax_is_a_shift_invariant_distribution(
            emb in prop::collection::vec(-3.0f64..3.0, 12),
            v in prop::collection::vec(-3.0f64..3.0, 3),
            shift in -50.0f64..50.0,
        ) {
            let p = semantic_softmax(&emb, 3, &v).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
            let logits = semantic_logits(&emb, 3, &v).unwrap();
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn cross_entropy_is_nonnegative(
            emb in prop::collection::vec(-3.0f64..3.0, 8),
            v in prop::collection::vec(-3.0f64..3.0, 2),
            t in 0usize..4,
            lambda in 0.0f64..1.0,
            w in 0.0f64..10.0,
        ) {
            let p = semantic_softmax(&emb, 2, &v).unwrap();
            let l = regularized_cross_entropy(&p, t, &emb, 2, w, lambda).unwrap();
            prop_assert!(l.loss >= 0.0);
        }
    }
}

//! Dense networks with hand-derived gradients: the semantic mapper and the
//! visual-to-semantic MLP, the convolutional classifier head, the semantic
//! softmax with its regularized cross-entropy, and Adam.

mod adam;
mod conv;
mod dense;
mod loss;
mod params;

pub use adam::{AdamConfig, AdamState};
pub use conv::{Classifier, ClassifierShape, ClassifierTrace, Conv1d};
pub use dense::{DenseLayer, Mlp, MlpTrace};
pub use loss::{
    check_distribution, least_squares_loss, regularized_cross_entropy, semantic_logits,
    semantic_softmax, softmax, ClassificationLoss, PROB_FLOOR,
};
pub use params::{
    accumulate, add_weight_penalty, ParamSet, Tensor, TensorKind, TensorStore, CHECKPOINT_HEADER,
};

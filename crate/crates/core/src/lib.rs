//! Zero-shot classification over precomputed feature vectors using a
//! clustered visual-semantic representation.
//!
//! The pipeline maps class embeddings into feature space, clusters the joint
//! visual-semantic points, represents each instance relative to the cluster
//! centroids, trains a semantic-softmax classifier on that representation,
//! refines the centroids with REINFORCE, and finally predicts unseen classes
//! by nearest-neighbor search over rectified class projections.

pub mod clustering;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod neural;
pub mod pipeline;
pub mod reinforce;
pub mod representation;
pub mod vecmath;

pub mod cli;

pub use error::{Error, Result};

//! Training orchestration, the trained-model bundle, and dataset-level
//! evaluation.

mod config;
mod eval;
mod model;
mod train;

pub use config::{AblationMode, PipelineConfig, CONFIG_KEYS};
pub use eval::{cluster_stats, evaluate, format_predictions, EvalMode, Prediction};
pub use model::TrainedModel;
pub use train::{train, RlLogLine, Trainer, TrainingLog, LOG_EVERY};

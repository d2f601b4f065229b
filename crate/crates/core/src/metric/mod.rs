//! The realism metric: two-level set-abstraction feature extractor,
//! classifier head, per-category adversary heads with gradient reversal,
//! training loop, and scene scoring.

pub mod config;
pub mod export;
pub mod forward;
pub mod loss;
pub mod params;
pub mod train;

pub use config::{Category, MetricArchConfig};
pub use export::{export_features, FeatureExportMode};
pub use forward::{
    adversary_predict, classify, extract_features, score_scene, FeatureMatrix, MetricScores,
};
pub use loss::{metric_loss, SceneSample};
pub use params::MetricParams;
pub use train::{
    evaluate_accuracies, scene_argmax_accuracy, train_metric, TrainConfig, TrainingHistory,
};

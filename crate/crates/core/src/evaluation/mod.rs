//! Quantitative checks on a fitted model: mutual information, graph
//! distance, latent traversals, and a downstream classifier.

mod classifier;
mod metrics;
mod mi;
mod report;
mod shd;
mod traversal;

pub use classifier::{train_downstream_classifier, ClassifierConfig, DownstreamClassifier};
pub use metrics::{classification_metrics, roc_auc, MetricsReport};
pub use mi::{mean_mutual_information, mutual_information_knn};
pub use report::{evaluate_model, match_factors, write_evaluation, Evaluation, EvaluationConfig, EvaluationReport, FactorMatch};
pub use shd::{shd, shd_best_match};
pub use traversal::{
    mask_energy, median, sample_images, traversal_grid, traversal_maps, write_traversal_png, DifferenceMapStack,
};

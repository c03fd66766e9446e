//! Hybrid sample selection for learning with noisy labels.
//!
//! The crate splits a training set into high- and low-confidence subsets with
//! an Otsu criterion on the model's maximum class probability, filters the
//! high-confidence part with per-class dominant eigenvectors and the
//! low-confidence part with an adaptive K-nearest-neighbour vote, and merges
//! both into a clean/noisy partition. Around that core sit a synthetic
//! noisy-label benchmark generator, a small softmax trainer that drives
//! selection every epoch, selection-quality metrics and an experiment runner.
//!
//! ```no_run
//! use anne::prelude::*;
//!
//! # fn main() -> Result<(), anne::Error> {
//! let clean = generate_clusters(&ClusterSpec::standard(7))?;
//! let noisy = inject_symmetric(&clean, 0.5, 7)?;
//! let train = normalize_features(&noisy)?;
//! let preds = Predictions::uniform(train.len(), train.class_count(), 0);
//! let result = anne_select(&train, &preds, &PipelineConfig::default());
//! # let _ = result;
//! # Ok(())
//! # }
//! ```

pub mod aknn;
pub mod confidence;
pub mod dataset;
pub mod experiment;
pub mod fine;
pub mod metrics;
pub mod noisegen;
pub mod pipeline;
pub mod rng;
pub mod trainer;

mod error;

pub use error::Error;

pub mod prelude {
    pub use crate::aknn::{adaptive_neighborhood, aknn_select, cosine_similarity, knn_vote, AknnConfig};
    pub use crate::confidence::{otsu_threshold, split_confidence, ConfidencePartition};
    pub use crate::dataset::{load_dataset, normalize_features, save_dataset, Dataset, Predictions};
    pub use crate::fine::{alignment_score, class_dominant_eigenvector, fine_select};
    pub use crate::metrics::{evaluate_accuracy, per_subset_metrics, selection_metrics, SelectionMetrics};
    pub use crate::noisegen::{
        generate_clusters, inject_asymmetric, inject_instance_dependent, inject_openset, inject_symmetric,
        ClusterSpec, NoiseKind, NoiseSpec,
    };
    pub use crate::pipeline::{
        ablation_select, anne_select, fixed_knn_select, relabel, select, small_loss_gmm_select, PipelineConfig,
        Provenance, SelectionResult, Selector,
    };
    pub use crate::trainer::{predict_probs, train_loop, History, SoftmaxModel, TrainConfig};
    pub use crate::Error;
}

//! Partitioned-latent VAE classifier.

mod checkpoint;
mod model;
mod partition;

pub use checkpoint::{load_classifier, load_model, save_classifier, save_model};
pub use model::{
    checksum, BoundChroma, ChromaModel, ClassifierScope, HybridLossConfig, HybridTerms, LatentCode, LossComponents,
    ModelSpec, ReconVariance, StepOutput, Subspace, Z2Head,
};
pub use partition::PartitionSpec;

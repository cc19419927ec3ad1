//! Two-stage Chroma-VAE training and the baselines.

mod config;
mod fit;
mod jtt;
mod methods;
mod trace;

pub use config::{jtt_grid, HeadKind, JttConfig, Method, TrainConfig, JTT_ALPHA_GRID, JTT_T_GRID};
pub use fit::predict_labels;
pub use jtt::{jtt_error_sets, jtt_sweep, jtt_weights, train_jtt, train_jtt_final, JttOutcome};
pub use methods::{
    model_spec, train_chroma_stage1, train_chroma_stage2, train_naive_classifier, train_naive_independent,
    train_naive_vae_class, train_xtilde2_classifier,
};
pub use trace::{EpochRecord, TrainStatus, TrainTrace};

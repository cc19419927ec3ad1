//! Config-driven experiment runs: dataset synthesis, training, evaluation,
//! diagnostics and ablation sweeps, each indexed by a run manifest.

mod config;
mod manifest;
mod runner;

pub use config::{
    DatasetConfig, DiagnoseConfig, ExperimentConfig, JttSelection, LossConfig, ModelConfig, TrainerConfig,
};
pub use manifest::{Artifact, ArtifactLog, RunManifest, StageRecord, StageStatus, MANIFEST_FILE};
pub use runner::{
    ablation_accuracy, ablation_cells, cmd_ablate, cmd_diagnose, cmd_eval, cmd_synth, cmd_train, load_split_snapshot,
    load_trained, resolve_data_dir, synthesize, AblationAxis, AblationRow, DiagnoseOutput, EvalOutput, LoadedModel,
    ProbeResult, RunOptions, ABLATION_BETA, ABLATION_DIM_Z, ABLATION_Z_P, DATA_DIR_ENV, SPLITS,
};

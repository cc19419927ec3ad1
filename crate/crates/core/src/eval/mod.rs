//! Accuracy and group-robustness metrics, latent-shift diagnostics and
//! subspace probes.

mod compare;
mod latent;
mod metrics;
mod probe;

pub use compare::{compare_methods, ComparisonRow, ComparisonTable, SplitScore};
pub use latent::{latent_shift_profile, LatentShiftProfile};
pub use metrics::{evaluate, score, EvalHead, GroupAccuracy, MetricsReport, Predictor, EVAL_NOISE_SEED};
pub use probe::{subspace_probe, PROBE_STEPS};

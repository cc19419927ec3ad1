//! Layers, losses, the Adam optimizer and a kNN classifier.

mod adam;
mod knn;
mod layers;
mod loss;

pub use adam::AdamState;
pub use knn::{default_k, KnnClassifier};
pub use layers::{argmax_rows, Activation, AffineLayer, BoundAffine, BoundMlp, Mlp};
pub use loss::{gaussian_kl, gaussian_recon_nll, softmax_cross_entropy, weighted_cross_entropy};

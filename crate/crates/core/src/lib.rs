pub mod archive;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod imaging;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod trainers;
pub mod vae;

pub use error::{Error, Result};
pub use rng::RngState;

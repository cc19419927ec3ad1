use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vae::{HybridLossConfig, PartitionSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Chroma,
    NaiveClass,
    NaiveVaeClass,
    NaiveIndependent,
    Jtt,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Chroma => "chroma",
            Method::NaiveClass => "naive-class",
            Method::NaiveVaeClass => "naive-vae-class",
            Method::NaiveIndependent => "naive-independent",
            Method::Jtt => "jtt",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Classifier trained on top of a frozen stage-1 model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Mlp,
    Knn,
    Xtilde2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub method: Method,
    /// Stage-1 epochs for VAE methods; all epochs for image classifiers.
    pub epochs: usize,
    /// Epochs for stage-2 heads and the classifier phase of
    /// naive-independent.
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub loss: HybridLossConfig,
    pub partition: PartitionSpec,
    pub head: HeadKind,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    /// Hidden widths of the classifier that reads `μ₁` (or `μ`).
    pub classifier_hidden: Vec<usize>,
    /// Hidden widths of the stage-2 MLP head.
    pub z2_hidden: Vec<usize>,
    /// Hidden widths of image-space classifiers (naive, JTT, x̃₂).
    pub image_classifier_hidden: Vec<usize>,
    /// `x̃₂` draws per example per epoch.
    pub xtilde2_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Chroma,
            epochs: 30,
            stage2_epochs: 20,
            batch_size: 128,
            lr: 1e-3,
            seed: 0,
            loss: HybridLossConfig::default(),
            partition: PartitionSpec::new(32, 0.25).expect("valid default partition"),
            head: HeadKind::Knn,
            encoder_hidden: vec![512, 256],
            decoder_hidden: vec![256, 512],
            classifier_hidden: vec![64],
            z2_hidden: vec![64],
            image_classifier_hidden: vec![512, 256],
            xtilde2_samples: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.stage2_epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr = {} must be positive and finite", self.lr)));
        }
        if self.xtilde2_samples == 0 {
            return Err(Error::Config("xtilde2_samples must be >= 1".into()));
        }
        let widths = [
            &self.encoder_hidden,
            &self.decoder_hidden,
            &self.classifier_hidden,
            &self.z2_hidden,
            &self.image_classifier_hidden,
        ];
        if widths.iter().any(|w| w.contains(&0)) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        self.loss.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JttConfig {
    /// Epochs of the error-set identification model.
    #[serde(rename = "T")]
    pub t: usize,
    pub alpha: u32,
}

impl JttConfig {
    pub fn validate(&self, epochs: usize) -> Result<()> {
        if self.t == 0 || self.alpha == 0 {
            return Err(Error::Config("JTT needs T >= 1 and alpha >= 1".into()));
        }
        if self.t > epochs {
            return Err(Error::Config(format!(
                "JTT T = {} exceeds the epoch budget {epochs}",
                self.t
            )));
        }
        Ok(())
    }
}

pub const JTT_T_GRID: [usize; 4] = [1, 3, 5, 10];
pub const JTT_ALPHA_GRID: [u32; 4] = [2, 5, 50, 100];

/// The 16-cell sweep grid, `T` major.
pub fn jtt_grid() -> Vec<JttConfig> {
    JTT_T_GRID
        .iter()
        .flat_map(|&t| JTT_ALPHA_GRID.iter().map(move |&alpha| JttConfig { t, alpha }))
        .collect()
}

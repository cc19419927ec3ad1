use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::Corner;
use crate::error::{Error, Result};
use crate::trainers::{jtt_grid, HeadKind, JttConfig, Method, TrainConfig};
use crate::vae::{HybridLossConfig, PartitionSpec, ReconVariance};

const MNIST_TRAIN: usize = 60_000;
const MNIST_TEST: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Train, in-distribution and OOD splits differing only in `p_c`.
    ColoredMnist {
        #[serde(default = "defaults::train_size")]
        train_size: usize,
        #[serde(default = "defaults::test_size")]
        test_size: usize,
        #[serde(default = "defaults::p_d")]
        p_d: f64,
        #[serde(default = "defaults::p_c_train")]
        p_c_train: f64,
        #[serde(default = "defaults::p_c_ood")]
        p_c_ood: f64,
        #[serde(default)]
        seed: u64,
    },
    /// The OOD split moves the patch onto every negative example.
    Patch {
        #[serde(default = "defaults::train_size")]
        train_size: usize,
        #[serde(default = "defaults::test_size")]
        test_size: usize,
        #[serde(default = "defaults::positive_prob")]
        positive_prob: f64,
        #[serde(default = "defaults::patch_size")]
        patch_size: usize,
        #[serde(default = "defaults::corner")]
        corner: Corner,
        #[serde(default)]
        seed: u64,
    },
    /// The in-distribution test split keeps the train minority fraction;
    /// the OOD split uses `test_minority_fraction`.
    Dominoes {
        #[serde(default)]
        minority_fraction: f64,
        #[serde(default = "defaults::half")]
        test_minority_fraction: f64,
        /// Examples per class; `None` uses every available source image.
        #[serde(default)]
        per_class: Option<usize>,
        #[serde(default)]
        test_per_class: Option<usize>,
        #[serde(default)]
        seed: u64,
    },
}

mod defaults {
    use crate::datasets::Corner;

    pub fn train_size() -> usize {
        50_000
    }
    pub fn test_size() -> usize {
        10_000
    }
    pub fn p_d() -> f64 {
        0.25
    }
    pub fn p_c_train() -> f64 {
        0.1
    }
    pub fn p_c_ood() -> f64 {
        0.9
    }
    pub fn positive_prob() -> f64 {
        0.9
    }
    pub fn patch_size() -> usize {
        10
    }
    pub fn corner() -> Corner {
        Corner::BottomRight
    }
    pub fn half() -> f64 {
        0.5
    }
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::ColoredMnist {
            train_size: defaults::train_size(),
            test_size: defaults::test_size(),
            p_d: defaults::p_d(),
            p_c_train: defaults::p_c_train(),
            p_c_ood: defaults::p_c_ood(),
            seed: 0,
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("dataset.{name} = {p} must lie in [0, 1]")))
    }
}

fn check_size(name: &str, n: usize, max: usize) -> Result<()> {
    if (1..=max).contains(&n) {
        Ok(())
    } else {
        Err(Error::Config(format!("dataset.{name} = {n} must lie in 1..={max}")))
    }
}

impl DatasetConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            DatasetConfig::ColoredMnist { .. } => "colored-mnist",
            DatasetConfig::Patch { .. } => "patch",
            DatasetConfig::Dominoes { .. } => "dominoes",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DatasetConfig::ColoredMnist {
                train_size,
                test_size,
                p_d,
                p_c_train,
                p_c_ood,
                ..
            } => {
                check_size("train_size", train_size, MNIST_TRAIN)?;
                check_size("test_size", test_size, MNIST_TEST)?;
                check_prob("p_d", p_d)?;
                check_prob("p_c_train", p_c_train)?;
                check_prob("p_c_ood", p_c_ood)
            }
            DatasetConfig::Patch {
                train_size,
                test_size,
                positive_prob,
                patch_size,
                ..
            } => {
                check_size("train_size", train_size, MNIST_TRAIN)?;
                check_size("test_size", test_size, MNIST_TEST)?;
                check_prob("positive_prob", positive_prob)?;
                check_size("patch_size", patch_size, 28)
            }
            DatasetConfig::Dominoes {
                minority_fraction,
                test_minority_fraction,
                per_class,
                test_per_class,
                ..
            } => {
                check_prob("minority_fraction", minority_fraction)?;
                check_prob("test_minority_fraction", test_minority_fraction)?;
                if per_class == Some(0) || test_per_class == Some(0) {
                    return Err(Error::Config("dataset per_class must be >= 1".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dim_z: usize,
    pub z_p: f64,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub z2_hidden: Vec<usize>,
    pub image_classifier_hidden: Vec<usize>,
    pub recon_variance: ReconVariance,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            dim_z: t.partition.dim_z(),
            z_p: t.partition.z_p(),
            encoder_hidden: t.encoder_hidden,
            decoder_hidden: t.decoder_hidden,
            classifier_hidden: t.classifier_hidden,
            z2_hidden: t.z2_hidden,
            image_classifier_hidden: t.image_classifier_hidden,
            recon_variance: ReconVariance::Fixed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda: f64,
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        let l = HybridLossConfig::default();
        Self {
            lambda: l.lambda,
            beta: l.beta,
        }
    }
}

/// Which JTT cells `train` runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JttSelection {
    /// The full 16-cell `T × α` grid.
    Grid,
    Cells(Vec<JttConfig>),
}

impl JttSelection {
    pub fn cells(&self) -> Vec<JttConfig> {
        match self {
            JttSelection::Grid => jtt_grid(),
            JttSelection::Cells(c) => c.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub method: Method,
    pub epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Stage-2 head for `chroma`.
    pub head: HeadKind,
    pub xtilde2_samples: usize,
    pub jtt: JttSelection,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            method: t.method,
            epochs: t.epochs,
            stage2_epochs: t.stage2_epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            head: t.head,
            xtilde2_samples: t.xtilde2_samples,
            jtt: JttSelection::Grid,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseConfig {
    /// Test examples (from the start of the in-distribution split) that
    /// get a partial-reconstruction panel.
    pub examples: usize,
    pub samples: usize,
    /// Cap on training examples fed to the latent-shift and probe
    /// diagnostics; `None` uses all of them.
    pub max_examples: Option<usize>,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            examples: 3,
            samples: 8,
            max_examples: None,
        }
    }
}

/// One experiment, as read from a JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Directory holding `mnist/` and `fashion/` IDX files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub diagnose: DiagnoseConfig,
}

impl ExperimentConfig {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            seed: 0,
            data_dir: None,
            output_dir: None,
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            trainer: TrainerConfig::default(),
            diagnose: DiagnoseConfig::default(),
        }
    }

    /// Parses and validates.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The config minus machine-local paths, as echoed into reports so that
    /// runs in different directories produce identical outputs.
    pub fn echo(&self) -> serde_json::Value {
        let mut c = self.clone();
        c.data_dir = None;
        c.output_dir = None;
        serde_json::to_value(c).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        {
            return Err(Error::Config(format!(
                "name {:?} must be non-empty and use only [A-Za-z0-9._-]",
                self.name
            )));
        }
        self.dataset.validate()?;
        if self.diagnose.samples == 0 {
            return Err(Error::Config("diagnose.samples must be >= 1".into()));
        }
        let train = self.train_config()?;
        train.validate()?;
        if self.trainer.method == Method::Jtt {
            let cells = self.trainer.jtt.cells();
            if cells.is_empty() {
                return Err(Error::Config("trainer.jtt selects no cells".into()));
            }
            for c in &cells {
                c.validate(train.epochs)?;
            }
        }
        Ok(())
    }

    /// The trainer settings for this experiment.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let partition =
            PartitionSpec::new(self.model.dim_z, self.model.z_p).map_err(|e| Error::Config(format!("model: {e}")))?;
        Ok(TrainConfig {
            method: self.trainer.method,
            epochs: self.trainer.epochs,
            stage2_epochs: self.trainer.stage2_epochs,
            batch_size: self.trainer.batch_size,
            lr: self.trainer.lr,
            seed: self.seed,
            loss: HybridLossConfig {
                lambda: self.loss.lambda,
                beta: self.loss.beta,
                recon_variance: self.model.recon_variance,
            },
            partition,
            head: self.trainer.head,
            encoder_hidden: self.model.encoder_hidden.clone(),
            decoder_hidden: self.model.decoder_hidden.clone(),
            classifier_hidden: self.model.classifier_hidden.clone(),
            z2_hidden: self.model.z2_hidden.clone(),
            image_classifier_hidden: self.model.image_classifier_hidden.clone(),
            xtilde2_samples: self.trainer.xtilde2_samples,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_json(r#"{"name": "cm"}"#).unwrap();
        let t = c.train_config().unwrap();
        assert_eq!((t.partition.dim_z(), t.partition.dim_z1()), (32, 8));
        assert_eq!((t.loss.lambda, t.loss.beta), (100.0, 1.0));
        assert_eq!(c.dataset, DatasetConfig::default());
        assert_eq!(c.trainer.jtt.cells().len(), 16);
    }

    #[test]
    fn round_trip() {
        let mut c = ExperimentConfig::new("x");
        c.dataset = DatasetConfig::Dominoes {
            minority_fraction: 0.0,
            test_minority_fraction: 0.5,
            per_class: Some(100),
            test_per_class: None,
            seed: 4,
        };
        c.trainer.method = Method::Jtt;
        c.trainer.jtt = JttSelection::Cells(vec![JttConfig { t: 1, alpha: 5 }]);
        assert_eq!(ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected_everywhere() {
        for text in [
            r#"{"name": "a", "sed": 1}"#,
            r#"{"name": "a", "model": {"dimz": 8}}"#,
            r#"{"name": "a", "loss": {"lamda": 8}}"#,
            r#"{"name": "a", "trainer": {"epoch": 8}}"#,
            r#"{"name": "a", "dataset": {"kind": "colored-mnist", "pc": 0.1}}"#,
            r#"{"name": "a", "dataset": {"kind": "mnist"}}"#,
        ] {
            assert!(
                matches!(ExperimentConfig::from_json(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn malformed_values_rejected() {
        for text in [
            r#"{"name": "a", "dataset": {"kind": "colored-mnist", "p_c_train": 1.5}}"#,
            r#"{"name": "a", "dataset": {"kind": "colored-mnist", "train_size": 70000}}"#,
            r#"{"name": "a", "dataset": {"kind": "patch", "patch_size": 40}}"#,
            r#"{"name": "a", "model": {"z_p": 1.0}}"#,
            r#"{"name": "a", "loss": {"beta": 0}}"#,
            r#"{"name": "a", "loss": {"lambda": -1}}"#,
            r#"{"name": "a", "trainer": {"lr": 0}}"#,
            r#"{"name": "a", "trainer": {"method": "jtt", "epochs": 5}}"#,
            r#"{"name": "a b"}"#,
            r#"{"name": "a", "diagnose": {"samples": 0}}"#,
        ] {
            assert!(
                matches!(ExperimentConfig::from_json(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn echo_drops_paths() {
        let mut c = ExperimentConfig::new("a");
        let plain = c.echo();
        c.output_dir = Some("/tmp/x".into());
        c.data_dir = Some("/data".into());
        assert_eq!(c.echo(), plain);
    }
}

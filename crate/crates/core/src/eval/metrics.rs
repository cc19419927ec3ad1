use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archive::write_atomic;
use crate::datasets::{Distribution, ShortcutDataset};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::rng::RngState;
use crate::trainers::predict_labels;
use crate::vae::ChromaModel;

/// Fixed noise seed for heads whose prediction is stochastic (`x̃₂`), so
/// that evaluation is a pure function of model and data.
pub const EVAL_NOISE_SEED: u64 = 0x5eed_e7a1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalHead {
    /// Stage-1 classifier on `μ₁` (or on the full `μ` for full-scope models).
    Z1,
    /// Stage-2 head on `μ₂`.
    Z2,
    /// Image-space classifier.
    Naive,
    /// Image classifier on partial reconstructions `x̃₂`.
    Xtilde2,
}

impl EvalHead {
    pub fn tag(self) -> &'static str {
        match self {
            EvalHead::Z1 => "z1",
            EvalHead::Z2 => "z2",
            EvalHead::Naive => "naive",
            EvalHead::Xtilde2 => "xtilde2",
        }
    }
}

impl fmt::Display for EvalHead {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Anything `evaluate` can score.
#[derive(Clone, Copy, Debug)]
pub enum Predictor<'a> {
    Chroma(&'a ChromaModel),
    Image(&'a Mlp),
}

impl Predictor<'_> {
    /// Heads this predictor can answer for.
    pub fn heads(&self) -> Vec<EvalHead> {
        match self {
            Predictor::Image(_) => vec![EvalHead::Naive],
            Predictor::Chroma(m) => {
                let mut h = vec![EvalHead::Z1];
                if m.z2_head.is_some() {
                    h.push(EvalHead::Z2);
                }
                if m.xtilde2_classifier.is_some() {
                    h.push(EvalHead::Xtilde2);
                }
                h
            }
        }
    }

    pub fn predict(&self, ds: &ShortcutDataset, head: EvalHead) -> Result<Vec<usize>> {
        match (self, head) {
            (Predictor::Image(m), EvalHead::Naive) => predict_labels(m, &ds.images),
            (Predictor::Chroma(m), EvalHead::Z1) => m.predict_stage1(&ds.images),
            (Predictor::Chroma(m), EvalHead::Z2) => m.predict_z2(&ds.images),
            (Predictor::Chroma(m), EvalHead::Xtilde2) => {
                m.predict_xtilde2(&ds.images, &mut RngState::new(EVAL_NOISE_SEED))
            }
            (Predictor::Image(_), h) => Err(Error::contract(format!("an image classifier has no {h} head"))),
            (Predictor::Chroma(_), EvalHead::Naive) => Err(Error::contract("a chroma model has no naive image head")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub s: usize,
    pub y: usize,
    pub count: usize,
    pub correct: usize,
    /// `None` for an empty group.
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub head: EvalHead,
    /// Dataset family shared by all splits being compared.
    pub dataset: String,
    pub distribution: Distribution,
    pub n: usize,
    /// Example-weighted mean accuracy.
    pub accuracy: f64,
    pub groups: Vec<GroupAccuracy>,
    /// Minimum over non-empty groups.
    pub worst_group: f64,
    pub seed: u64,
    pub config: serde_json::Value,
}

impl MetricsReport {
    /// Tags the report with the run it came from.
    pub fn labeled(mut self, method: &str, seed: u64, config: serde_json::Value) -> Self {
        self.method = method.to_string();
        self.seed = seed;
        self.config = config;
        self
    }

    pub fn group(&self, s: usize, y: usize) -> Option<&GroupAccuracy> {
        self.groups.iter().find(|g| g.s == s && g.y == y)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Scores `predictions` against the dataset's labels, per group.
pub fn score(ds: &ShortcutDataset, predictions: &[usize], head: EvalHead) -> Result<MetricsReport> {
    if predictions.len() != ds.len() {
        return Err(Error::dim("score", &[ds.len()], &[predictions.len()]));
    }
    if ds.is_empty() {
        return Err(Error::contract("cannot evaluate on an empty dataset"));
    }
    let mut count = vec![0usize; ds.num_groups()];
    let mut correct = vec![0usize; ds.num_groups()];
    for (i, (&p, &y)) in predictions.iter().zip(&ds.y).enumerate() {
        let g = ds.group_index(i);
        count[g] += 1;
        correct[g] += usize::from(p == y);
    }
    let groups: Vec<GroupAccuracy> = (0..ds.num_groups())
        .map(|g| GroupAccuracy {
            s: g / ds.num_classes,
            y: g % ds.num_classes,
            count: count[g],
            correct: correct[g],
            accuracy: (count[g] > 0).then(|| correct[g] as f64 / count[g] as f64),
        })
        .collect();
    let worst_group = groups.iter().filter_map(|g| g.accuracy).fold(f64::INFINITY, f64::min);
    Ok(MetricsReport {
        method: head.tag().to_string(),
        head,
        dataset: ds.params.family().to_string(),
        distribution: ds.distribution,
        n: ds.len(),
        accuracy: correct.iter().sum::<usize>() as f64 / ds.len() as f64,
        groups,
        worst_group,
        seed: 0,
        config: serde_json::Value::Null,
    })
}

/// Average, per-group and worst-group accuracy of one head on `ds`.
pub fn evaluate(model: Predictor<'_>, ds: &ShortcutDataset, head: EvalHead) -> Result<MetricsReport> {
    let predictions = model.predict(ds, head)?;
    score(ds, &predictions, head)
}

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archive::write_atomic;
use crate::error::{Error, Result};

/// One completed epoch. Loss fields a trainer does not produce are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub recon: Option<f64>,
    pub kl: Option<f64>,
    pub ce: Option<f64>,
    pub total: f64,
    pub train_acc: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum TrainStatus {
    Completed,
    /// Training stopped; the returned model is the one from the end of
    /// `last_good_epoch` (0 = initialization).
    Diverged {
        last_good_epoch: usize,
        detail: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TraceHeader {
    method: String,
    stage: String,
    seed: u64,
    status: TrainStatus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainTrace {
    pub method: String,
    pub stage: String,
    pub seed: u64,
    pub records: Vec<EpochRecord>,
    pub status: TrainStatus,
}

impl TrainTrace {
    pub fn new(method: &str, stage: &str, seed: u64) -> Self {
        Self {
            method: method.to_string(),
            stage: stage.to_string(),
            seed,
            records: Vec::new(),
            status: TrainStatus::Completed,
        }
    }

    pub fn diverged(&self) -> bool {
        matches!(self.status, TrainStatus::Diverged { .. })
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Copy with wall-clock fields zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        let mut t = self.clone();
        for r in &mut t.records {
            r.seconds = 0.0;
        }
        t
    }

    /// A header line followed by one JSON object per epoch.
    pub fn to_jsonl(&self) -> Result<String> {
        let header = TraceHeader {
            method: self.method.clone(),
            stage: self.stage.clone(),
            seed: self.seed,
            status: self.status.clone(),
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: TraceHeader =
            serde_json::from_str(lines.next().ok_or_else(|| Error::contract("empty trace file"))?)?;
        let records = lines
            .map(serde_json::from_str)
            .collect::<Result<Vec<EpochRecord>, _>>()?;
        Ok(Self {
            method: header.method,
            stage: header.stage,
            seed: header.seed,
            records,
            status: header.status,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

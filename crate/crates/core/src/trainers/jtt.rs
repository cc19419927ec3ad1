use std::collections::BTreeMap;

use log::{info, warn};

use crate::datasets::ShortcutDataset;
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::rng::RngState;

use super::config::{JttConfig, TrainConfig};
use super::fit::{fit_mlp, predict_labels, FitOptions};
use super::methods::{image_classifier, STREAM_IMAGE_CLF};
use super::trace::TrainTrace;

#[derive(Clone, Debug)]
pub struct JttOutcome {
    pub config: JttConfig,
    /// Training examples the identification model got wrong.
    pub error_set_size: usize,
    pub model: Mlp,
    pub trace: TrainTrace,
}

/// Loss weight `alpha` for examples in the error set, 1 elsewhere.
pub fn jtt_weights(errors: &[bool], alpha: u32) -> Vec<f32> {
    errors.iter().map(|&e| if e { alpha as f32 } else { 1.0 }).collect()
}

/// Trains the identification model once for `max(ts)` epochs and returns
/// the misclassification mask after each epoch count in `ts`. Because the
/// schedule is a pure function of the epoch index, the snapshot after `T`
/// epochs equals a run stopped at `T`.
pub fn jtt_error_sets(
    data: &ShortcutDataset,
    ts: &[usize],
    cfg: &TrainConfig,
    rng: &RngState,
) -> Result<(BTreeMap<usize, Vec<bool>>, TrainTrace)> {
    cfg.validate()?;
    let max_t = ts
        .iter()
        .copied()
        .max()
        .ok_or_else(|| Error::contract("no JTT epoch counts given"))?;
    let rng = rng.derive(STREAM_IMAGE_CLF);
    let mut mlp = image_classifier(cfg, data, &rng)?;
    let mut trace = TrainTrace::new(cfg.method.tag(), "identification", rng.seed());
    let mut sets = BTreeMap::new();
    let mut failure = None;
    let opts = FitOptions {
        epochs: max_t,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        weights: None,
        passes: 1,
    };
    fit_mlp(
        &mut mlp,
        &data.y,
        &opts,
        &rng,
        &mut trace,
        |idx, _| data.images.gather_rows(idx),
        |epoch, m| {
            if ts.contains(&epoch) && failure.is_none() {
                match predict_labels(m, &data.images) {
                    Ok(pred) => {
                        sets.insert(epoch, pred.iter().zip(&data.y).map(|(p, y)| p != y).collect());
                    }
                    Err(e) => failure = Some(e),
                }
            }
        },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    if sets.len() != ts.iter().collect::<std::collections::BTreeSet<_>>().len() {
        return Err(Error::Diverged {
            epoch: trace.records.len(),
            detail: "identification model diverged before the requested epoch".into(),
        });
    }
    Ok((sets, trace))
}

/// Final JTT model: fresh initialization, error-set examples weighted by
/// `alpha`, trained for `cfg.epochs`.
pub fn train_jtt_final(
    data: &ShortcutDataset,
    errors: &[bool],
    jtt: JttConfig,
    cfg: &TrainConfig,
    rng: &RngState,
) -> Result<JttOutcome> {
    jtt.validate(cfg.epochs)?;
    let error_set_size = errors.iter().filter(|&&e| e).count();
    if error_set_size == 0 {
        warn!(
            "JTT error set is empty for T = {}; training with uniform weights",
            jtt.t
        );
    }
    let weights = jtt_weights(errors, jtt.alpha);
    let rng = rng.derive(STREAM_IMAGE_CLF);
    let mut mlp = image_classifier(cfg, data, &rng)?;
    let mut trace = TrainTrace::new(
        cfg.method.tag(),
        &format!("final-T{}-a{}", jtt.t, jtt.alpha),
        rng.seed(),
    );
    let opts = FitOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        weights: Some(&weights),
        passes: 1,
    };
    fit_mlp(
        &mut mlp,
        &data.y,
        &opts,
        &rng,
        &mut trace,
        |idx, _| data.images.gather_rows(idx),
        |_, _| {},
    )?;
    info!("JTT T={} alpha={}: error set {error_set_size}", jtt.t, jtt.alpha);
    Ok(JttOutcome {
        config: jtt,
        error_set_size,
        model: mlp,
        trace,
    })
}

pub fn train_jtt(data: &ShortcutDataset, jtt: JttConfig, cfg: &TrainConfig, rng: &RngState) -> Result<JttOutcome> {
    jtt.validate(cfg.epochs)?;
    let (sets, _) = jtt_error_sets(data, &[jtt.t], cfg, rng)?;
    train_jtt_final(data, &sets[&jtt.t], jtt, cfg, rng)
}

/// Runs every grid cell, sharing one identification run across cells.
pub fn jtt_sweep(
    data: &ShortcutDataset,
    grid: &[JttConfig],
    cfg: &TrainConfig,
    rng: &RngState,
) -> Result<Vec<JttOutcome>> {
    for j in grid {
        j.validate(cfg.epochs)?;
    }
    let ts: Vec<usize> = grid.iter().map(|j| j.t).collect();
    let (sets, _) = jtt_error_sets(data, &ts, cfg, rng)?;
    grid.iter()
        .map(|&j| train_jtt_final(data, &sets[&j.t], j, cfg, rng))
        .collect()
}

//! Minibatch loops shared by every trainer.

use std::time::Instant;

use log::{info, warn};

use crate::error::{Error, Result};
use crate::nn::{argmax_rows, AdamState, Mlp};
use crate::rng::RngState;
use crate::tensor::{Tape, Tensor};
use crate::vae::{ChromaModel, HybridLossConfig};

use super::trace::{EpochRecord, TrainStatus, TrainTrace};

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_NOISE: u64 = 3;
const PREDICT_CHUNK: usize = 4096;

pub(crate) fn init_stream(rng: &RngState) -> RngState {
    rng.derive(STREAM_INIT)
}

/// Row-wise argmax of `mlp` over `x`, in chunks.
pub fn predict_labels(mlp: &Mlp, x: &Tensor) -> Result<Vec<usize>> {
    let (n, _) = x.dims2()?;
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(PREDICT_CHUNK) {
        let end = (start + PREDICT_CHUNK).min(n);
        out.extend(argmax_rows(&mlp.predict(&x.slice_rows(start, end)?)?));
    }
    Ok(out)
}

fn epoch_order(n: usize, passes: usize, shuffle: &RngState, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n * passes).map(|i| i % n).collect();
    shuffle.derive(epoch as u64).shuffle(&mut order);
    order
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NonFinite(_))
}

pub(crate) struct FitOptions<'a> {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Per-example loss weights; a batch loss is normalized by its weight sum.
    pub weights: Option<&'a [f32]>,
    /// Visits of each example per epoch.
    pub passes: usize,
}

/// Cross-entropy training of `mlp`. `batch_input` maps example indices to
/// an input batch and may draw from the per-epoch noise stream.
/// `on_epoch` sees the model after each completed epoch.
pub(crate) fn fit_mlp<F, E>(
    mlp: &mut Mlp,
    labels: &[usize],
    opts: &FitOptions<'_>,
    rng: &RngState,
    trace: &mut TrainTrace,
    mut batch_input: F,
    mut on_epoch: E,
) -> Result<()>
where
    F: FnMut(&[usize], &mut RngState) -> Result<Tensor>,
    E: FnMut(usize, &Mlp),
{
    let n = labels.len();
    if n == 0 {
        return Err(Error::contract("cannot train on an empty dataset"));
    }
    if let Some(w) = opts.weights {
        if w.len() != n {
            return Err(Error::dim("fit weights", &[n], &[w.len()]));
        }
    }
    let names = mlp.param_names("clf");
    let mut adam = AdamState::new(opts.lr as f32);
    let shuffle = rng.derive(STREAM_SHUFFLE);
    let noise = rng.derive(STREAM_NOISE);

    for epoch in 1..=opts.epochs {
        let started = Instant::now();
        let backup = mlp.clone();
        let mut nrng = noise.derive(epoch as u64);
        let (mut loss_sum, mut seen, mut correct) = (0.0f64, 0usize, 0usize);
        for idx in epoch_order(n, opts.passes.max(1), &shuffle, epoch).chunks(opts.batch_size) {
            let x = batch_input(idx, &mut nrng)?;
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let w: Option<Vec<f32>> = opts
                .weights
                .map(|w| idx.iter().map(|&i| w[i]).collect::<Vec<_>>())
                .filter(|w| w.iter().any(|&v| v != 1.0));
            match mlp_step(mlp, &mut adam, &names, x, &y, w.as_deref()) {
                Ok((loss, hits)) => {
                    loss_sum += loss * idx.len() as f64;
                    seen += idx.len();
                    correct += hits;
                }
                Err(e) if is_divergence(&e) => {
                    warn!("{} diverged in epoch {epoch}: {e}", trace.stage);
                    *mlp = backup;
                    trace.status = TrainStatus::Diverged {
                        last_good_epoch: epoch - 1,
                        detail: e.to_string(),
                    };
                    return Ok(());
                }
                Err(e) => return Err(e),
            }
        }
        let record = EpochRecord {
            epoch,
            recon: None,
            kl: None,
            ce: Some(loss_sum / seen as f64),
            total: loss_sum / seen as f64,
            train_acc: Some(correct as f64 / seen as f64),
            seconds: started.elapsed().as_secs_f64(),
        };
        info!(
            "{}/{} epoch {epoch}: loss {:.4} acc {:.4} ({:.1}s)",
            trace.method,
            trace.stage,
            record.total,
            record.train_acc.unwrap_or(0.0),
            record.seconds
        );
        trace.records.push(record);
        on_epoch(epoch, mlp);
    }
    Ok(())
}

/// One Adam step; returns the batch loss and the number of correct
/// predictions.
fn mlp_step(
    mlp: &mut Mlp,
    adam: &mut AdamState,
    names: &[String],
    x: Tensor,
    y: &[usize],
    weights: Option<&[f32]>,
) -> Result<(f64, usize)> {
    let tape = Tape::<f32>::new();
    let bound = mlp.bind(&tape, true);
    let logits = bound.forward(tape.constant(x))?;
    let loss = logits.softmax_cross_entropy(y, weights)?;
    let value = loss.value().item() as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite("classifier loss".into()));
    }
    let hits = argmax_rows(&logits.value())
        .iter()
        .zip(y)
        .filter(|(p, t)| p == t)
        .count();
    let mut grads = tape.backward(loss)?;
    let grads: Vec<Tensor> = bound.vars().iter().map(|&v| grads.take_or_zeros(v)).collect();
    adam.step(mlp.params_mut(), &grads, names)?;
    Ok((value, hits))
}

/// Joint VAE + classifier training on the hybrid objective. With
/// `labels = None` the classifier is never evaluated and `cfg.lambda` must be 0.
pub(crate) fn fit_hybrid(
    model: &mut ChromaModel,
    images: &Tensor,
    labels: Option<&[usize]>,
    cfg: &HybridLossConfig,
    opts: &FitOptions<'_>,
    rng: &RngState,
    trace: &mut TrainTrace,
) -> Result<()> {
    let (n, _) = images.dims2()?;
    if n == 0 {
        return Err(Error::contract("cannot train on an empty dataset"));
    }
    let names = model.param_names();
    let dim_z = model.partition().dim_z();
    let mut adam = AdamState::new(opts.lr as f32);
    let shuffle = rng.derive(STREAM_SHUFFLE);
    let noise = rng.derive(STREAM_NOISE);

    for epoch in 1..=opts.epochs {
        let started = Instant::now();
        let backup = model.clone();
        let mut nrng = noise.derive(epoch as u64);
        let mut sums = [0.0f64; 4];
        let (mut seen, mut correct) = (0usize, 0usize);
        for idx in epoch_order(n, 1, &shuffle, epoch).chunks(opts.batch_size) {
            let x = images.gather_rows(idx)?;
            let y: Option<Vec<usize>> = labels.map(|l| idx.iter().map(|&i| l[i]).collect());
            let eps = Tensor::new(&[idx.len(), dim_z], nrng.normal_vec(idx.len() * dim_z))?;
            let step = model.loss_and_grads(&x, y.as_deref(), &eps, cfg).and_then(|out| {
                if out.components.kl.is_nan() || out.components.kl < 0.0 {
                    return Err(Error::NonFinite(format!("kl = {}", out.components.kl)));
                }
                adam.step(model.params_mut(), &out.grads, &names)?;
                Ok(out)
            });
            match step {
                Ok(out) => {
                    let c = out.components;
                    let b = idx.len() as f64;
                    sums[0] += c.recon * b;
                    sums[1] += c.kl * b;
                    sums[2] += c.ce.unwrap_or(0.0) * b;
                    sums[3] += c.total * b;
                    seen += idx.len();
                    if let (Some(p), Some(y)) = (out.predictions, &y) {
                        correct += p.iter().zip(y).filter(|(a, b)| a == b).count();
                    }
                }
                Err(e) if is_divergence(&e) => {
                    warn!("{} diverged in epoch {epoch}: {e}", trace.stage);
                    *model = backup;
                    trace.status = TrainStatus::Diverged {
                        last_good_epoch: epoch - 1,
                        detail: e.to_string(),
                    };
                    return Ok(());
                }
                Err(e) => return Err(e),
            }
        }
        let mean = |v: f64| v / seen as f64;
        let record = EpochRecord {
            epoch,
            recon: Some(mean(sums[0])),
            kl: Some(mean(sums[1])),
            ce: labels.map(|_| mean(sums[2])),
            total: mean(sums[3]),
            train_acc: labels.map(|_| correct as f64 / seen as f64),
            seconds: started.elapsed().as_secs_f64(),
        };
        info!(
            "{}/{} epoch {epoch}: total {:.3} recon {:.3} kl {:.3} ce {:?} acc {:?} ({:.1}s)",
            trace.method,
            trace.stage,
            record.total,
            record.recon.unwrap_or(0.0),
            record.kl.unwrap_or(0.0),
            record.ce,
            record.train_acc,
            record.seconds
        );
        trace.records.push(record);
        model.stage1_epochs += 1;
    }
    Ok(())
}

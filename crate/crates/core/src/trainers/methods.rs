use log::info;

use crate::datasets::ShortcutDataset;
use crate::error::{Error, Result};
use crate::nn::{Activation, KnnClassifier, Mlp};
use crate::rng::RngState;
use crate::vae::{ChromaModel, ClassifierScope, HybridLossConfig, ModelSpec, Subspace, Z2Head};

use super::config::{HeadKind, TrainConfig};
use super::fit::{fit_hybrid, fit_mlp, init_stream, FitOptions};
use super::trace::TrainTrace;

/// Sub-streams of the caller's RNG, one per kind of network, so that e.g.
/// the naive classifier and JTT's models start from the same weights.
pub(crate) const STREAM_IMAGE_CLF: u64 = 11;
const STREAM_STAGE1: u64 = 12;
const STREAM_STAGE2: u64 = 13;
const STREAM_XTILDE2: u64 = 14;

pub fn model_spec(cfg: &TrainConfig, data: &ShortcutDataset, scope: ClassifierScope) -> ModelSpec {
    ModelSpec {
        image_shape: data.image_shape(),
        partition: cfg.partition,
        encoder_hidden: cfg.encoder_hidden.clone(),
        decoder_hidden: cfg.decoder_hidden.clone(),
        classifier_hidden: cfg.classifier_hidden.clone(),
        num_classes: data.num_classes,
        decoder_output: Activation::Sigmoid,
        recon_variance: cfg.loss.recon_variance,
        scope,
    }
}

pub(crate) fn image_classifier(cfg: &TrainConfig, data: &ShortcutDataset, rng: &RngState) -> Result<Mlp> {
    let widths: Vec<usize> = std::iter::once(data.pixels())
        .chain(cfg.image_classifier_hidden.iter().copied())
        .chain(std::iter::once(data.num_classes))
        .collect();
    Mlp::new(&widths, Activation::Relu, Activation::Identity, &mut init_stream(rng))
}

fn image_fit_options(cfg: &TrainConfig) -> FitOptions<'static> {
    FitOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        weights: None,
        passes: 1,
    }
}

fn stage2_options(cfg: &TrainConfig, passes: usize) -> FitOptions<'static> {
    FitOptions {
        epochs: cfg.stage2_epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        weights: None,
        passes,
    }
}

fn hybrid_model(
    data: &ShortcutDataset,
    cfg: &TrainConfig,
    scope: ClassifierScope,
    loss: HybridLossConfig,
    use_labels: bool,
    stage: &str,
    rng: &RngState,
) -> Result<(ChromaModel, TrainTrace)> {
    cfg.validate()?;
    let rng = rng.derive(STREAM_STAGE1);
    let mut model = ChromaModel::new(model_spec(cfg, data, scope), loss, &mut init_stream(&rng))?;
    let mut trace = TrainTrace::new(cfg.method.tag(), stage, rng.seed());
    let labels = use_labels.then_some(data.y.as_slice());
    fit_hybrid(
        &mut model,
        &data.images,
        labels,
        &loss,
        &image_fit_options(cfg),
        &rng,
        &mut trace,
    )?;
    Ok((model, trace))
}

/// Stage 1: encoder, decoder and the `μ₁` classifier trained jointly on the
/// hybrid objective.
pub fn train_chroma_stage1(
    data: &ShortcutDataset,
    cfg: &TrainConfig,
    rng: &RngState,
) -> Result<(ChromaModel, TrainTrace)> {
    hybrid_model(data, cfg, ClassifierScope::Z1, cfg.loss, true, "stage1", rng)
}

/// Stage 2: fits `cfg.head` on the frozen stage-1 model.
pub fn train_chroma_stage2(
    mut model: ChromaModel,
    data: &ShortcutDataset,
    cfg: &TrainConfig,
    rng: &RngState,
) -> Result<(ChromaModel, TrainTrace)> {
    cfg.validate()?;
    if model.stage1_epochs == 0 {
        return Err(Error::contract("stage 2 needs a stage-1 trained model"));
    }
    if model.spec.scope != ClassifierScope::Z1 {
        return Err(Error::contract("stage 2 applies to partitioned (z1-scope) models only"));
    }
    let before = model.encoder_checksum();
    let srng = rng.derive(STREAM_STAGE2);
    let mut trace = TrainTrace::new(cfg.method.tag(), &format!("stage2-{}", head_tag(cfg.head)), srng.seed());
    match cfg.head {
        HeadKind::Mlp => {
            let mu2 = model.encode(&data.images)?.mu2();
            let widths: Vec<usize> = std::iter::once(mu2.shape()[1])
                .chain(cfg.z2_hidden.iter().copied())
                .chain(std::iter::once(data.num_classes))
                .collect();
            let mut head = Mlp::new(&widths, Activation::Relu, Activation::Identity, &mut init_stream(&srng))?;
            fit_mlp(
                &mut head,
                &data.y,
                &stage2_options(cfg, 1),
                &srng,
                &mut trace,
                |idx, _| mu2.gather_rows(idx),
                |_, _| {},
            )?;
            model.z2_head = Some(Z2Head::Mlp(head));
        }
        HeadKind::Knn => {
            let mu2 = model.encode(&data.images)?.mu2();
            let knn = KnnClassifier::with_default_k(mu2, data.y.clone(), data.num_classes)?;
            info!("stage2 kNN head: N = {}, k = {}", knn.len(), knn.k());
            model.z2_head = Some(Z2Head::Knn(knn));
        }
        HeadKind::Xtilde2 => {
            let (clf, t) = train_xtilde2_classifier(&model, data, cfg, rng)?;
            model.xtilde2_classifier = Some(clf);
            trace = t;
        }
    }
    if model.encoder_checksum() != before {
        return Err(Error::contract("stage 2 modified the stage-1 encoder"));
    }
    Ok((model, trace))
}

fn head_tag(h: HeadKind) -> &'static str {
    match h {
        HeadKind::Mlp => "mlp",
        HeadKind::Knn => "knn",
        HeadKind::Xtilde2 => "xtilde2",
    }
}

/// Image-space classifier on partial reconstructions `x̃₂`, with fresh
/// noise on every visit of an example.
pub fn train_xtilde2_classifier(
    model: &ChromaModel,
    data: &ShortcutDataset,
    cfg: &TrainConfig,
    rng: &RngState,
) -> Result<(Mlp, TrainTrace)> {
    cfg.validate()?;
    if model.stage1_epochs == 0 {
        return Err(Error::contract("the x̃₂ classifier needs a stage-1 trained model"));
    }
    let xrng = rng.derive(STREAM_XTILDE2);
    let mu = model.encode(&data.images)?.mu;
    let mut clf = image_classifier(cfg, data, &xrng)?;
    let mut trace = TrainTrace::new(cfg.method.tag(), "stage2-xtilde2", xrng.seed());
    fit_mlp(
        &mut clf,
        &data.y,
        &stage2_options(cfg, cfg.xtilde2_samples),
        &xrng,
        &mut trace,
        |idx, noise| model.decode_partial(&mu.gather_rows(idx)?, Subspace::Z2, noise),
        |_, _| {},
    )?;
    Ok((clf, trace))
}

/// ERM baseline: an MLP trained with cross-entropy on raw images.
pub fn train_naive_classifier(data: &ShortcutDataset, cfg: &TrainConfig, rng: &RngState) -> Result<(Mlp, TrainTrace)> {
    cfg.validate()?;
    let rng = rng.derive(STREAM_IMAGE_CLF);
    let mut mlp = image_classifier(cfg, data, &rng)?;
    let mut trace = TrainTrace::new(cfg.method.tag(), "erm", rng.seed());
    fit_mlp(
        &mut mlp,
        &data.y,
        &image_fit_options(cfg),
        &rng,
        &mut trace,
        |idx, _| data.images.gather_rows(idx),
        |_, _| {},
    )?;
    Ok((mlp, trace))
}

/// Hybrid VAE classifier whose classifier reads the whole latent mean.
pub fn train_naive_vae_class(
    data: &ShortcutDataset,
    cfg: &TrainConfig,
    rng: &RngState,
) -> Result<(ChromaModel, TrainTrace)> {
    hybrid_model(data, cfg, ClassifierScope::Full, cfg.loss, true, "hybrid", rng)
}

/// Unsupervised VAE (λ = 0, labels never read), then a classifier on the
/// frozen full latent mean. Returns one trace per phase.
pub fn train_naive_independent(
    data: &ShortcutDataset,
    cfg: &TrainConfig,
    rng: &RngState,
) -> Result<(ChromaModel, Vec<TrainTrace>)> {
    let unsupervised = HybridLossConfig {
        lambda: 0.0,
        ..cfg.loss
    };
    let (mut model, trace_a) = hybrid_model(data, cfg, ClassifierScope::Full, unsupervised, false, "vae", rng)?;
    if trace_a.diverged() {
        return Ok((model, vec![trace_a]));
    }
    let before = model.encoder_checksum();
    let srng = rng.derive(STREAM_STAGE2);
    let mu = model.encode(&data.images)?.mu;
    let mut trace_b = TrainTrace::new(cfg.method.tag(), "classifier", srng.seed());
    fit_mlp(
        &mut model.classifier,
        &data.y,
        &stage2_options(cfg, 1),
        &srng,
        &mut trace_b,
        |idx, _| mu.gather_rows(idx),
        |_, _| {},
    )?;
    if model.encoder_checksum() != before {
        return Err(Error::contract("classifier phase modified the encoder"));
    }
    Ok((model, vec![trace_a, trace_b]))
}

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::archive::write_atomic;
use crate::datasets::{
    flip_colors, inject_patch, load_dataset, load_split, make_colored_mnist, make_dominoes, save_dataset, Distribution,
    PatchTarget, RawImageSet, ShortcutDataset, Split,
};
use crate::error::{Error, Result};
use crate::eval::{
    compare_methods, evaluate, latent_shift_profile, subspace_probe, ComparisonTable, EvalHead, MetricsReport,
    Predictor,
};
use crate::imaging::partial_recon_panel;
use crate::nn::Mlp;
use crate::rng::RngState;
use crate::trainers::{
    jtt_sweep, train_chroma_stage1, train_chroma_stage2, train_naive_classifier, train_naive_independent,
    train_naive_vae_class, Method, TrainTrace,
};
use crate::vae::{load_classifier, load_model, save_classifier, save_model, ChromaModel};

use super::config::{DatasetConfig, ExperimentConfig};
use super::manifest::{ArtifactLog, RunManifest, StageRecord, StageStatus};

pub const DATA_DIR_ENV: &str = "CHROMA_DATA_DIR";

const KIND_DATASET: &str = "dataset";
const KIND_CHROMA: &str = "chroma-model";
const KIND_STAGE1: &str = "stage1-model";
const KIND_CLASSIFIER: &str = "classifier-model";
const KIND_TRACE: &str = "trace";
const KIND_REPORT: &str = "metrics";
const KIND_TABLE: &str = "comparison";
const KIND_DIAGNOSTIC: &str = "diagnostic";
const KIND_PANEL: &str = "panel";

/// Noise stream for diagnostic panels, independent of training streams.
const STREAM_PANELS: u64 = 21;

pub const SPLITS: [Distribution; 3] = [Distribution::Train, Distribution::InDist, Distribution::Ood];

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Replace existing outputs of the verb (and of every verb downstream).
    pub overwrite: bool,
}

/// `config.data_dir`, else `$CHROMA_DATA_DIR`, else `./data`, else the
/// `data/` directory at the workspace root.
pub fn resolve_data_dir(cfg: &ExperimentConfig) -> PathBuf {
    if let Some(d) = &cfg.data_dir {
        return d.clone();
    }
    if let Some(d) = std::env::var_os(DATA_DIR_ENV) {
        return PathBuf::from(d);
    }
    let local = PathBuf::from("data");
    if local.is_dir() {
        return local;
    }
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn load_raw(data_dir: &Path, set: &str, split: Split) -> Result<RawImageSet> {
    let dir = data_dir.join(set);
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    load_split(&dir, split).map_err(|e| match e {
        Error::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => Error::Config(format!(
            "missing raw data file {}: expected {dir}/{prefix}-images-idx3-ubyte and {dir}/{prefix}-labels-idx1-ubyte \
             (optionally .gz); set \"data_dir\" in the config or {DATA_DIR_ENV}",
            path.display(),
            dir = dir.display(),
        )),
        other => other,
    })
}

/// Builds the train, in-distribution and OOD splits.
pub fn synthesize(cfg: &DatasetConfig, data_dir: &Path) -> Result<Vec<ShortcutDataset>> {
    cfg.validate()?;
    match *cfg {
        DatasetConfig::ColoredMnist {
            train_size,
            test_size,
            p_d,
            p_c_train,
            p_c_ood,
            seed,
        } => {
            let train = load_raw(data_dir, "mnist", Split::Train)?.range(0, train_size);
            let test = load_raw(data_dir, "mnist", Split::Test)?.range(0, test_size);
            let (src_tr, src_te) = (
                format!("mnist-train[0:{train_size}]"),
                format!("mnist-t10k[0:{test_size}]"),
            );
            Ok(vec![
                make_colored_mnist(&train, &src_tr, p_d, p_c_train, seed, Distribution::Train)?,
                make_colored_mnist(&test, &src_te, p_d, p_c_train, seed + 1, Distribution::InDist)?,
                make_colored_mnist(&test, &src_te, p_d, p_c_ood, seed + 2, Distribution::Ood)?,
            ])
        }
        DatasetConfig::Patch {
            train_size,
            test_size,
            positive_prob,
            patch_size,
            corner,
            seed,
        } => {
            let train = load_raw(data_dir, "mnist", Split::Train)?.range(0, train_size);
            let test = load_raw(data_dir, "mnist", Split::Test)?.range(0, test_size);
            let (src_tr, src_te) = (
                format!("mnist-train[0:{train_size}]"),
                format!("mnist-t10k[0:{test_size}]"),
            );
            let pos = PatchTarget::Positive;
            Ok(vec![
                inject_patch(
                    &train,
                    &src_tr,
                    positive_prob,
                    patch_size,
                    corner,
                    pos,
                    seed,
                    Distribution::Train,
                )?,
                inject_patch(
                    &test,
                    &src_te,
                    positive_prob,
                    patch_size,
                    corner,
                    pos,
                    seed + 1,
                    Distribution::InDist,
                )?,
                inject_patch(
                    &test,
                    &src_te,
                    1.0,
                    patch_size,
                    corner,
                    PatchTarget::Negative,
                    seed + 2,
                    Distribution::Ood,
                )?,
            ])
        }
        DatasetConfig::Dominoes {
            minority_fraction,
            test_minority_fraction,
            per_class,
            test_per_class,
            seed,
        } => {
            let (m_tr, f_tr) = (
                load_raw(data_dir, "mnist", Split::Train)?,
                load_raw(data_dir, "fashion", Split::Train)?,
            );
            let (m_te, f_te) = (
                load_raw(data_dir, "mnist", Split::Test)?,
                load_raw(data_dir, "fashion", Split::Test)?,
            );
            let src_tr = ("mnist-train", "fashion-train");
            let src_te = ("mnist-t10k", "fashion-t10k");
            Ok(vec![
                make_dominoes(
                    &m_tr,
                    &f_tr,
                    src_tr,
                    minority_fraction,
                    per_class,
                    seed,
                    Distribution::Train,
                )?,
                make_dominoes(
                    &m_te,
                    &f_te,
                    src_te,
                    minority_fraction,
                    test_per_class,
                    seed + 1,
                    Distribution::InDist,
                )?,
                make_dominoes(
                    &m_te,
                    &f_te,
                    src_te,
                    test_minority_fraction,
                    test_per_class,
                    seed + 2,
                    Distribution::Ood,
                )?,
            ])
        }
    }
}

fn data_path(run_dir: &Path, split: Distribution) -> PathBuf {
    run_dir.join("data").join(format!("{split}.json"))
}

pub fn load_split_snapshot(run_dir: &Path, split: Distribution) -> Result<ShortcutDataset> {
    let path = data_path(run_dir, split);
    if !path.exists() {
        return Err(Error::contract(format!(
            "dataset snapshot {} not found; run `synth` first",
            path.display()
        )));
    }
    load_dataset(&path)
}

/// Verbs whose outputs depend on `verb`'s outputs, `verb` included.
fn downstream(verb: &str) -> &'static [&'static str] {
    match verb {
        "synth" => &["synth", "train", "eval", "diagnose", "ablate"],
        "train" => &["train", "eval", "diagnose"],
        "eval" => &["eval"],
        "ablate" => &["ablate"],
        _ => &["diagnose"],
    }
}

fn subdir(verb: &str) -> &'static str {
    match verb {
        "synth" => "data",
        "train" => "train",
        "eval" => "eval",
        "ablate" => "cells",
        _ => "diagnose",
    }
}

/// Opens the run's manifest for `verb`, enforcing append-only outputs.
fn begin(run_dir: &Path, verb: &str, cfg: &ExperimentConfig, opts: RunOptions) -> Result<RunManifest> {
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let mut manifest = RunManifest::load_or_new(run_dir, &cfg.name, cfg.echo())?;
    if manifest.config != cfg.echo() {
        if !opts.overwrite {
            return Err(Error::Config(format!(
                "{} holds a run with a different config; use a new directory or --overwrite",
                run_dir.display()
            )));
        }
        manifest = RunManifest::new(&cfg.name, cfg.echo());
        for v in downstream("synth") {
            remove_dir(&run_dir.join(subdir(v)))?;
        }
    }
    let out = run_dir.join(subdir(verb));
    if manifest.stages.contains_key(verb) || out.exists() {
        if !opts.overwrite {
            return Err(Error::Config(format!(
                "{} already exists; re-running `{verb}` needs --overwrite",
                out.display()
            )));
        }
        for v in downstream(verb) {
            manifest.stages.remove(*v);
            remove_dir(&run_dir.join(subdir(v)))?;
        }
    }
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    Ok(manifest)
}

fn remove_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn finish(
    run_dir: &Path,
    mut manifest: RunManifest,
    verb: &str,
    status: StageStatus,
    log: ArtifactLog<'_>,
    started: Instant,
    notes: Vec<String>,
) -> Result<RunManifest> {
    manifest.stages.insert(
        verb.to_string(),
        StageRecord {
            status,
            artifacts: log.artifacts,
            seconds: started.elapsed().as_secs_f64(),
            notes,
        },
    );
    manifest.save(run_dir)?;
    Ok(manifest)
}

fn add_archive(log: &mut ArtifactLog<'_>, manifest_path: &Path, kind: &str) -> Result<()> {
    log.add(manifest_path, kind)?;
    log.add(&manifest_path.with_extension("bin"), kind)
}

/// Writes dataset snapshots for all three splits.
pub fn cmd_synth(cfg: &ExperimentConfig, run_dir: &Path, opts: RunOptions) -> Result<RunManifest> {
    cfg.validate()?;
    if !opts.overwrite {
        if let Ok(existing) = RunManifest::load(run_dir) {
            if existing.config == cfg.echo() && existing.stage("synth").is_some() {
                let changed = existing.verify(run_dir)?;
                if changed.is_empty() {
                    info!("{}: dataset snapshots are up to date", run_dir.display());
                    return Ok(existing);
                }
                return Err(Error::Config(format!(
                    "run artifacts changed on disk ({changed:?}); re-run with --overwrite"
                )));
            }
        }
    }
    let started = Instant::now();
    let manifest = begin(run_dir, "synth", cfg, opts)?;
    let splits = synthesize(&cfg.dataset, &resolve_data_dir(cfg))?;
    let mut log = ArtifactLog::new(run_dir);
    for ds in &splits {
        let counts = ds.group_counts();
        info!(
            "{} split: {} examples, groups {:?}",
            ds.distribution,
            ds.len(),
            counts.counts
        );
        let path = save_dataset(ds, &run_dir.join("data"), &ds.distribution.to_string())?;
        add_archive(&mut log, &path, KIND_DATASET)?;
    }
    finish(run_dir, manifest, "synth", StageStatus::Completed, log, started, vec![])
}

fn save_trace(trace: &TrainTrace, dir: &Path, stem: &str, log: &mut ArtifactLog<'_>) -> Result<()> {
    let path = dir.join(format!("{stem}.jsonl"));
    trace.save(&path)?;
    log.add(&path, KIND_TRACE)
}

fn status_of(traces: &[&TrainTrace]) -> StageStatus {
    traces
        .iter()
        .find_map(|t| match &t.status {
            crate::trainers::TrainStatus::Diverged {
                last_good_epoch,
                detail,
            } => Some(StageStatus::Diverged {
                detail: format!("{}: after epoch {last_good_epoch}: {detail}", t.stage),
            }),
            _ => None,
        })
        .unwrap_or(StageStatus::Completed)
}

/// Trains the configured method on the run's train split.
pub fn cmd_train(cfg: &ExperimentConfig, run_dir: &Path, opts: RunOptions) -> Result<RunManifest> {
    cfg.validate()?;
    let train = load_split_snapshot(run_dir, Distribution::Train)?;
    let started = Instant::now();
    let manifest = begin(run_dir, "train", cfg, opts)?;
    let dir = run_dir.join("train");
    let tcfg = cfg.train_config()?;
    let rng = RngState::new(cfg.seed);
    let mut log = ArtifactLog::new(run_dir);
    let status = match cfg.trainer.method {
        Method::Chroma => {
            let (stage1, t1) = train_chroma_stage1(&train, &tcfg, &rng)?;
            add_archive(&mut log, &save_model(&stage1, &dir, "stage1")?, KIND_STAGE1)?;
            save_trace(&t1, &dir, "stage1", &mut log)?;
            if t1.diverged() {
                status_of(&[&t1])
            } else {
                let (model, t2) = train_chroma_stage2(stage1, &train, &tcfg, &rng)?;
                add_archive(&mut log, &save_model(&model, &dir, "chroma")?, KIND_CHROMA)?;
                save_trace(&t2, &dir, "stage2", &mut log)?;
                status_of(&[&t2])
            }
        }
        Method::NaiveClass => {
            let (mlp, t) = train_naive_classifier(&train, &tcfg, &rng)?;
            add_archive(
                &mut log,
                &save_classifier(&mlp, train.image_shape(), &dir, "naive-class")?,
                KIND_CLASSIFIER,
            )?;
            save_trace(&t, &dir, "naive-class", &mut log)?;
            status_of(&[&t])
        }
        Method::NaiveVaeClass => {
            let (model, t) = train_naive_vae_class(&train, &tcfg, &rng)?;
            add_archive(&mut log, &save_model(&model, &dir, "naive-vae-class")?, KIND_CHROMA)?;
            save_trace(&t, &dir, "naive-vae-class", &mut log)?;
            status_of(&[&t])
        }
        Method::NaiveIndependent => {
            let (model, traces) = train_naive_independent(&train, &tcfg, &rng)?;
            add_archive(&mut log, &save_model(&model, &dir, "naive-independent")?, KIND_CHROMA)?;
            for t in &traces {
                save_trace(t, &dir, &format!("naive-independent-{}", t.stage), &mut log)?;
            }
            status_of(&traces.iter().collect::<Vec<_>>())
        }
        Method::Jtt => {
            let outcomes = jtt_sweep(&train, &cfg.trainer.jtt.cells(), &tcfg, &rng)?;
            for o in &outcomes {
                let stem = format!("jtt-T{}-a{}", o.config.t, o.config.alpha);
                add_archive(
                    &mut log,
                    &save_classifier(&o.model, train.image_shape(), &dir, &stem)?,
                    KIND_CLASSIFIER,
                )?;
                save_trace(&o.trace, &dir, &stem, &mut log)?;
            }
            status_of(&outcomes.iter().map(|o| &o.trace).collect::<Vec<_>>())
        }
    };
    let diverged = match &status {
        StageStatus::Completed => None,
        StageStatus::Diverged { detail } | StageStatus::Failed { detail } => Some(detail.clone()),
    };
    let manifest = finish(run_dir, manifest, "train", status, log, started, vec![])?;
    match diverged {
        Some(detail) => Err(Error::Diverged { epoch: 0, detail }),
        None => Ok(manifest),
    }
}

/// A trained model found in a run directory.
#[allow(clippy::large_enum_variant)]
pub enum LoadedModel {
    Chroma(ChromaModel),
    Image(Mlp),
}

impl LoadedModel {
    pub fn predictor(&self) -> Predictor<'_> {
        match self {
            LoadedModel::Chroma(m) => Predictor::Chroma(m),
            LoadedModel::Image(m) => Predictor::Image(m),
        }
    }
}

/// `(stem, model)` for every final model of the run's train stage.
pub fn load_trained(run_dir: &Path) -> Result<Vec<(String, LoadedModel)>> {
    let manifest = RunManifest::load(run_dir)?;
    let stage = manifest.stage("train").ok_or_else(|| {
        Error::contract(format!(
            "{} has no trained models; run `train` first",
            run_dir.display()
        ))
    })?;
    let mut out = Vec::new();
    for a in &stage.artifacts {
        if a.path.extension().is_some_and(|e| e == "json") {
            let stem = a.path.file_stem().unwrap_or_default().to_string_lossy().to_string();
            let path = run_dir.join(&a.path);
            match a.kind.as_str() {
                KIND_CHROMA => out.push((stem, LoadedModel::Chroma(load_model(&path)?))),
                KIND_CLASSIFIER => out.push((stem, LoadedModel::Image(load_classifier(&path)?.0))),
                _ => {}
            }
        }
    }
    Ok(out)
}

/// Row label for one head of a stored model.
fn row_label(stem: &str, model: &LoadedModel, head: EvalHead) -> String {
    match (model, stem) {
        (LoadedModel::Chroma(_), "chroma") => format!("chroma-{head}"),
        _ => stem.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub reports: Vec<MetricsReport>,
    pub table: ComparisonTable,
}

/// Evaluates every available head of every trained model on each split.
pub fn cmd_eval(run_dir: &Path, splits: &[Distribution], opts: RunOptions) -> Result<EvalOutput> {
    if splits.is_empty() {
        return Err(Error::contract("eval needs at least one split"));
    }
    let existing = RunManifest::load(run_dir)?;
    let cfg: ExperimentConfig = serde_json::from_value(existing.config.clone())?;
    let models = load_trained(run_dir)?;
    let started = Instant::now();
    let manifest = begin(run_dir, "eval", &cfg, opts)?;
    let dir = run_dir.join("eval");
    let mut log = ArtifactLog::new(run_dir);
    let mut notes = Vec::new();
    let mut reports = Vec::new();
    for &split in splits {
        let ds = match load_split_snapshot(run_dir, split) {
            Ok(ds) => ds,
            Err(e) => {
                warn!("skipping split {split}: {e}");
                notes.push(format!("split {split} skipped: {e}"));
                continue;
            }
        };
        for (stem, model) in &models {
            for head in model.predictor().heads() {
                let label = row_label(stem, model, head);
                let report = evaluate(model.predictor(), &ds, head)?.labeled(&label, cfg.seed, cfg.echo());
                info!(
                    "{label} on {split}: acc {:.4} worst-group {:.4}",
                    report.accuracy, report.worst_group
                );
                let path = dir.join(format!("{label}-{split}.json"));
                report.save(&path)?;
                log.add(&path, KIND_REPORT)?;
                reports.push(report);
            }
        }
    }
    if reports.is_empty() {
        finish(
            run_dir,
            manifest,
            "eval",
            StageStatus::Failed {
                detail: "no splits available".into(),
            },
            log,
            started,
            notes,
        )?;
        return Err(Error::contract("none of the requested splits exist"));
    }
    let table = compare_methods(&reports)?;
    for (name, text) in [("comparison.csv", table.to_csv()?), ("comparison.txt", table.to_text())] {
        let path = dir.join(name);
        write_atomic(&path, text.as_bytes())?;
        log.add(&path, KIND_TABLE)?;
    }
    finish(run_dir, manifest, "eval", StageStatus::Completed, log, started, notes)?;
    Ok(EvalOutput { reports, table })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub attribute: String,
    pub examples: usize,
    pub mu1: f64,
    pub mu2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseOutput {
    pub probe: ProbeResult,
    /// `(z1 mean, z2 mean)` of the latent-shift profile, when the dataset
    /// has a color-flipped twin.
    pub shift_means: Option<(f64, f64)>,
    pub panels: Vec<PathBuf>,
}

fn panel_name(cfg: &ExperimentConfig, i: usize) -> String {
    format!(
        "panel-{}-dz{}-zp{}-s{}-ex{i}.png",
        cfg.name, cfg.model.dim_z, cfg.model.z_p, cfg.seed
    )
}

/// Latent-shift profile, subspace probes and partial-reconstruction panels
/// of a chroma run.
pub fn cmd_diagnose(run_dir: &Path, opts: RunOptions) -> Result<DiagnoseOutput> {
    let existing = RunManifest::load(run_dir)?;
    let cfg: ExperimentConfig = serde_json::from_value(existing.config.clone())?;
    if cfg.trainer.method != Method::Chroma {
        return Err(Error::contract(format!(
            "diagnose needs a chroma run, this one trained {}",
            cfg.trainer.method
        )));
    }
    let model = load_trained(run_dir)?
        .into_iter()
        .find_map(|(_, m)| match m {
            LoadedModel::Chroma(m) => Some(m),
            LoadedModel::Image(_) => None,
        })
        .ok_or_else(|| Error::contract("run has no chroma model"))?;
    let mut train = load_split_snapshot(run_dir, Distribution::Train)?;
    if let Some(cap) = cfg.diagnose.max_examples {
        train = train.head(cap.min(train.len()));
    }
    let test = load_split_snapshot(run_dir, Distribution::InDist)?;
    let started = Instant::now();
    let manifest = begin(run_dir, "diagnose", &cfg, opts)?;
    let dir = run_dir.join("diagnose");
    let mut log = ArtifactLog::new(run_dir);
    let mut notes = Vec::new();

    let (shift_means, probe_set) = if train.channels == 2 {
        let twin = flip_colors(&train)?;
        let profile = latent_shift_profile(&model, &train, &twin)?;
        let path = dir.join("latent_shift.csv");
        write_atomic(&path, profile.to_csv()?.as_bytes())?;
        log.add(&path, KIND_DIAGNOSTIC)?;
        info!(
            "latent shift: z1 mean {:.4}, z2 mean {:.4}",
            profile.z1_mean(),
            profile.z2_mean()
        );
        // The union decorrelates color from digit and label.
        (Some((profile.z1_mean(), profile.z2_mean())), train.concat(&twin)?)
    } else {
        notes.push("latent shift skipped: dataset has no color-flipped twin".into());
        (None, train)
    };
    let code = model.encode(&probe_set.images)?;
    let probe = ProbeResult {
        attribute: "s".into(),
        examples: probe_set.len(),
        mu1: subspace_probe(&code.mu1(), &probe_set.s, cfg.seed)?,
        mu2: subspace_probe(&code.mu2(), &probe_set.s, cfg.seed)?,
    };
    info!("shortcut probe: mu1 {:.4}, mu2 {:.4}", probe.mu1, probe.mu2);
    let path = dir.join("probes.json");
    write_atomic(&path, serde_json::to_string_pretty(&probe)?.as_bytes())?;
    log.add(&path, KIND_DIAGNOSTIC)?;

    let mut panels = Vec::new();
    let noise = RngState::new(cfg.seed).derive(STREAM_PANELS);
    for i in 0..cfg.diagnose.examples.min(test.len()) {
        let path = dir.join(panel_name(&cfg, i));
        partial_recon_panel(
            &model,
            test.images.row(i),
            cfg.diagnose.samples,
            &mut noise.derive(i as u64),
            &path,
        )?;
        log.add(&path, KIND_PANEL)?;
        panels.push(path);
    }
    finish(
        run_dir,
        manifest,
        "diagnose",
        StageStatus::Completed,
        log,
        started,
        notes,
    )?;
    Ok(DiagnoseOutput {
        probe,
        shift_means,
        panels,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    DimzZp,
    Beta,
}

pub const ABLATION_DIM_Z: [usize; 4] = [4, 8, 16, 32];
pub const ABLATION_Z_P: [f64; 3] = [0.25, 0.5, 0.75];
pub const ABLATION_BETA: [f64; 5] = [100.0, 10.0, 5.0, 1.0, 0.5];

/// The configs of every cell of an ablation axis, seeded `base + index`.
pub fn ablation_cells(base: &ExperimentConfig, axis: AblationAxis) -> Vec<ExperimentConfig> {
    let mut cells = Vec::new();
    let mut push = |f: &dyn Fn(&mut ExperimentConfig), label: String| {
        let mut c = base.clone();
        f(&mut c);
        c.seed = base.seed + cells.len() as u64;
        c.name = format!("{}-{label}", base.name);
        c.output_dir = None;
        cells.push(c);
    };
    match axis {
        AblationAxis::DimzZp => {
            for &dz in &ABLATION_DIM_Z {
                for &zp in &ABLATION_Z_P {
                    push(
                        &|c| {
                            c.model.dim_z = dz;
                            c.model.z_p = zp;
                        },
                        format!("dz{dz}-zp{zp}"),
                    );
                }
            }
        }
        AblationAxis::Beta => {
            for &b in &ABLATION_BETA {
                push(&|c| c.loss.beta = b, format!("beta{b}"));
            }
        }
    }
    cells
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub cell: String,
    pub dim_z: usize,
    pub z_p: f64,
    pub beta: f64,
    pub seed: u64,
    pub method: String,
    pub distribution: Distribution,
    pub accuracy: f64,
    pub worst_group: f64,
}

/// Runs synth, train and eval for every cell of `axis` in its own run
/// directory under `out/cells`, plus diagnostics and panels per cell on
/// the `dimz_zp` axis.
pub fn cmd_ablate(
    base: &ExperimentConfig,
    axis: AblationAxis,
    out: &Path,
    opts: RunOptions,
) -> Result<Vec<AblationRow>> {
    base.validate()?;
    let cells = ablation_cells(base, axis);
    for c in &cells {
        c.validate()?;
    }
    let started = Instant::now();
    let manifest = begin(out, "ablate", base, opts)?;
    let mut log = ArtifactLog::new(out);
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    for cfg in &cells {
        let dir = out.join("cells").join(&cfg.name);
        info!("ablation cell {}", cfg.name);
        let cell_opts = RunOptions { overwrite: true };
        cmd_synth(cfg, &dir, cell_opts)?;
        if let Err(e) = cmd_train(cfg, &dir, cell_opts) {
            warn!("cell {} failed: {e}", cfg.name);
            notes.push(format!("{}: {e}", cfg.name));
            continue;
        }
        let eval = cmd_eval(&dir, &[Distribution::InDist, Distribution::Ood], cell_opts)?;
        if axis == AblationAxis::DimzZp && cfg.trainer.method == Method::Chroma {
            cmd_diagnose(&dir, cell_opts)?;
        }
        for r in eval.reports {
            rows.push(AblationRow {
                cell: cfg.name.clone(),
                dim_z: cfg.model.dim_z,
                z_p: cfg.model.z_p,
                beta: cfg.loss.beta,
                seed: cfg.seed,
                method: r.method,
                distribution: r.distribution,
                accuracy: r.accuracy,
                worst_group: r.worst_group,
            });
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    let path = out.join("cells").join(format!("ablation-{}.csv", axis_tag(axis)));
    write_atomic(&path, &bytes)?;
    log.add(&path, KIND_TABLE)?;
    finish(out, manifest, "ablate", StageStatus::Completed, log, started, notes)?;
    Ok(rows)
}

fn axis_tag(axis: AblationAxis) -> &'static str {
    match axis {
        AblationAxis::DimzZp => "dimz_zp",
        AblationAxis::Beta => "beta",
    }
}

/// Pivots ablation rows into `cell → (method, split) → accuracy`.
pub fn ablation_accuracy(rows: &[AblationRow]) -> BTreeMap<String, BTreeMap<(String, Distribution), f64>> {
    let mut out: BTreeMap<String, BTreeMap<(String, Distribution), f64>> = BTreeMap::new();
    for r in rows {
        out.entry(r.cell.clone())
            .or_default()
            .insert((r.method.clone(), r.distribution), r.accuracy);
    }
    out
}

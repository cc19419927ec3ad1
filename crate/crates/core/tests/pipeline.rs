mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use chroma_vae::datasets::Distribution;
use chroma_vae::experiment::{
    cmd_ablate, cmd_diagnose, cmd_eval, cmd_synth, cmd_train, AblationAxis, DatasetConfig, ExperimentConfig,
    JttSelection, RunManifest, RunOptions, ABLATION_BETA,
};
use chroma_vae::trainers::{HeadKind, JttConfig, Method};
use chroma_vae::Error;

fn tiny(data: &Path, method: Method) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new("pipeline");
    cfg.data_dir = Some(data.to_path_buf());
    cfg.seed = 9;
    if let DatasetConfig::ColoredMnist {
        train_size, test_size, ..
    } = &mut cfg.dataset
    {
        *train_size = 500;
        *test_size = 200;
    }
    cfg.model.dim_z = 8;
    cfg.model.encoder_hidden = vec![32];
    cfg.model.decoder_hidden = vec![32];
    cfg.model.classifier_hidden = vec![8];
    cfg.model.z2_hidden = vec![8];
    cfg.model.image_classifier_hidden = vec![32];
    cfg.trainer.method = method;
    cfg.trainer.epochs = 2;
    cfg.trainer.stage2_epochs = 1;
    cfg.trainer.batch_size = 64;
    cfg.trainer.jtt = JttSelection::Cells(vec![JttConfig { t: 1, alpha: 5 }]);
    cfg.diagnose.examples = 2;
    cfg.diagnose.samples = 3;
    cfg.diagnose.max_examples = Some(300);
    cfg
}

fn files_under(dir: &Path) -> BTreeSet<PathBuf> {
    let mut out = BTreeSet::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out
}

/// Every file except the manifest is listed exactly once, and every listed
/// file still has its recorded hash.
fn assert_indexed(run: &Path) {
    let m = RunManifest::load(run).unwrap();
    let listed: Vec<PathBuf> = m.artifacts().map(|a| a.path.clone()).collect();
    let unique: BTreeSet<PathBuf> = listed.iter().cloned().collect();
    assert_eq!(listed.len(), unique.len(), "duplicate entries in {}", run.display());
    let mut on_disk = files_under(run);
    on_disk.remove(Path::new("manifest.json"));
    assert_eq!(on_disk, unique, "{}", run.display());
    assert!(m.verify(run).unwrap().is_empty());
}

#[test]
fn chroma_run_is_fully_indexed() {
    let Some(data) = common::data_dir() else { return };
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let mut cfg = tiny(&data, Method::Chroma);
    cfg.trainer.head = HeadKind::Knn;
    let opts = RunOptions::default();

    cmd_synth(&cfg, &run, opts).unwrap();
    cmd_train(&cfg, &run, opts).unwrap();
    assert!(matches!(cmd_eval(&run, &[], opts), Err(Error::Contract(_))));
    let eval = cmd_eval(&run, &[Distribution::InDist, Distribution::Ood], opts).unwrap();
    let methods: BTreeSet<&str> = eval.reports.iter().map(|r| r.method.as_str()).collect();
    assert!(
        methods.contains("chroma-z1") && methods.contains("chroma-z2"),
        "{methods:?}"
    );
    for r in &eval.reports {
        assert!((0.0..=1.0).contains(&r.accuracy) && r.worst_group <= r.accuracy + 1e-12);
    }
    let diag = cmd_diagnose(&run, opts).unwrap();
    assert_eq!(diag.panels.len(), 2);
    assert!(diag.shift_means.is_some());
    assert_indexed(&run);

    // Retraining without permission leaves the run untouched.
    let before = fs::read(RunManifest::path(&run)).unwrap();
    assert!(cmd_train(&cfg, &run, opts).is_err());
    assert_eq!(fs::read(RunManifest::path(&run)).unwrap(), before);
}

#[test]
fn jtt_run_is_fully_indexed() {
    let Some(data) = common::data_dir() else { return };
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let cfg = tiny(&data, Method::Jtt);
    let opts = RunOptions::default();
    cmd_synth(&cfg, &run, opts).unwrap();
    cmd_train(&cfg, &run, opts).unwrap();
    let eval = cmd_eval(&run, &[Distribution::Ood], opts).unwrap();
    assert_eq!(eval.reports.len(), 1);
    assert_indexed(&run);
}

#[test]
fn beta_ablation_indexes_every_cell() {
    let Some(data) = common::data_dir() else { return };
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ablate");
    let mut cfg = tiny(&data, Method::Chroma);
    cfg.trainer.epochs = 1;
    let rows = cmd_ablate(&cfg, AblationAxis::Beta, &out, RunOptions::default()).unwrap();
    let betas: BTreeSet<u64> = rows.iter().map(|r| r.beta.to_bits()).collect();
    assert_eq!(betas.len(), ABLATION_BETA.len());

    let top = RunManifest::load(&out).unwrap();
    assert_eq!(top.artifacts().count(), 1);
    for cell in fs::read_dir(out.join("cells")).unwrap() {
        let p = cell.unwrap().path();
        if p.is_dir() {
            assert_indexed(&p);
        }
    }
}

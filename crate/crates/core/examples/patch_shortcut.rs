//! A small white square marks the positive class during training and moves
//! onto the negatives at test time. Trains the naive classifier and a
//! Chroma-VAE and reports both heads on each split.
//!
//! ```text
//! cargo run --release --example patch_shortcut -- [train_size]
//! ```

use chroma_vae::datasets::{Corner, ShortcutDataset};
use chroma_vae::eval::{evaluate, EvalHead, Predictor};
use chroma_vae::experiment::{resolve_data_dir, synthesize, DatasetConfig, ExperimentConfig};
use chroma_vae::trainers::{train_chroma_stage1, train_chroma_stage2, train_naive_classifier, HeadKind, Method};
use chroma_vae::{Error, Result, RngState};

fn main() -> Result<()> {
    env_logger::init();
    let train_size = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10_000);
    let mut cfg = ExperimentConfig::new("patch");
    cfg.dataset = DatasetConfig::Patch {
        train_size,
        test_size: 2000,
        positive_prob: 0.5,
        patch_size: 4,
        corner: Corner::TopLeft,
        seed: 0,
    };
    cfg.trainer.epochs = 15;
    cfg.trainer.head = HeadKind::Knn;
    let [train, in_dist, ood]: [ShortcutDataset; 3] = synthesize(&cfg.dataset, &resolve_data_dir(&cfg))?
        .try_into()
        .map_err(|_| Error::Contract("expected three splits".into()))?;
    println!("train groups (patch, label): {:?}", train.group_counts().counts);

    let rng = RngState::new(cfg.seed);
    let mut t = cfg.train_config()?;
    t.method = Method::NaiveClass;
    let (naive, _) = train_naive_classifier(&train, &t, &rng)?;
    let t = cfg.train_config()?;
    let (stage1, _) = train_chroma_stage1(&train, &t, &rng)?;
    let (chroma, _) = train_chroma_stage2(stage1, &train, &t, &rng)?;

    for (name, model, head) in [
        ("naive", Predictor::Image(&naive), EvalHead::Naive),
        ("chroma z1", Predictor::Chroma(&chroma), EvalHead::Z1),
        ("chroma z2", Predictor::Chroma(&chroma), EvalHead::Z2),
    ] {
        let a = evaluate(model, &in_dist, head)?.accuracy;
        let b = evaluate(model, &ood, head)?.accuracy;
        println!("{name:<10} in-dist {a:.3}   ood {b:.3}");
    }
    Ok(())
}

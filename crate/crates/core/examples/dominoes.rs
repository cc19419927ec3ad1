//! Dominoes with a perfectly correlated shortcut: the MNIST half predicts
//! the label on every training image, only the Fashion half (coat vs
//! dress) carries it at test time. Compares worst-group accuracy of the
//! naive classifier and the Chroma-VAE `z₂` head.
//!
//! ```text
//! cargo run --release --example dominoes -- [per_class]
//! ```

use chroma_vae::datasets::ShortcutDataset;
use chroma_vae::eval::{evaluate, EvalHead, Predictor};
use chroma_vae::experiment::{resolve_data_dir, synthesize, DatasetConfig, ExperimentConfig};
use chroma_vae::trainers::{train_chroma_stage1, train_chroma_stage2, train_naive_classifier, HeadKind, Method};
use chroma_vae::{Error, Result, RngState};

fn main() -> Result<()> {
    env_logger::init();
    let per_class = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(2000);
    let mut cfg = ExperimentConfig::new("dominoes");
    cfg.dataset = DatasetConfig::Dominoes {
        minority_fraction: 0.0,
        test_minority_fraction: 0.5,
        per_class: Some(per_class),
        test_per_class: Some(500),
        seed: 0,
    };
    cfg.model.dim_z = 8;
    cfg.model.z_p = 0.5;
    cfg.trainer.lr = 5e-4;
    cfg.trainer.epochs = 15;
    cfg.trainer.head = HeadKind::Knn;
    let [train, in_dist, ood]: [ShortcutDataset; 3] = synthesize(&cfg.dataset, &resolve_data_dir(&cfg))?
        .try_into()
        .map_err(|_| Error::Contract("expected three splits".into()))?;
    println!(
        "train {:?}, images {:?}",
        train.group_counts().counts,
        train.image_shape()
    );

    let rng = RngState::new(cfg.seed);
    let mut t = cfg.train_config()?;
    t.method = Method::NaiveClass;
    let (naive, _) = train_naive_classifier(&train, &t, &rng)?;
    let t = cfg.train_config()?;
    let (stage1, _) = train_chroma_stage1(&train, &t, &rng)?;
    let (chroma, _) = train_chroma_stage2(stage1, &train, &t, &rng)?;

    for (name, model, head) in [
        ("naive", Predictor::Image(&naive), EvalHead::Naive),
        ("chroma z2", Predictor::Chroma(&chroma), EvalHead::Z2),
    ] {
        let a = evaluate(model, &in_dist, head)?;
        let b = evaluate(model, &ood, head)?;
        println!(
            "{name:<10} in-dist {:.3} (worst {:.3})   ood {:.3} (worst {:.3})",
            a.accuracy, a.worst_group, b.accuracy, b.worst_group
        );
    }
    Ok(())
}

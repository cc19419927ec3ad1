//! The three naive baselines next to Chroma-VAE on ColoredMNIST, scored on
//! both test splits and printed as one comparison table.
//!
//! ```text
//! cargo run --release --example baselines -- [train_size]
//! ```

use chroma_vae::datasets::ShortcutDataset;
use chroma_vae::eval::{compare_methods, evaluate, EvalHead, Predictor};
use chroma_vae::experiment::{resolve_data_dir, synthesize, DatasetConfig, ExperimentConfig};
use chroma_vae::trainers::{
    train_chroma_stage1, train_chroma_stage2, train_naive_classifier, train_naive_independent, train_naive_vae_class,
    HeadKind, Method,
};
use chroma_vae::{Error, Result, RngState};

fn main() -> Result<()> {
    env_logger::init();
    let train_size = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10_000);
    let mut cfg = ExperimentConfig::new("baselines");
    if let DatasetConfig::ColoredMnist {
        train_size: n,
        test_size,
        ..
    } = &mut cfg.dataset
    {
        *n = train_size;
        *test_size = 2000;
    }
    cfg.trainer.epochs = 15;
    cfg.trainer.head = HeadKind::Knn;
    let splits: [ShortcutDataset; 3] = synthesize(&cfg.dataset, &resolve_data_dir(&cfg))?
        .try_into()
        .map_err(|_| Error::Contract("expected three splits".into()))?;
    let train = &splits[0];
    let rng = RngState::new(cfg.seed);
    let with = |m: Method| -> Result<_> {
        let mut t = cfg.train_config()?;
        t.method = m;
        Ok(t)
    };

    let (naive, _) = train_naive_classifier(train, &with(Method::NaiveClass)?, &rng)?;
    let (hybrid, _) = train_naive_vae_class(train, &with(Method::NaiveVaeClass)?, &rng)?;
    let (independent, _) = train_naive_independent(train, &with(Method::NaiveIndependent)?, &rng)?;
    let t = with(Method::Chroma)?;
    let (stage1, _) = train_chroma_stage1(train, &t, &rng)?;
    let (chroma, _) = train_chroma_stage2(stage1, train, &t, &rng)?;

    let heads = [
        ("naive-class", Predictor::Image(&naive), EvalHead::Naive),
        ("naive-vae-class", Predictor::Chroma(&hybrid), EvalHead::Z1),
        ("naive-independent", Predictor::Chroma(&independent), EvalHead::Z1),
        ("chroma-z1", Predictor::Chroma(&chroma), EvalHead::Z1),
        ("chroma-z2", Predictor::Chroma(&chroma), EvalHead::Z2),
    ];
    let mut reports = Vec::new();
    for (name, model, head) in heads {
        for ds in &splits[1..] {
            reports.push(evaluate(model, ds, head)?.labeled(name, cfg.seed, serde_json::Value::Null));
        }
    }
    print!("{}", compare_methods(&reports)?.to_text());
    Ok(())
}

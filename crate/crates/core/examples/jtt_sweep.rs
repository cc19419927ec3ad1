//! Just-Train-Twice on ColoredMNIST over the `T × α` grid. The
//! identification pass is shared by every cell with the same `T`; each
//! cell then retrains with its error set upweighted.
//!
//! ```text
//! cargo run --release --example jtt_sweep -- [train_size]
//! ```

use chroma_vae::datasets::ShortcutDataset;
use chroma_vae::eval::{evaluate, EvalHead, Predictor};
use chroma_vae::experiment::{resolve_data_dir, synthesize, DatasetConfig, ExperimentConfig};
use chroma_vae::trainers::{jtt_grid, jtt_sweep, Method};
use chroma_vae::{Error, Result, RngState};

fn main() -> Result<()> {
    env_logger::init();
    let train_size = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10_000);
    let mut cfg = ExperimentConfig::new("jtt");
    if let DatasetConfig::ColoredMnist {
        train_size: n,
        test_size,
        ..
    } = &mut cfg.dataset
    {
        *n = train_size;
        *test_size = 2000;
    }
    cfg.trainer.method = Method::Jtt;
    cfg.trainer.epochs = 10;
    let [train, in_dist, ood]: [ShortcutDataset; 3] = synthesize(&cfg.dataset, &resolve_data_dir(&cfg))?
        .try_into()
        .map_err(|_| Error::Contract("expected three splits".into()))?;

    let t = cfg.train_config()?;
    println!(
        "{:>3} {:>4} {:>7} {:>8} {:>8} {:>8}",
        "T", "α", "errors", "in-dist", "ood", "worst"
    );
    for o in jtt_sweep(&train, &jtt_grid(), &t, &RngState::new(cfg.seed))? {
        let a = evaluate(Predictor::Image(&o.model), &in_dist, EvalHead::Naive)?;
        let b = evaluate(Predictor::Image(&o.model), &ood, EvalHead::Naive)?;
        println!(
            "{:>3} {:>4} {:>7} {:>8.3} {:>8.3} {:>8.3}",
            o.config.t, o.config.alpha, o.error_set_size, a.accuracy, b.accuracy, b.worst_group
        );
    }
    Ok(())
}

//! Sweeps the KL weight β through the ablation runner: one run directory
//! per cell, each with its own manifest, plus a summary CSV.
//!
//! ```text
//! cargo run --release --example beta_ablation -- [out_dir]
//! ```

use std::path::PathBuf;

use chroma_vae::datasets::Distribution;
use chroma_vae::experiment::{cmd_ablate, AblationAxis, DatasetConfig, ExperimentConfig, RunOptions};
use chroma_vae::trainers::{HeadKind, Method};
use chroma_vae::Result;

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "target/examples-out/beta_ablation".into()),
    );
    let mut cfg = ExperimentConfig::new("beta");
    if let DatasetConfig::ColoredMnist {
        train_size, test_size, ..
    } = &mut cfg.dataset
    {
        *train_size = 5000;
        *test_size = 2000;
    }
    cfg.trainer.method = Method::Chroma;
    cfg.trainer.epochs = 10;
    cfg.trainer.head = HeadKind::Knn;
    let rows = cmd_ablate(&cfg, AblationAxis::Beta, &out, RunOptions { overwrite: true })?;
    println!("{:>6} {:<12} {:>8} {:>8}", "beta", "head", "ood", "worst");
    for r in rows.iter().filter(|r| r.distribution == Distribution::Ood) {
        println!(
            "{:>6} {:<12} {:>8.3} {:>8.3}",
            r.beta, r.method, r.accuracy, r.worst_group
        );
    }
    Ok(())
}

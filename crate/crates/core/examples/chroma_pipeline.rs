//! The full run lifecycle through the library: synth, train, eval and
//! diagnose into one run directory, then the manifest that indexes it.
//! Pass a JSON config to use it instead of the built-in ColoredMNIST one.
//!
//! ```text
//! cargo run --release --example chroma_pipeline -- [config.json] [run_dir]
//! ```

use std::path::PathBuf;

use chroma_vae::datasets::Distribution;
use chroma_vae::experiment::{
    cmd_diagnose, cmd_eval, cmd_synth, cmd_train, DatasetConfig, ExperimentConfig, RunManifest, RunOptions,
};
use chroma_vae::trainers::{HeadKind, Method};
use chroma_vae::Result;

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cfg = match args.first() {
        Some(path) => ExperimentConfig::load(path.as_ref())?,
        None => {
            let mut cfg = ExperimentConfig::new("chroma-pipeline");
            cfg.dataset = DatasetConfig::ColoredMnist {
                train_size: 10_000,
                test_size: 2000,
                p_d: 0.25,
                p_c_train: 0.1,
                p_c_ood: 0.9,
                seed: 0,
            };
            cfg.trainer.method = Method::Chroma;
            cfg.trainer.epochs = 20;
            cfg.trainer.head = HeadKind::Knn;
            cfg
        }
    };
    let run = PathBuf::from(
        args.get(1)
            .cloned()
            .unwrap_or_else(|| "target/examples-out/chroma_pipeline".into()),
    );
    let opts = RunOptions { overwrite: true };

    cmd_synth(&cfg, &run, opts)?;
    cmd_train(&cfg, &run, opts)?;
    let eval = cmd_eval(&run, &[Distribution::InDist, Distribution::Ood], opts)?;
    print!("{}", eval.table.to_text());
    if cfg.trainer.method == Method::Chroma {
        let d = cmd_diagnose(&run, opts)?;
        if let Some((z1, z2)) = d.shift_means {
            println!("mean |shift| under color flip: z1 {z1:.3}, z2 {z2:.3}");
        }
        println!(
            "shortcut ({}) probe on mu1 / mu2: {:.3} / {:.3}",
            d.probe.attribute, d.probe.mu1, d.probe.mu2
        );
    }

    let m = RunManifest::load(&run)?;
    for (verb, stage) in &m.stages {
        println!(
            "{verb:<9} {:?} {:>3} artifacts {:>7.1}s",
            stage.status,
            stage.artifacts.len(),
            stage.seconds
        );
    }
    Ok(())
}

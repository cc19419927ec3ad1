//! Where does color live in the latent? Trains stage 1 on ColoredMNIST,
//! then measures how far each latent dimension moves when every image's
//! color is flipped, how well a linear probe reads color from `μ₁` and
//! `μ₂`, and renders partial reconstructions from each subspace.
//!
//! ```text
//! cargo run --release --example latent_diagnostics -- [out_dir]
//! ```

use std::path::PathBuf;

use chroma_vae::datasets::flip_colors;
use chroma_vae::eval::{latent_shift_profile, subspace_probe};
use chroma_vae::experiment::{resolve_data_dir, synthesize, DatasetConfig, ExperimentConfig};
use chroma_vae::imaging::partial_recon_panel;
use chroma_vae::trainers::train_chroma_stage1;
use chroma_vae::{Result, RngState};

fn main() -> Result<()> {
    env_logger::init();
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "target/examples-out/latent_diagnostics".into()),
    );
    let mut cfg = ExperimentConfig::new("latent");
    if let DatasetConfig::ColoredMnist {
        train_size, test_size, ..
    } = &mut cfg.dataset
    {
        *train_size = 10_000;
        *test_size = 1000;
    }
    cfg.trainer.epochs = 20;
    let train = synthesize(&cfg.dataset, &resolve_data_dir(&cfg))?.swap_remove(0);
    let rng = RngState::new(cfg.seed);
    let (model, trace) = train_chroma_stage1(&train, &cfg.train_config()?, &rng)?;
    println!("stage 1: {:?} after {} epochs", trace.status, trace.records.len());

    let twin = flip_colors(&train)?;
    let profile = latent_shift_profile(&model, &train, &twin)?;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ");
    println!("shift z1: {}", fmt(&profile.values[..profile.boundary]));
    println!("shift z2: {}", fmt(&profile.values[profile.boundary..]));
    println!(
        "mean z1 {:.3}  mean z2 {:.3}  ratio {:.2}",
        profile.z1_mean(),
        profile.z2_mean(),
        profile.ratio()
    );

    let both = train.concat(&twin)?;
    let code = model.encode(&both.images)?;
    let p1 = subspace_probe(&code.mu1(), &both.s, cfg.seed)?;
    let p2 = subspace_probe(&code.mu2(), &both.s, cfg.seed)?;
    println!("color probe accuracy: mu1 {p1:.3}  mu2 {p2:.3}");

    let mut prng = RngState::new(21);
    for i in 0..3 {
        let path = out.join(format!("panel-{i}.png"));
        partial_recon_panel(&model, train.example(i).x, 6, &mut prng, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

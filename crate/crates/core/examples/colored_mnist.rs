//! Builds the three ColoredMNIST splits, prints the `(color, label)` census
//! of each and writes a contact sheet of training images plus their
//! color-flipped twins.
//!
//! ```text
//! cargo run --release --example colored_mnist -- [out_dir]
//! ```

use std::path::PathBuf;

use chroma_vae::datasets::flip_colors;
use chroma_vae::experiment::{resolve_data_dir, synthesize, ExperimentConfig};
use chroma_vae::imaging::{render_grid, ImageGrid};
use chroma_vae::Result;

fn main() -> Result<()> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "target/examples-out/colored_mnist".into()),
    );
    let cfg = ExperimentConfig::new("colored-mnist");
    let splits = synthesize(&cfg.dataset, &resolve_data_dir(&cfg))?;
    for ds in &splits {
        let g = ds.group_counts();
        println!(
            "{:<8} n={:<6} red/0 {:>5}  red/1 {:>5}  green/0 {:>5}  green/1 {:>5}  minority {}",
            ds.distribution.to_string(),
            ds.len(),
            g.get(0, 0),
            g.get(0, 1),
            g.get(1, 0),
            g.get(1, 1),
            g.minority()
        );
    }

    let train = &splits[0];
    let twin = flip_colors(train)?;
    render_grid(&ImageGrid::from_dataset(train, 0, 4, 8)?, &out.join("train.png"))?;
    render_grid(
        &ImageGrid::from_dataset(&twin, 0, 4, 8)?,
        &out.join("train-flipped.png"),
    )?;
    println!("wrote {}", out.display());
    Ok(())
}

#![allow(dead_code)]

use std::path::PathBuf;

use chroma_vae::experiment::{resolve_data_dir, ExperimentConfig};

/// The raw-data directory, or `None` (with a note on stderr) when the IDX
/// files have not been fetched.
pub fn data_dir() -> Option<PathBuf> {
    let dir = resolve_data_dir(&ExperimentConfig::new("probe"));
    if dir.join("mnist").is_dir() && dir.join("fashion").is_dir() {
        Some(dir)
    } else {
        eprintln!(
            "skipped: no raw data under {} (run scripts/fetch_data.py)",
            dir.display()
        );
        None
    }
}

//! MNIST-family ingestion and the shortcut datasets built from it.

mod idx;
mod shortcut;
mod snapshot;
mod synth;

pub use idx::{load_idx, load_split, read_idx_images, read_idx_labels, RawImageSet, Split};
pub use shortcut::{Corner, Distribution, GenerationParams, GroupCounts, GroupedExample, PatchTarget, ShortcutDataset};
pub use snapshot::{load_dataset, save_dataset};
pub use synth::{
    dominoes_capacity, flip_colors, inject_patch, make_colored_mnist, make_dominoes, FASHION_COAT, FASHION_DRESS,
};

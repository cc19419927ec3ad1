use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::archive::{self, TensorBag};
use crate::error::Result;
use crate::tensor::Tensor;

use super::shortcut::{Distribution, GenerationParams, GroupCounts, ShortcutDataset};

#[derive(Serialize, Deserialize)]
struct SnapshotMeta {
    params: GenerationParams,
    distribution: Distribution,
    image_shape: [usize; 3],
    num_classes: usize,
    num_shortcuts: usize,
    len: usize,
    group_counts: GroupCounts,
}

fn labels_tensor(v: &[usize]) -> Result<Tensor> {
    Tensor::new(&[v.len()], v.iter().map(|&x| x as f32).collect())
}

/// Writes `<stem>.json` + `<stem>.bin`; returns the manifest path.
pub fn save_dataset(ds: &ShortcutDataset, dir: &Path, stem: &str) -> Result<PathBuf> {
    let meta = SnapshotMeta {
        params: ds.params.clone(),
        distribution: ds.distribution,
        image_shape: ds.image_shape(),
        num_classes: ds.num_classes,
        num_shortcuts: ds.num_shortcuts,
        len: ds.len(),
        group_counts: ds.group_counts(),
    };
    let (y, s) = (labels_tensor(&ds.y)?, labels_tensor(&ds.s)?);
    let tensors = [
        ("images".to_string(), &ds.images),
        ("y".to_string(), &y),
        ("s".to_string(), &s),
    ];
    Ok(archive::write(dir, stem, meta, &tensors)?.0)
}

pub fn load_dataset(manifest: &Path) -> Result<ShortcutDataset> {
    let (meta, tensors): (SnapshotMeta, _) = archive::read(manifest)?;
    let mut bag = TensorBag::new(tensors);
    let to_labels = |t: Tensor| t.data().iter().map(|&v| v as usize).collect::<Vec<_>>();
    let images = bag.take("images")?;
    let y = to_labels(bag.take("y")?);
    let s = to_labels(bag.take("s")?);
    ShortcutDataset::new(
        images,
        y,
        s,
        meta.image_shape,
        meta.num_classes,
        meta.num_shortcuts,
        meta.distribution,
        meta.params,
    )
}

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    Train,
    InDist,
    Ood,
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Distribution::Train => "train",
            Distribution::InDist => "in_dist",
            Distribution::Ood => "ood",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Corner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

/// Which class receives the patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchTarget {
    Positive,
    Negative,
}

/// Everything needed to regenerate a dataset from its raw source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GenerationParams {
    ColoredMnist {
        source: String,
        p_d: f64,
        p_c: f64,
        seed: u64,
    },
    Patch {
        source: String,
        positive_prob: f64,
        patch_size: usize,
        corner: Corner,
        target: PatchTarget,
        seed: u64,
    },
    Dominoes {
        mnist_source: String,
        fashion_source: String,
        minority_fraction: f64,
        per_class: usize,
        seed: u64,
    },
    ColorFlipped {
        of: Box<GenerationParams>,
    },
}

impl GenerationParams {
    /// Dataset family, shared by every split and by color-flipped twins.
    pub fn family(&self) -> &'static str {
        match self {
            GenerationParams::ColoredMnist { .. } => "colored-mnist",
            GenerationParams::Patch { .. } => "patch",
            GenerationParams::Dominoes { .. } => "dominoes",
            GenerationParams::ColorFlipped { of } => of.family(),
        }
    }
}

/// Borrowed view of one example.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupedExample<'a> {
    pub x: &'a [f32],
    pub y: usize,
    pub s: usize,
}

impl GroupedExample<'_> {
    pub fn group(&self) -> (usize, usize) {
        (self.s, self.y)
    }
}

/// Labelled images with a shortcut attribute. Images are flattened
/// channel-major: `[N × C·H·W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShortcutDataset {
    pub images: Tensor,
    pub y: Vec<usize>,
    pub s: Vec<usize>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub num_shortcuts: usize,
    pub distribution: Distribution,
    pub params: GenerationParams,
}

/// Census over every `(s, y)` cell, zero cells included.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub num_shortcuts: usize,
    pub num_classes: usize,
    /// Row-major over `(s, y)`.
    pub counts: Vec<usize>,
}

impl GroupCounts {
    pub fn get(&self, s: usize, y: usize) -> usize {
        self.counts[s * self.num_classes + y]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn cells(&self) -> impl Iterator<Item = ((usize, usize), usize)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| ((i / self.num_classes, i % self.num_classes), c))
    }

    /// Examples whose shortcut disagrees with the label (binary case).
    pub fn minority(&self) -> usize {
        self.cells().filter(|((s, y), _)| s != y).map(|(_, c)| c).sum()
    }
}

impl ShortcutDataset {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        images: Tensor,
        y: Vec<usize>,
        s: Vec<usize>,
        shape: [usize; 3],
        num_classes: usize,
        num_shortcuts: usize,
        distribution: Distribution,
        params: GenerationParams,
    ) -> Result<Self> {
        let (n, p) = images.dims2()?;
        let [channels, height, width] = shape;
        if p != channels * height * width {
            return Err(Error::dim("ShortcutDataset", images.shape(), &shape));
        }
        if y.len() != n || s.len() != n {
            return Err(Error::dim("ShortcutDataset labels", &[n], &[y.len(), s.len()]));
        }
        if y.iter().any(|&v| v >= num_classes) || s.iter().any(|&v| v >= num_shortcuts) {
            return Err(Error::contract("label or shortcut index out of range"));
        }
        Ok(Self {
            images,
            y,
            s,
            channels,
            height,
            width,
            num_classes,
            num_shortcuts,
            distribution,
            params,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn pixels(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn example(&self, i: usize) -> GroupedExample<'_> {
        GroupedExample {
            x: self.images.row(i),
            y: self.y[i],
            s: self.s[i],
        }
    }

    pub fn examples(&self) -> impl Iterator<Item = GroupedExample<'_>> {
        (0..self.len()).map(|i| self.example(i))
    }

    pub fn num_groups(&self) -> usize {
        self.num_classes * self.num_shortcuts
    }

    /// Flat group index `s · num_classes + y`.
    pub fn group_index(&self, i: usize) -> usize {
        self.s[i] * self.num_classes + self.y[i]
    }

    pub fn group_counts(&self) -> GroupCounts {
        let mut counts = vec![0; self.num_groups()];
        for i in 0..self.len() {
            counts[self.group_index(i)] += 1;
        }
        GroupCounts {
            num_shortcuts: self.num_shortcuts,
            num_classes: self.num_classes,
            counts,
        }
    }

    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        Ok((self.images.gather_rows(idx)?, idx.iter().map(|&i| self.y[i]).collect()))
    }

    /// Examples `start..end` as a new dataset with the same metadata.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            images: self.images.slice_rows(0, n).expect("rank-2 images"),
            y: self.y[..n].to_vec(),
            s: self.s[..n].to_vec(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        Self {
            images: Tensor::zeros(&[0, self.pixels()]),
            y: Vec::new(),
            s: Vec::new(),
            channels: self.channels,
            height: self.height,
            width: self.width,
            num_classes: self.num_classes,
            num_shortcuts: self.num_shortcuts,
            distribution: self.distribution,
            params: self.params.clone(),
        }
    }

    /// Union of two datasets with identical image shapes. Metadata is
    /// taken from `self`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.image_shape() != other.image_shape() {
            return Err(Error::dim("concat", &self.image_shape(), &other.image_shape()));
        }
        Ok(Self {
            images: Tensor::stack_rows(&[self.images.clone(), other.images.clone()])?,
            y: [self.y.as_slice(), &other.y].concat(),
            s: [self.s.as_slice(), &other.s].concat(),
            ..self.clone_meta()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ShortcutDataset {
        ShortcutDataset::new(
            Tensor::zeros(&[4, 2]),
            vec![0, 1, 1, 1],
            vec![0, 1, 0, 1],
            [1, 1, 2],
            2,
            2,
            Distribution::Train,
            GenerationParams::ColoredMnist {
                source: "test".into(),
                p_d: 0.0,
                p_c: 0.0,
                seed: 0,
            },
        )
        .unwrap()
    }

    #[test]
    fn counts_cover_every_cell() {
        let c = tiny().group_counts();
        assert_eq!(c.counts, vec![1, 1, 0, 2]);
        assert_eq!(c.get(1, 0), 0);
        assert_eq!(c.total(), 4);
        assert_eq!(c.minority(), 1);
        assert_eq!(tiny().example(2).group(), (0, 1));
    }

    #[test]
    fn constructor_checks() {
        let t = tiny();
        assert!(ShortcutDataset::new(
            Tensor::zeros(&[4, 3]),
            t.y.clone(),
            t.s.clone(),
            [1, 1, 2],
            2,
            2,
            t.distribution,
            t.params.clone()
        )
        .is_err());
        assert!(ShortcutDataset::new(
            Tensor::zeros(&[4, 2]),
            vec![0, 2, 0, 0],
            t.s.clone(),
            [1, 1, 2],
            2,
            2,
            t.distribution,
            t.params.clone()
        )
        .is_err());
    }

    #[test]
    fn head_and_concat() {
        let t = tiny();
        assert_eq!(t.head(2).y, vec![0, 1]);
        let u = t.concat(&t.head(1)).unwrap();
        assert_eq!(u.len(), 5);
        assert_eq!(u.s[4], 0);
    }
}

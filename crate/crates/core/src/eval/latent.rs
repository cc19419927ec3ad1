use serde::{Deserialize, Serialize};

use crate::datasets::ShortcutDataset;
use crate::error::{Error, Result};
use crate::vae::ChromaModel;

/// Per-dimension mean `|μ(x) − μ(x′)|` over index-paired examples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentShiftProfile {
    pub values: Vec<f64>,
    /// Index of the first `z₂` dimension.
    pub boundary: usize,
}

impl LatentShiftProfile {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn z1_mean(&self) -> f64 {
        Self::mean(&self.values[..self.boundary])
    }

    pub fn z2_mean(&self) -> f64 {
        Self::mean(&self.values[self.boundary..])
    }

    /// `z1_mean / z2_mean`.
    pub fn ratio(&self) -> f64 {
        self.z1_mean() / self.z2_mean()
    }

    /// `dim,subspace,mean_abs_shift` rows.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["dim", "subspace", "mean_abs_shift"])?;
        for (i, v) in self.values.iter().enumerate() {
            let sub = if i < self.boundary { "z1" } else { "z2" };
            w.write_record([i.to_string(), sub.to_string(), v.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub fn latent_shift_profile(
    model: &ChromaModel,
    ds: &ShortcutDataset,
    twin: &ShortcutDataset,
) -> Result<LatentShiftProfile> {
    if ds.len() != twin.len() || ds.pixels() != twin.pixels() {
        return Err(Error::contract(format!(
            "latent shift needs index-paired datasets, got {} and {} examples",
            ds.len(),
            twin.len()
        )));
    }
    if ds.is_empty() {
        return Err(Error::contract("latent shift needs at least one example"));
    }
    let a = model.encode(&ds.images)?.mu;
    let b = model.encode(&twin.images)?.mu;
    let d = a.shape()[1];
    let mut sums = vec![0.0f64; d];
    for (ra, rb) in a.data().chunks_exact(d).zip(b.data().chunks_exact(d)) {
        for ((s, &u), &v) in sums.iter_mut().zip(ra).zip(rb) {
            *s += (u - v).abs() as f64;
        }
    }
    let n = ds.len() as f64;
    Ok(LatentShiftProfile {
        values: sums.into_iter().map(|s| s / n).collect(),
        boundary: model.partition().dim_z1(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{flip_colors, Distribution, GenerationParams};
    use crate::rng::RngState;
    use crate::tensor::Tensor;
    use crate::vae::{ModelSpec, PartitionSpec};

    fn colored(n: usize) -> ShortcutDataset {
        let mut rng = RngState::new(3);
        let px: Vec<f32> = (0..n * 8).map(|_| rng.uniform() as f32).collect();
        let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let s: Vec<usize> = (0..n).map(|i| (i / 2) % 2).collect();
        ShortcutDataset::new(
            Tensor::new(&[n, 8], px).unwrap(),
            y,
            s,
            [2, 2, 2],
            2,
            2,
            Distribution::Train,
            GenerationParams::ColoredMnist {
                source: "t".into(),
                p_d: 0.0,
                p_c: 0.1,
                seed: 0,
            },
        )
        .unwrap()
    }

    fn model() -> ChromaModel {
        let spec = ModelSpec {
            encoder_hidden: vec![6],
            decoder_hidden: vec![6],
            ..ModelSpec::new([2, 2, 2], PartitionSpec::new(6, 0.5).unwrap())
        };
        ChromaModel::new(spec, Default::default(), &mut RngState::new(1)).unwrap()
    }

    #[test]
    fn identical_twin_gives_zero_profile() {
        let ds = colored(10);
        let p = latent_shift_profile(&model(), &ds, &ds).unwrap();
        assert_eq!(p.len(), 6);
        assert_eq!(p.boundary, 3);
        assert!(p.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn symmetric_and_nonnegative() {
        let ds = colored(20);
        let twin = flip_colors(&ds).unwrap();
        let m = model();
        let ab = latent_shift_profile(&m, &ds, &twin).unwrap();
        let ba = latent_shift_profile(&m, &twin, &ds).unwrap();
        assert_eq!(ab, ba);
        assert!(ab.values.iter().all(|&v| v >= 0.0));
        assert!(ab.values.iter().any(|&v| v > 0.0));
        assert_eq!(ab.to_csv().unwrap().lines().count(), 7);
    }

    #[test]
    fn size_mismatch_is_contract_error() {
        let ds = colored(10);
        assert!(matches!(
            latent_shift_profile(&model(), &ds, &ds.head(9)),
            Err(Error::Contract(_))
        ));
    }
}

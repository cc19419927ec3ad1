use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Split of a `dim_z`-wide latent into a leading `z₁` block and a trailing
/// `z₂` block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPartition", into = "RawPartition")]
pub struct PartitionSpec {
    dim_z: usize,
    z_p: f64,
    dim_z1: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPartition {
    dim_z: usize,
    z_p: f64,
}

impl TryFrom<RawPartition> for PartitionSpec {
    type Error = Error;

    fn try_from(raw: RawPartition) -> Result<Self> {
        PartitionSpec::new(raw.dim_z, raw.z_p)
    }
}

impl From<PartitionSpec> for RawPartition {
    fn from(p: PartitionSpec) -> Self {
        RawPartition {
            dim_z: p.dim_z,
            z_p: p.z_p,
        }
    }
}

impl PartitionSpec {
    /// `dim_z1 = round(z_p · dim_z)`, halves rounded up.
    pub fn new(dim_z: usize, z_p: f64) -> Result<Self> {
        if !(z_p > 0.0 && z_p < 1.0) {
            return Err(Error::Config(format!("z_p = {z_p} must lie strictly between 0 and 1")));
        }
        // the epsilon absorbs products such as 0.3·5 = 1.4999999999999998
        let dim_z1 = (z_p * dim_z as f64 + 0.5 + 1e-9).floor() as usize;
        if dim_z1 < 1 || dim_z1 >= dim_z {
            return Err(Error::Config(format!(
                "dim_z = {dim_z}, z_p = {z_p} gives dim_z1 = {dim_z1}; need 1 <= dim_z1 < dim_z"
            )));
        }
        Ok(Self { dim_z, z_p, dim_z1 })
    }

    pub fn dim_z(&self) -> usize {
        self.dim_z
    }

    pub fn z_p(&self) -> f64 {
        self.z_p
    }

    pub fn dim_z1(&self) -> usize {
        self.dim_z1
    }

    pub fn dim_z2(&self) -> usize {
        self.dim_z - self.dim_z1
    }
}

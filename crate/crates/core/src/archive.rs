//! Manifest + blob persistence for named tensors.
//!
//! A manifest is a JSON document holding a format version, caller metadata
//! and a table of `(name, shape, offset)` entries. The blob stores every
//! tensor back to back as little-endian f32 in row-major order; offsets are
//! in bytes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest<M> {
    pub format_version: u32,
    #[serde(flatten)]
    pub meta: M,
    pub blob: String,
    pub tensors: Vec<TensorEntry>,
}

/// Writes `bytes` to `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `<stem>.json` and `<stem>.bin` into `dir`; returns both paths.
pub fn write<M: Serialize>(
    dir: &Path,
    stem: &str,
    meta: M,
    tensors: &[(String, &Tensor)],
) -> Result<(PathBuf, PathBuf)> {
    let blob_name = format!("{stem}.bin");
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: blob.len(),
        });
        blob.reserve(t.numel() * 4);
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        meta,
        blob: blob_name.clone(),
        tensors: entries,
    };
    let blob_path = dir.join(&blob_name);
    let manifest_path = dir.join(format!("{stem}.json"));
    write_atomic(&blob_path, &blob)?;
    write_atomic(&manifest_path, &serde_json::to_vec_pretty(&manifest)?)?;
    Ok((manifest_path, blob_path))
}

/// Reads a manifest and its blob, returning metadata and tensors in
/// manifest order.
pub fn read<M: DeserializeOwned>(manifest_path: &Path) -> Result<(M, Vec<(String, Tensor)>)> {
    let text = fs::read(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest<M> = serde_json::from_slice(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format {
            path: manifest_path.to_path_buf(),
            detail: format!(
                "format version {} (supported: {FORMAT_VERSION})",
                manifest.format_version
            ),
        });
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let blob_path = dir.join(&manifest.blob);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in manifest.tensors {
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + 4 * n;
        if end > blob.len() {
            return Err(Error::Length {
                path: blob_path,
                expected: end,
                found: blob.len(),
            });
        }
        let data = blob[entry.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push((entry.name, Tensor::new(&entry.shape, data)?));
    }
    Ok((manifest.meta, tensors))
}

/// Removes tensors from a loaded list by name.
pub struct TensorBag(Vec<(String, Tensor)>);

impl TensorBag {
    pub fn new(tensors: Vec<(String, Tensor)>) -> Self {
        Self(tensors)
    }

    pub fn take(&mut self, name: &str) -> Result<Tensor> {
        let pos = self
            .0
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::contract(format!("missing tensor {name}")))?;
        Ok(self.0.remove(pos).1)
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.0.iter().any(|(n, _)| n.starts_with(prefix))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let a = Tensor::new(&[2, 2], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.25]).unwrap();
        let b = Tensor::new(&[3], vec![0.1, 0.2, 0.3]).unwrap();
        let meta = serde_json::json!({"kind": "test"});
        let (m, _) = write(dir.path(), "ckpt", meta.clone(), &[("a".into(), &a), ("b".into(), &b)]).unwrap();
        let (meta2, ts): (serde_json::Value, _) = read(&m).unwrap();
        assert_eq!(meta2, meta);
        assert_eq!(
            ts[0].1.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(ts[1], ("b".to_string(), b));
    }

    #[test]
    fn truncated_blob_is_a_length_error() {
        let dir = tempfile::tempdir().unwrap();
        let a = Tensor::zeros(&[8]);
        let (m, blob) = write(dir.path(), "x", serde_json::json!({}), &[("a".into(), &a)]).unwrap();
        std::fs::write(&blob, [0u8; 7]).unwrap();
        assert!(matches!(read::<serde_json::Value>(&m), Err(Error::Length { .. })));
    }
}

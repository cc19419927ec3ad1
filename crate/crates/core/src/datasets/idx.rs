//! IDX reader for the MNIST family. Files may be raw or gzip-compressed.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Grayscale images in `[0,1]`, row-major, plus integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImageSet {
    pub pixels: Vec<f32>,
    pub labels: Vec<u8>,
    pub height: usize,
    pub width: usize,
}

impl RawImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_size();
        &self.pixels[i * n..(i + 1) * n]
    }

    /// Examples `start..end`, clamped to the set size.
    pub fn range(&self, start: usize, end: usize) -> RawImageSet {
        let end = end.min(self.len());
        let start = start.min(end);
        let n = self.image_size();
        RawImageSet {
            pixels: self.pixels[start * n..end * n].to_vec(),
            labels: self.labels[start..end].to_vec(),
            height: self.height,
            width: self.width,
        }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                detail: format!("bad gzip stream: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn header(bytes: &[u8], path: &Path, words: usize) -> Result<Vec<u32>> {
    if bytes.len() < 4 * words {
        return Err(Error::Length {
            path: path.to_path_buf(),
            expected: 4 * words,
            found: bytes.len(),
        });
    }
    Ok(bytes[..4 * words]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn expect_magic(found: u32, expected: u32, path: &Path) -> Result<()> {
    if found != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("magic {found:#010x} ({found}), expected {expected:#010x} ({expected})"),
        });
    }
    Ok(())
}

/// Returns `(n, height, width, pixels)` with bytes scaled by 1/255.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let bytes = read_bytes(path)?;
    let h = header(&bytes, path, 4)?;
    expect_magic(h[0], IMAGES_MAGIC, path)?;
    let (n, rows, cols) = (h[1] as usize, h[2] as usize, h[3] as usize);
    let body = &bytes[16..];
    let expected = n * rows * cols;
    if body.len() < expected {
        return Err(Error::Length {
            path: path.to_path_buf(),
            expected: 16 + expected,
            found: bytes.len(),
        });
    }
    let pixels = body[..expected].iter().map(|&b| b as f32 / 255.0).collect();
    Ok((n, rows, cols, pixels))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_bytes(path)?;
    let h = header(&bytes, path, 2)?;
    expect_magic(h[0], LABELS_MAGIC, path)?;
    let n = h[1] as usize;
    if bytes.len() < 8 + n {
        return Err(Error::Length {
            path: path.to_path_buf(),
            expected: 8 + n,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..8 + n].to_vec())
}

/// Loads an image file and its label file; counts must agree.
pub fn load_idx(images: &Path, labels: &Path) -> Result<RawImageSet> {
    let (n, height, width, pixels) = read_idx_images(images)?;
    let labels_v = read_idx_labels(labels)?;
    if labels_v.len() != n {
        return Err(Error::Format {
            path: labels.to_path_buf(),
            detail: format!("{} labels for {n} images", labels_v.len()),
        });
    }
    Ok(RawImageSet {
        pixels,
        labels: labels_v,
        height,
        width,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

fn split_file(dir: &Path, split: Split, kind: &str) -> PathBuf {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let plain = dir.join(format!("{prefix}-{kind}-ubyte"));
    if plain.exists() {
        return plain;
    }
    let gz = dir.join(format!("{prefix}-{kind}-ubyte.gz"));
    if gz.exists() {
        gz
    } else {
        plain
    }
}

/// Loads `train-*` or `t10k-*` files from a directory in the standard
/// MNIST naming scheme, with or without a `.gz` suffix.
pub fn load_split(dir: &Path, split: Split) -> Result<RawImageSet> {
    load_idx(
        &split_file(dir, split, "images-idx3"),
        &split_file(dir, split, "labels-idx1"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn image_file(n: u32, body: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for w in [IMAGES_MAGIC, n, 2, 2] {
            v.extend_from_slice(&w.to_be_bytes());
        }
        v.extend_from_slice(body);
        v
    }

    #[test]
    fn parses_raw_and_gzip() {
        let dir = tempfile::tempdir().unwrap();
        let img = image_file(2, &[0, 255, 51, 102, 1, 2, 3, 4]);
        let raw_path = dir.path().join("img");
        fs::write(&raw_path, &img).unwrap();
        let (n, h, w, px) = read_idx_images(&raw_path).unwrap();
        assert_eq!((n, h, w), (2, 2, 2));
        assert_eq!(px[1], 1.0);
        assert_eq!(px[0], 0.0);
        assert!((px[2] - 0.2).abs() < 1e-7);

        let gz_path = dir.path().join("img.gz");
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&img).unwrap();
        fs::write(&gz_path, enc.finish().unwrap()).unwrap();
        assert_eq!(read_idx_images(&gz_path).unwrap().3, px);

        let mut lab = Vec::new();
        lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        lab.extend_from_slice(&2u32.to_be_bytes());
        lab.extend_from_slice(&[7, 3]);
        let lab_path = dir.path().join("lab");
        fs::write(&lab_path, lab).unwrap();
        let set = load_idx(&raw_path, &lab_path).unwrap();
        assert_eq!(set.labels, vec![7, 3]);
        assert_eq!(set.image(1), &px[4..]);
    }

    #[test]
    fn wrong_magic_reports_value() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x");
        let mut img = image_file(1, &[0; 4]);
        img[3] = 0x01;
        fs::write(&path, img).unwrap();
        let err = read_idx_images(&path).unwrap_err();
        assert!(err.to_string().contains("0x00000801"), "{err}");
        assert!(read_idx_labels(&path).is_ok() || matches!(read_idx_labels(&path), Err(Error::Length { .. })));
    }

    #[test]
    fn truncated_is_length_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x");
        fs::write(&path, image_file(3, &[0; 5])).unwrap();
        assert!(matches!(read_idx_images(&path), Err(Error::Length { .. })));
        fs::write(&path, [0u8, 0, 8]).unwrap();
        assert!(matches!(read_idx_images(&path), Err(Error::Length { .. })));
    }
}

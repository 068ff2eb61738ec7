//! MNIST IDX and CIFAR-10 binary loaders.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    MnistIdx,
    Cifar10Binary,
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" | "mnist-idx" => Ok(DatasetKind::MnistIdx),
            "cifar10" | "cifar10-binary" => Ok(DatasetKind::Cifar10Binary),
            other => Err(Error::Config(format!(
                "unknown dataset kind '{other}' (expected mnist-idx or cifar10-binary)"
            ))),
        }
    }
}

/// Images in CHW order with pixels scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[channels, height, width]` of one image.
    pub image_shape: [usize; 3],
    pub pixels: Vec<f32>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.image_shape.iter().product()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    /// The first `n` images (all of them if there are fewer).
    pub fn truncated(mut self, n: usize) -> Self {
        let n = n.min(self.len());
        self.pixels.truncate(n * self.image_len());
        self.labels.truncate(n);
        self
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, at as u64, "truncated header"))
}

/// IDX image file: magic 0x803, then big-endian count, rows, cols.
pub fn load_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = read(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IDX_IMAGES {
        return Err(Error::format(
            path,
            0,
            format!("magic {magic:#010x}, expected {IDX_IMAGES:#010x}"),
        ));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let body = &bytes[16..];
    let need = n * rows * cols;
    if body.len() != need {
        return Err(Error::format(
            path,
            16 + body.len().min(need) as u64,
            format!(
                "{n}x{rows}x{cols} images need {need} bytes, found {}",
                body.len()
            ),
        ));
    }
    Ok((n, rows, cols, body.to_vec()))
}

/// IDX label file: magic 0x801, then a big-endian count.
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IDX_LABELS {
        return Err(Error::format(
            path,
            0,
            format!("magic {magic:#010x}, expected {IDX_LABELS:#010x}"),
        ));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::format(
            path,
            8 + body.len().min(n) as u64,
            format!("{n} labels expected, found {}", body.len()),
        ));
    }
    Ok(body.to_vec())
}

fn first_existing(dir: &Path, names: &[&str]) -> Result<PathBuf> {
    names
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::io(dir.join(names[0]), std::io::ErrorKind::NotFound.into()))
}

/// An IDX image/label pair from a directory holding either
/// `test-images-idx3-ubyte` or `t10k-images-idx3-ubyte` and the matching
/// labels.
pub fn load_mnist(dir: &Path) -> Result<Dataset> {
    let images = first_existing(dir, &["test-images-idx3-ubyte", "t10k-images-idx3-ubyte"])?;
    let labels = first_existing(dir, &["test-labels-idx1-ubyte", "t10k-labels-idx1-ubyte"])?;
    let (n, rows, cols, raw) = load_idx_images(&images)?;
    let labels = load_idx_labels(&labels)?;
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    Ok(Dataset {
        image_shape: [1, rows, cols],
        pixels: raw.iter().map(|&b| b as f32 / 255.0).collect(),
        labels,
    })
}

/// CIFAR-10 binary batch: 3073-byte records of label then R, G, B planes.
pub fn load_cifar10_batch(path: &Path) -> Result<Dataset> {
    let bytes = read(path)?;
    if bytes.len() % CIFAR_RECORD != 0 {
        let whole = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
        return Err(Error::format(
            path,
            whole as u64,
            format!("partial record: {} bytes left over", bytes.len() - whole),
        ));
    }
    let mut pixels = Vec::with_capacity(bytes.len() / CIFAR_RECORD * 3072);
    let mut labels = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::format(
                path,
                (i * CIFAR_RECORD) as u64,
                format!("label {} out of range", rec[0]),
            ));
        }
        labels.push(rec[0]);
        pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok(Dataset {
        image_shape: [3, 32, 32],
        pixels,
        labels,
    })
}

/// CIFAR-10 from a single batch file, or from `test_batch.bin` inside a
/// directory.
pub fn load_cifar10(path: &Path) -> Result<Dataset> {
    if path.is_dir() {
        load_cifar10_batch(&first_existing(path, &["test_batch.bin"])?)
    } else {
        load_cifar10_batch(path)
    }
}

pub fn load_dataset(path: &Path, kind: DatasetKind) -> Result<Dataset> {
    match kind {
        DatasetKind::MnistIdx => load_mnist(path),
        DatasetKind::Cifar10Binary => load_cifar10(path),
    }
}

/// Writes images and labels in IDX layout; pixels are rounded back to bytes.
pub fn write_idx(dir: &Path, prefix: &str, data: &Dataset) -> Result<()> {
    let [c, h, w] = data.image_shape;
    if c != 1 {
        return Err(Error::Shape(format!(
            "IDX images are single-channel, got {c}"
        )));
    }
    let mut img = Vec::with_capacity(16 + data.pixels.len());
    for v in [IDX_IMAGES, data.len() as u32, h as u32, w as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(
        data.pixels
            .iter()
            .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    let mut lab = Vec::with_capacity(8 + data.len());
    lab.extend_from_slice(&IDX_LABELS.to_be_bytes());
    lab.extend_from_slice(&(data.len() as u32).to_be_bytes());
    lab.extend_from_slice(&data.labels);
    let ip = dir.join(format!("{prefix}-images-idx3-ubyte"));
    let lp = dir.join(format!("{prefix}-labels-idx1-ubyte"));
    fs::write(&ip, img).map_err(|e| Error::io(&ip, e))?;
    fs::write(&lp, lab).map_err(|e| Error::io(&lp, e))
}

/// Writes a CIFAR-10 binary batch.
pub fn write_cifar10_batch(path: &Path, data: &Dataset) -> Result<()> {
    if data.image_shape != [3, 32, 32] {
        return Err(Error::Shape(format!(
            "CIFAR-10 images are 3x32x32, got {:?}",
            data.image_shape
        )));
    }
    let mut out = Vec::with_capacity(data.len() * CIFAR_RECORD);
    for i in 0..data.len() {
        out.push(data.labels[i]);
        out.extend(
            data.image(i)
                .iter()
                .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8),
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

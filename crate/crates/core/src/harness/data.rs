use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::learning::one_hot;
use crate::linalg::Vector;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: bad magic number {got:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, expected: u32, got: u32 },
    #[error("{path}: file is truncated ({what})")]
    TruncatedFile { path: PathBuf, what: &'static str },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Labelled inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Vector>,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<Vector>, labels: Vec<usize>, classes: usize) -> Result<Self, DataError> {
        if inputs.len() != labels.len() {
            return Err(DataError::CountMismatch {
                images: inputs.len(),
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::Invalid(format!("label {bad} ≥ class count {classes}")));
        }
        if let Some(first) = inputs.first() {
            if inputs.iter().any(|x| x.dim() != first.dim()) {
                return Err(DataError::Invalid("inputs have different dimensions".into()));
            }
        }
        Ok(Dataset { inputs, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Vector] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vector::dim)
    }

    /// One-hot target of sample `i`.
    pub fn target(&self, i: usize) -> Vector {
        one_hot(self.labels[i], self.classes)
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// The first `n` samples (all of them if `n` is larger).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        self.select(&(0..n).collect::<Vec<_>>())
    }

    /// Seed-shuffled copy.
    pub fn shuffled(&self, seed: u64) -> Dataset {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        self.select(&idx)
    }

    /// Shuffles by `seed` and holds out the first `⌈fraction·n⌉` samples:
    /// returns `(train, validation)`.
    pub fn split_validation(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(DataError::Invalid(format!("validation fraction {fraction} outside [0, 1)")));
        }
        let shuffled = self.shuffled(seed);
        let held = (fraction * self.len() as f64).ceil() as usize;
        let val = shuffled.select(&(0..held).collect::<Vec<_>>());
        let train = shuffled.select(&(held..self.len()).collect::<Vec<_>>());
        Ok((train, val))
    }
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize, path: &Path, what: &'static str) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::TruncatedFile {
            path: path.to_path_buf(),
            what,
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<(), DataError> {
    let got = be_u32(bytes, 0, path, "magic number")?;
    if got != expected {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected,
            got,
        });
    }
    Ok(())
}

/// Reads an IDX image file (`0x00000803`) into vectors scaled to `[0, 1]`.
pub fn read_idx_images(path: &Path) -> Result<Vec<Vector>, DataError> {
    let bytes = read(path)?;
    check_magic(&bytes, IDX_IMAGES_MAGIC, path)?;
    let count = be_u32(&bytes, 4, path, "image count")? as usize;
    let rows = be_u32(&bytes, 8, path, "row count")? as usize;
    let cols = be_u32(&bytes, 12, path, "column count")? as usize;
    let size = rows * cols;
    let body = &bytes[16..];
    if body.len() < count * size {
        return Err(DataError::TruncatedFile {
            path: path.to_path_buf(),
            what: "pixel data",
        });
    }
    Ok(body
        .chunks_exact(size.max(1))
        .take(count)
        .map(|px| px.iter().map(|&p| f64::from(p) / 255.0).collect())
        .collect())
}

/// Reads an IDX label file (`0x00000801`).
pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>, DataError> {
    let bytes = read(path)?;
    check_magic(&bytes, IDX_LABELS_MAGIC, path)?;
    let count = be_u32(&bytes, 4, path, "label count")? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(DataError::TruncatedFile {
            path: path.to_path_buf(),
            what: "label data",
        });
    }
    Ok(body[..count].iter().map(|&l| usize::from(l)).collect())
}

/// Loads an IDX image/label pair. Ten classes unless a label says otherwise.
pub fn load_mnist_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let inputs = read_idx_images(images.as_ref())?;
    let labels = read_idx_labels(labels.as_ref())?;
    if inputs.len() != labels.len() {
        return Err(DataError::CountMismatch {
            images: inputs.len(),
            labels: labels.len(),
        });
    }
    let classes = labels.iter().max().map_or(10, |&m| (m + 1).max(10));
    Dataset::new(inputs, labels, classes)
}

/// `(train, test)` from a directory with the standard MNIST file names.
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset), DataError> {
    let d = dir.as_ref();
    let train = load_mnist_idx(d.join("train-images-idx3-ubyte"), d.join("train-labels-idx1-ubyte"))?;
    let test = load_mnist_idx(d.join("t10k-images-idx3-ubyte"), d.join("t10k-labels-idx1-ubyte"))?;
    Ok((train, test))
}

/// Gaussian blobs with unit variance around deterministic centers.
///
/// Class `c` is centered at `separation · e_{c mod dim}`, negated for every
/// second wrap-around, so any two centers are at least `separation` apart
/// (`√2·separation` when they lie on different axes). Samples are ordered
/// class by class.
pub fn synth_blobs(classes: usize, dim: usize, n_per_class: usize, separation: f64, seed: u64) -> Result<Dataset, DataError> {
    if classes == 0 || dim == 0 || n_per_class == 0 {
        return Err(DataError::Invalid("classes, dim and n_per_class must be ≥ 1".into()));
    }
    if classes > 2 * dim {
        return Err(DataError::Invalid(format!("at most {} classes fit in {dim} dimensions", 2 * dim)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(classes * n_per_class);
    let mut labels = Vec::with_capacity(classes * n_per_class);
    for c in 0..classes {
        let sign = if (c / dim) % 2 == 0 { 1.0 } else { -1.0 };
        let center = Vector::basis(dim, c % dim).scale(sign * separation);
        for _ in 0..n_per_class {
            let noise: Vector = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            inputs.push(center.add(&noise));
            labels.push(c);
        }
    }
    Dataset::new(inputs, labels, classes)
}

//! Datasets, IDX files and per-client partitioning.

mod idx;
mod partition;
mod synthetic;

pub use idx::{load_idx, write_idx, IMAGE_MAGIC, LABEL_MAGIC};
pub use partition::{
    make_iid_plan, make_noniid_plan, shared_eval_indices, shared_eval_split, ClientPlan, ClientSkew, Partition,
    PartitionPlan, SkewConfig,
};
pub use synthetic::synthetic_dataset;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::nn::{Batch, NnError};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad IDX magic {found:#010x}, expected {expected:#010x}")]
    Format { found: u32, expected: u32 },
    #[error("{images} images but {labels} labels")]
    Consistency { images: usize, labels: usize },
    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("empty dataset")]
    Empty,
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("plan infeasible: {0}")]
    Infeasible(String),
    #[error("label {0} out of range")]
    Label(u8),
}

/// Number of classes for every dataset this crate builds.
pub const NUM_CLASSES: usize = 10;

/// Row-major image matrix with labels. Pixels live in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<f64>,
    labels: Vec<u8>,
    dim: usize,
}

impl Dataset {
    pub fn new(images: Vec<f64>, labels: Vec<u8>, dim: usize) -> Result<Self, DataError> {
        if dim == 0 || images.len() != labels.len() * dim {
            return Err(DataError::Consistency {
                images: images.len().checked_div(dim).unwrap_or(0),
                labels: labels.len(),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(DataError::Label(l));
        }
        if images.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(DataError::Invalid("pixel outside [0, 1]".into()));
        }
        Ok(Self { images, labels, dim })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn images(&self) -> &[f64] {
        &self.images
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.images[i * self.dim..(i + 1) * self.dim]
    }

    /// Copies the given rows, in order, into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            images,
            labels,
            dim: self.dim,
        }
    }

    pub fn as_batch(&self) -> Result<Batch<'_>, NnError> {
        Batch::new(&self.images, &self.labels, self.dim)
    }

    /// Row indices grouped by label.
    pub fn indices_by_label(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); NUM_CLASSES];
        for (i, &l) in self.labels.iter().enumerate() {
            by[l as usize].push(i);
        }
        by
    }
}

/// Where a run's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Mnist {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Synthetic {
        train_rows: usize,
        test_rows: usize,
        seed: u64,
    },
}

impl DataSource {
    /// Standard MNIST file names inside `dir`.
    pub fn mnist_dir(dir: impl Into<PathBuf>) -> Self {
        let dir = dir.into();
        DataSource::Mnist {
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test_images: dir.join("t10k-images-idx3-ubyte"),
            test_labels: dir.join("t10k-labels-idx1-ubyte"),
        }
    }

    pub fn load(&self) -> Result<DataBundle, DataError> {
        match self {
            DataSource::Mnist {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => Ok(DataBundle {
                train: load_idx(train_images, train_labels)?,
                test: load_idx(test_images, test_labels)?,
            }),
            DataSource::Synthetic {
                train_rows,
                test_rows,
                seed,
            } => {
                let all = synthetic_dataset(train_rows + test_rows, 784, *seed)?;
                let train: Vec<usize> = (0..*train_rows).collect();
                let test: Vec<usize> = (*train_rows..train_rows + test_rows).collect();
                Ok(DataBundle {
                    train: all.subset(&train),
                    test: all.subset(&test),
                })
            }
        }
    }
}

/// Training pool plus held-out test rows.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub train: Dataset,
    pub test: Dataset,
}

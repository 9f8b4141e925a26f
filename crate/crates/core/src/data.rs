//! Dataset ingestion and task-stream construction.
//!
//! Two on-disk formats are read:
//!
//! - MNIST IDX: big-endian header (`0x00000803` images / `0x00000801` labels),
//!   pixels scaled to `[0, 1]`.
//! - Feature container, all little-endian:
//!
//! ```text
//! offset 0   magic  b"VCILFEAT"
//! offset 8   dim    u32
//! offset 12  count  u64
//! then `count` records of: label u32, record_dim u32, record_dim x f64
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const FEATURE_MAGIC: &[u8; 8] = b"VCILFEAT";

/// Feature vectors with one integer label each; features are `(n, dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    features: Tensor,
    labels: Vec<u32>,
}

impl LabeledSet {
    pub fn new(features: Tensor, labels: Vec<u32>) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != labels.len() {
            return Err(Error::dims("LabeledSet", features.shape(), &[labels.len()]));
        }
        Ok(Self { features, labels })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            features: Tensor::zeros(&[0, dim]),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> (&[f64], u32) {
        (self.features.row(i), self.labels[i])
    }

    /// Sorted distinct labels.
    pub fn label_set(&self) -> Vec<u32> {
        self.labels
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn indices_of(&self, label: u32) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i] == label)
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Rows of `label` as a `(n, dim)` matrix.
    pub fn features_of(&self, label: u32) -> Tensor {
        self.features.select_rows(&self.indices_of(label))
    }

    /// Keeps samples whose label is in `labels`, preserving order.
    pub fn with_labels(&self, labels: &[u32]) -> Self {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| labels.contains(&self.labels[i]))
            .collect();
        self.subset(&idx)
    }

    /// Seeded selection of at most `per_class` samples of every label, in original order.
    pub fn take_per_class(&self, per_class: usize, seed: u64) -> Self {
        let mut keep = Vec::new();
        for label in self.label_set() {
            let mut idx = self.indices_of(label);
            idx.shuffle(&mut class_rng(seed, label));
            idx.truncate(per_class);
            keep.extend(idx);
        }
        keep.sort_unstable();
        self.subset(&keep)
    }

    /// Row-wise concatenation; both sets must share the feature dimension.
    pub fn concat(&self, other: &LabeledSet) -> Result<Self> {
        if self.is_empty() {
            return Ok(other.clone());
        }
        if other.is_empty() {
            return Ok(self.clone());
        }
        let features = self.features.concat_rows(&other.features)?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Self::new(features, labels)
    }
}

fn class_rng(seed: u64, label: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(label) + 1);
    rng
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Parse {
            offset: offset as u64,
            message: format!("truncated header: missing {what}"),
        })
}

/// Parses an IDX3 image file into `(count, rows * cols)` pixels scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    let magic = be_u32(bytes, 0, "magic number")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 4, "image count")? as usize;
    let rows = be_u32(bytes, 8, "row count")? as usize;
    let cols = be_u32(bytes, 12, "column count")? as usize;
    let dim = rows * cols;
    let body = &bytes[16..];
    let need = count * dim;
    if body.len() < need {
        return Err(Error::Parse {
            offset: bytes.len() as u64,
            message: format!(
                "truncated pixel data: header declares {count} images of {rows}x{cols} ({need} bytes), found {} bytes",
                body.len()
            ),
        });
    }
    if body.len() > need {
        return Err(Error::Parse {
            offset: (16 + need) as u64,
            message: format!("{} unexpected trailing bytes", body.len() - need),
        });
    }
    let values = body.iter().map(|&p| f64::from(p) / 255.0).collect();
    Tensor::matrix(count, dim, values)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u32>> {
    let magic = be_u32(bytes, 0, "magic number")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 4, "label count")? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::Parse {
            offset: if body.len() < count {
                bytes.len() as u64
            } else {
                (8 + count) as u64
            },
            message: format!(
                "header declares {count} labels, found {} bytes of label data",
                body.len()
            ),
        });
    }
    Ok(body.iter().map(|&l| u32::from(l)).collect())
}

/// Loads an IDX image/label file pair.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledSet> {
    let images = parse_idx_images(&read_file(images_path)?)?;
    let labels = parse_idx_labels(&read_file(labels_path)?)?;
    if images.rows() != labels.len() {
        return Err(Error::Parse {
            offset: 4,
            message: format!(
                "{} declares {} images but {} declares {} labels",
                images_path.display(),
                images.rows(),
                labels_path.display(),
                labels.len()
            ),
        });
    }
    LabeledSet::new(images, labels)
}

/// The standard MNIST file names inside `dir`, as `(images, labels)` for train and test.
pub fn mnist_paths(dir: &Path) -> [(std::path::PathBuf, std::path::PathBuf); 2] {
    [
        (
            dir.join("train-images-idx3-ubyte"),
            dir.join("train-labels-idx1-ubyte"),
        ),
        (
            dir.join("t10k-images-idx3-ubyte"),
            dir.join("t10k-labels-idx1-ubyte"),
        ),
    ]
}

/// Loads the official train and test splits from a directory of raw IDX files.
pub fn load_mnist_dir(dir: &Path) -> Result<(LabeledSet, LabeledSet)> {
    let [(tri, trl), (tei, tel)] = mnist_paths(dir);
    Ok((load_mnist_idx(&tri, &trl)?, load_mnist_idx(&tei, &tel)?))
}

pub fn encode_features(set: &LabeledSet) -> Vec<u8> {
    let dim = set.dim();
    let mut out = Vec::with_capacity(20 + set.len() * (8 + 8 * dim));
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    for i in 0..set.len() {
        let (x, y) = set.sample(i);
        out.extend_from_slice(&y.to_le_bytes());
        out.extend_from_slice(&(dim as u32).to_le_bytes());
        for v in x {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<LabeledSet> {
    if bytes.len() < 20 {
        return Err(Error::Parse {
            offset: bytes.len() as u64,
            message: "truncated feature header".into(),
        });
    }
    if &bytes[..8] != FEATURE_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "not a feature container (bad magic)".into(),
        });
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let declared = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let record_len = 8 + 8 * dim;

    let mut pos = 20;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut found: u64 = 0;
    while pos < bytes.len() {
        if bytes.len() - pos < 8 {
            return Err(Error::Record {
                record: found,
                message: format!("truncated record header at byte {pos}"),
            });
        }
        let label = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes"));
        let rdim =
            u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().expect("4 bytes")) as usize;
        if rdim != dim {
            return Err(Error::Record {
                record: found,
                message: format!("record has dimension {rdim}, header declares {dim}"),
            });
        }
        if bytes.len() - pos < record_len {
            return Err(Error::Record {
                record: found,
                message: format!("truncated record body at byte {pos}"),
            });
        }
        if found < declared {
            labels.push(label);
            values.extend(
                bytes[pos + 8..pos + record_len]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))),
            );
        }
        found += 1;
        pos += record_len;
    }
    if found != declared {
        return Err(Error::Parse {
            offset: 12,
            message: format!("header declares {declared} records but file contains {found}"),
        });
    }
    LabeledSet::new(Tensor::matrix(labels.len(), dim, values)?, labels)
}

pub fn load_feature_file(path: &Path) -> Result<LabeledSet> {
    decode_features(&read_file(path)?)
}

pub fn write_feature_file(path: &Path, set: &LabeledSet) -> Result<()> {
    fs::write(path, encode_features(set)).map_err(|e| Error::io(path, e))
}

/// Training data of one task: samples whose labels form the task's label set.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    /// 1-based position in the stream.
    pub task_id: usize,
    /// Sorted labels of this task.
    pub label_set: Vec<u32>,
    pub samples: LabeledSet,
}

impl TaskDataset {
    pub fn new(task_id: usize, samples: LabeledSet) -> Self {
        Self {
            task_id,
            label_set: samples.label_set(),
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Tasks in arrival order with aligned validation and test partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub train: Vec<TaskDataset>,
    pub validation: Vec<TaskDataset>,
    pub test: Vec<TaskDataset>,
    pub validation_fraction: f64,
}

impl TaskStream {
    pub fn num_tasks(&self) -> usize {
        self.train.len()
    }

    pub fn dim(&self) -> usize {
        self.train.first().map_or(0, |t| t.samples.dim())
    }

    /// Labels of tasks `1..=upto`, in task order.
    pub fn labels_upto(&self, upto: usize) -> Vec<u32> {
        self.train
            .iter()
            .take(upto)
            .flat_map(|t| t.label_set.iter().copied())
            .collect()
    }

    /// Union of the test partitions of tasks `1..=upto`.
    pub fn test_upto(&self, upto: usize) -> Result<LabeledSet> {
        let mut acc = LabeledSet::empty(self.dim());
        for t in self.test.iter().take(upto) {
            acc = acc.concat(&t.samples)?;
        }
        Ok(acc)
    }

    /// Union of all training partitions.
    pub fn all_train(&self) -> Result<LabeledSet> {
        let mut acc = LabeledSet::empty(self.dim());
        for t in &self.train {
            acc = acc.concat(&t.samples)?;
        }
        Ok(acc)
    }
}

/// Groups the sorted class ids into consecutive blocks of `classes_per_task` and
/// partitions both splits accordingly. A stratified `validation_fraction` of each
/// training class is moved into the validation partition.
pub fn split_tasks(
    train: &LabeledSet,
    test: &LabeledSet,
    classes_per_task: usize,
    validation_fraction: f64,
    seed: u64,
) -> Result<TaskStream> {
    if !(0.0..1.0).contains(&validation_fraction) {
        return Err(Error::Config(format!(
            "validation fraction must be in [0, 1), got {validation_fraction}"
        )));
    }
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if !test.is_empty() && test.dim() != train.dim() {
        return Err(Error::dims("split_tasks", &[train.dim()], &[test.dim()]));
    }
    let classes = train.label_set();
    if classes_per_task == 0 || !classes.len().is_multiple_of(classes_per_task) {
        return Err(Error::Config(format!(
            "{} classes cannot be divided into tasks of {classes_per_task}",
            classes.len()
        )));
    }
    if let Some(extra) = test.label_set().into_iter().find(|l| !classes.contains(l)) {
        return Err(Error::Config(format!(
            "test label {extra} does not occur in the training set"
        )));
    }

    let mut stream = TaskStream {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        validation_fraction,
    };
    for (t, group) in classes.chunks(classes_per_task).enumerate() {
        let mut train_idx = Vec::new();
        let mut val_idx = Vec::new();
        for &label in group {
            let mut idx = train.indices_of(label);
            let n_val = (validation_fraction * idx.len() as f64).round() as usize;
            idx.shuffle(&mut class_rng(seed, label));
            let (val, rest) = idx.split_at(n_val);
            val_idx.extend_from_slice(val);
            train_idx.extend_from_slice(rest);
        }
        train_idx.sort_unstable();
        val_idx.sort_unstable();
        let task_id = t + 1;
        stream.train.push(TaskDataset {
            task_id,
            label_set: group.to_vec(),
            samples: train.subset(&train_idx),
        });
        stream.validation.push(TaskDataset {
            task_id,
            label_set: group.to_vec(),
            samples: train.subset(&val_idx),
        });
        stream.test.push(TaskDataset {
            task_id,
            label_set: group.to_vec(),
            samples: test.with_labels(group),
        });
    }
    Ok(stream)
}

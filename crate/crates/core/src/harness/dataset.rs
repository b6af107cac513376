//! Synthetic classification sets and an IDX loader.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64(seed)`, which is
//! specified bit-for-bit and platform independent; normals come from
//! `rand_distr::StandardNormal`. Samples are shuffled once with the same
//! generator and split 80/20 into train and validation.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::model::{Batch, Targets};
use crate::tensor_ad::Tensor;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("unknown dataset kind {0:?}; valid kinds: blobs, moons, spiral, idx:<prefix>")]
    UnknownKind(String),
    #[error("dataset size must be at least 10, got {0}")]
    TooSmall(usize),
    #[error("idx file {path}: {reason}")]
    Idx { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetKind {
    /// Three well separated isotropic Gaussian clusters.
    Blobs,
    /// Two interleaving half circles.
    Moons,
    /// Three interleaved spiral arms.
    Spiral,
    /// `<prefix>-images.idx` / `<prefix>-labels.idx` pair.
    Idx(PathBuf),
}

impl FromStr for DatasetKind {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "blobs" => Ok(Self::Blobs),
            "moons" => Ok(Self::Moons),
            "spiral" => Ok(Self::Spiral),
            _ => match s.strip_prefix("idx:") {
                Some(p) if !p.is_empty() => Ok(Self::Idx(PathBuf::from(p))),
                _ => Err(DatasetError::UnknownKind(s.to_string())),
            },
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Blobs => f.write_str("blobs"),
            Self::Moons => f.write_str("moons"),
            Self::Spiral => f.write_str("spiral"),
            Self::Idx(p) => write!(f, "idx:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train_inputs: Tensor,
    pub train_labels: Vec<usize>,
    pub val_inputs: Tensor,
    pub val_labels: Vec<usize>,
    pub features: usize,
    pub classes: usize,
    /// Generation-order indices of the train and validation samples.
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

impl Dataset {
    pub fn train_len(&self) -> usize {
        self.train_labels.len()
    }

    pub fn val_len(&self) -> usize {
        self.val_labels.len()
    }

    /// Training rows `rows` as a batch tagged `id`.
    pub fn batch(&self, id: u64, rows: &[usize]) -> Batch {
        Batch::new(
            id,
            self.train_inputs.select_rows(rows),
            Targets::Classes(rows.iter().map(|&r| self.train_labels[r]).collect()),
        )
    }

    pub fn full_batch(&self, id: u64) -> Batch {
        Batch::new(
            id,
            self.train_inputs.clone(),
            Targets::Classes(self.train_labels.clone()),
        )
    }

    /// `split,label,x0,x1,...` rows, train first; floats in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "split,label")?;
        for j in 0..self.features {
            write!(out, ",x{j}")?;
        }
        writeln!(out)?;
        for (split, x, y) in [
            ("train", &self.train_inputs, &self.train_labels),
            ("val", &self.val_inputs, &self.val_labels),
        ] {
            for (i, label) in y.iter().enumerate() {
                write!(out, "{split},{label}")?;
                for v in x.row(i) {
                    write!(out, ",{v}")?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

pub fn generate_dataset(kind: &DatasetKind, size: usize, seed: u64) -> Result<Dataset, DatasetError> {
    if size < 10 {
        return Err(DatasetError::TooSmall(size));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (features, classes, points, labels) = match kind {
        DatasetKind::Blobs => blobs(size, &mut rng),
        DatasetKind::Moons => moons(size, &mut rng),
        DatasetKind::Spiral => spiral(size, &mut rng),
        DatasetKind::Idx(prefix) => load_idx(prefix, size)?,
    };
    Ok(split(features, classes, points, labels, &mut rng))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

type Raw = (usize, usize, Vec<f64>, Vec<usize>);

fn blobs(size: usize, rng: &mut ChaCha8Rng) -> Raw {
    let mut points = Vec::with_capacity(2 * size);
    let mut labels = Vec::with_capacity(size);
    for i in 0..size {
        let c = i % 3;
        let angle = 2.0 * PI * c as f64 / 3.0;
        points.push(5.0 * angle.cos() + 0.5 * normal(rng));
        points.push(5.0 * angle.sin() + 0.5 * normal(rng));
        labels.push(c);
    }
    (2, 3, points, labels)
}

fn moons(size: usize, rng: &mut ChaCha8Rng) -> Raw {
    let mut points = Vec::with_capacity(2 * size);
    let mut labels = Vec::with_capacity(size);
    for i in 0..size {
        let c = i % 2;
        let t = PI * rng.random::<f64>();
        let (x, y) = if c == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        points.push(x - 0.5 + 0.1 * normal(rng));
        points.push(y - 0.25 + 0.1 * normal(rng));
        labels.push(c);
    }
    (2, 2, points, labels)
}

fn spiral(size: usize, rng: &mut ChaCha8Rng) -> Raw {
    let mut points = Vec::with_capacity(2 * size);
    let mut labels = Vec::with_capacity(size);
    for i in 0..size {
        let c = i % 3;
        let r: f64 = rng.random();
        let t = 4.0 * c as f64 + 4.0 * r + 0.2 * normal(rng);
        points.push(r * t.sin());
        points.push(r * t.cos());
        labels.push(c);
    }
    (2, 3, points, labels)
}

fn split(features: usize, classes: usize, points: Vec<f64>, labels: Vec<usize>, rng: &mut ChaCha8Rng) -> Dataset {
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_train = n * 8 / 10;
    let (train_idx, val_idx) = order.split_at(n_train);
    let all = Tensor::matrix(n, features, points).expect("generated rows");
    Dataset {
        train_inputs: all.select_rows(train_idx),
        train_labels: train_idx.iter().map(|&i| labels[i]).collect(),
        val_inputs: all.select_rows(val_idx),
        val_labels: val_idx.iter().map(|&i| labels[i]).collect(),
        features,
        classes,
        train_indices: train_idx.to_vec(),
        val_indices: val_idx.to_vec(),
    }
}

fn idx_error(path: &Path, reason: impl Into<String>) -> DatasetError {
    DatasetError::Idx {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Reads at most `limit` samples; pixels are scaled to `[0, 1]`.
fn load_idx(prefix: &Path, limit: usize) -> Result<Raw, DatasetError> {
    let mut images_path = prefix.as_os_str().to_owned();
    images_path.push("-images.idx");
    let mut labels_path = prefix.as_os_str().to_owned();
    labels_path.push("-labels.idx");
    let (images_path, labels_path) = (PathBuf::from(images_path), PathBuf::from(labels_path));

    let images = fs::read(&images_path)?;
    if images.len() < 16 || be_u32(&images, 0) != 0x0803 {
        return Err(idx_error(&images_path, "expected ubyte image header (magic 0x00000803)"));
    }
    let (count, rows, cols) = (
        be_u32(&images, 4) as usize,
        be_u32(&images, 8) as usize,
        be_u32(&images, 12) as usize,
    );
    let features = rows * cols;
    if images.len() < 16 + count * features {
        return Err(idx_error(&images_path, "truncated pixel data"));
    }
    let labels = fs::read(&labels_path)?;
    if labels.len() < 8 || be_u32(&labels, 0) != 0x0801 {
        return Err(idx_error(&labels_path, "expected ubyte label header (magic 0x00000801)"));
    }
    let label_count = be_u32(&labels, 4) as usize;
    if label_count != count || labels.len() < 8 + count {
        return Err(idx_error(&labels_path, "label count does not match image count"));
    }
    let n = count.min(limit);
    if n < 10 {
        return Err(DatasetError::TooSmall(n));
    }
    let points = images[16..16 + n * features]
        .iter()
        .map(|&p| p as f64 / 255.0)
        .collect();
    let labels: Vec<usize> = labels[8..8 + n].iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    Ok((features, classes, points, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_kinds() {
        assert_eq!("moons".parse::<DatasetKind>().unwrap(), DatasetKind::Moons);
        assert_eq!(
            "idx:/tmp/x".parse::<DatasetKind>().unwrap(),
            DatasetKind::Idx(PathBuf::from("/tmp/x"))
        );
        let err = "cifar".parse::<DatasetKind>().unwrap_err().to_string();
        assert!(err.contains("blobs, moons, spiral"), "{err}");
        assert!("idx:".parse::<DatasetKind>().is_err());
    }

    #[test]
    fn ten_samples_split_eight_two() {
        let d = generate_dataset(&DatasetKind::Spiral, 10, 1).unwrap();
        assert_eq!(d.train_len(), 8);
        assert_eq!(d.val_len(), 2);
    }

    #[test]
    fn too_small_is_rejected() {
        assert!(matches!(
            generate_dataset(&DatasetKind::Blobs, 9, 1),
            Err(DatasetError::TooSmall(9))
        ));
    }

    #[test]
    fn same_seed_same_bytes() {
        for kind in [DatasetKind::Blobs, DatasetKind::Moons, DatasetKind::Spiral] {
            let mut a = Vec::new();
            let mut b = Vec::new();
            generate_dataset(&kind, 200, 42).unwrap().write_csv(&mut a).unwrap();
            generate_dataset(&kind, 200, 42).unwrap().write_csv(&mut b).unwrap();
            assert_eq!(a, b);
            let mut c = Vec::new();
            generate_dataset(&kind, 200, 43).unwrap().write_csv(&mut c).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn splits_are_disjoint_and_labels_in_range() {
        let d = generate_dataset(&DatasetKind::Spiral, 333, 5).unwrap();
        let mut all: Vec<usize> = d.train_indices.iter().chain(&d.val_indices).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..333).collect::<Vec<_>>());
        assert!(d.train_labels.iter().chain(&d.val_labels).all(|&l| l < d.classes));
    }

    #[test]
    fn reads_idx_pair() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("tiny");
        let n = 12u32;
        let mut img = Vec::new();
        for v in [0x0803u32, n, 2, 2] {
            img.extend_from_slice(&v.to_be_bytes());
        }
        img.extend((0..n * 4).map(|i| (i * 5 % 256) as u8));
        let mut lab = Vec::new();
        for v in [0x0801u32, n] {
            lab.extend_from_slice(&v.to_be_bytes());
        }
        lab.extend((0..n).map(|i| (i % 4) as u8));
        fs::write(dir.path().join("tiny-images.idx"), img).unwrap();
        fs::write(dir.path().join("tiny-labels.idx"), lab).unwrap();

        let d = generate_dataset(&DatasetKind::Idx(prefix.clone()), 1000, 0).unwrap();
        assert_eq!(d.features, 4);
        assert_eq!(d.classes, 4);
        assert_eq!(d.train_len() + d.val_len(), 12);
        assert!(d.train_inputs.data().iter().all(|v| (0.0..=1.0).contains(v)));

        fs::write(dir.path().join("tiny-labels.idx"), [0u8; 4]).unwrap();
        assert!(matches!(
            generate_dataset(&DatasetKind::Idx(prefix), 1000, 0),
            Err(DatasetError::Idx { .. })
        ));
    }
}

use std::path::{Path, PathBuf};

use super::cifar::{read_cifar10, CIFAR_CLASSES};
use super::idx::{read_idx_images, read_idx_labels};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Maps a byte to `[-1, 1]`.
pub fn normalize(byte: u8) -> f64 {
    byte as f64 / 127.5 - 1.0
}

/// Inverse of [`normalize`], clamping to `[-1, 1]` first.
pub fn denormalize(value: f64) -> u8 {
    ((value.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    FashionMnist,
    Cifar10,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 3] = [DatasetKind::Mnist, DatasetKind::FashionMnist, DatasetKind::Cifar10];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::FashionMnist => "fashion-mnist",
            DatasetKind::Cifar10 => "cifar10",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn channels(self) -> usize {
        match self {
            DatasetKind::Cifar10 => 3,
            _ => 1,
        }
    }

    pub fn classes(self) -> usize {
        10
    }

    /// Side length of the square training images.
    pub fn image_size(self) -> usize {
        match self {
            DatasetKind::Cifar10 => 32,
            _ => 28,
        }
    }

    /// Files the loader expects inside the data directory.
    pub fn files(self, dir: &Path) -> Vec<PathBuf> {
        match self {
            DatasetKind::Mnist | DatasetKind::FashionMnist => vec![
                dir.join("train-images-idx3-ubyte"),
                dir.join("train-labels-idx1-ubyte"),
            ],
            DatasetKind::Cifar10 => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Labelled images held as raw bytes; batches are normalized on fetch.
#[derive(Debug, Clone)]
pub struct Dataset {
    kind: DatasetKind,
    height: usize,
    width: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn from_raw(
        kind: DatasetKind,
        height: usize,
        width: usize,
        pixels: Vec<u8>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let per_image = kind.channels() * height * width;
        if per_image == 0 || pixels.len() != per_image * labels.len() {
            return Err(Error::format(
                "dataset",
                format!(
                    "{} pixel bytes for {} labels of {}x{}x{}",
                    pixels.len(),
                    labels.len(),
                    kind.channels(),
                    height,
                    width
                ),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= kind.classes()) {
            return Err(Error::format("dataset", format!("label {bad} out of range")));
        }
        Ok(Dataset { kind, height, width, pixels, labels })
    }

    /// Loads the training split of `kind` from `dir`. CIFAR-10 uses
    /// whichever of `data_batch_{1..5}.bin` are present.
    pub fn load(kind: DatasetKind, dir: impl AsRef<Path>) -> Result<Self> {
        let files = kind.files(dir.as_ref());
        match kind {
            DatasetKind::Mnist | DatasetKind::FashionMnist => {
                let images = read_idx_images(&files[0])?;
                let labels = read_idx_labels(&files[1])?;
                if images.count != labels.len() {
                    return Err(Error::format(
                        "dataset",
                        format!("{} images but {} labels", images.count, labels.len()),
                    ));
                }
                Self::from_raw(kind, images.rows, images.cols, images.pixels, labels)
            }
            DatasetKind::Cifar10 => {
                let present: Vec<_> = files.into_iter().filter(|p| p.exists()).collect();
                if present.is_empty() {
                    return Err(Error::Io(std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        format!("no data_batch_*.bin files in {}", dir.as_ref().display()),
                    )));
                }
                let batch = read_cifar10(&present)?;
                debug_assert!(batch.labels.iter().all(|&l| l < CIFAR_CLASSES));
                Self::from_raw(kind, 32, 32, batch.pixels, batch.labels)
            }
        }
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(C, H, W)`.
    pub fn image_shape(&self) -> [usize; 3] {
        [self.kind.channels(), self.height, self.width]
    }

    pub fn classes(&self) -> usize {
        self.kind.classes()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image_bytes(&self, index: usize) -> &[u8] {
        let n = self.image_shape().iter().product::<usize>();
        &self.pixels[index * n..(index + 1) * n]
    }

    /// Keeps only the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        if n < self.len() {
            let per_image = self.image_shape().iter().product::<usize>();
            self.labels.truncate(n);
            self.pixels.truncate(n * per_image);
        }
    }

    /// Normalized images `(B, C, H, W)` and their labels.
    pub fn batch<S: Scalar>(&self, indices: &[usize]) -> Result<(Tensor<S>, Vec<usize>)> {
        let [c, h, w] = self.image_shape();
        let mut data = Vec::with_capacity(indices.len() * c * h * w);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange { index: i, len: self.len() });
            }
            data.extend(self.image_bytes(i).iter().map(|&b| S::of(normalize(b))));
            labels.push(self.labels[i] as usize);
        }
        Ok((Tensor::new(&[indices.len(), c, h, w], data)?, labels))
    }

    /// A seeded visiting order covering every sample once.
    pub fn epoch_order(&self, rng: &mut Rng) -> Vec<usize> {
        rng.permutation(self.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_endpoints_and_inverse() {
        assert_eq!(normalize(0), -1.0);
        assert_eq!(normalize(255), 1.0);
        for b in 0..=255u8 {
            assert_eq!(denormalize(normalize(b)), b);
            assert_eq!(denormalize(normalize(b).clamp(-1.0, 1.0)), b);
        }
        assert_eq!(denormalize(0.0), 128);
        assert_eq!(denormalize(7.0), 255);
    }

    #[test]
    fn batches_are_normalized_with_labels() {
        let ds = Dataset::from_raw(DatasetKind::Mnist, 1, 2, vec![0, 255, 51, 204], vec![4, 9]).unwrap();
        let (x, labels) = ds.batch::<f32>(&[1, 0]).unwrap();
        assert_eq!(x.shape(), &[2, 1, 1, 2]);
        assert_eq!(x.to_vec(), vec![-0.6, 0.6, -1.0, 1.0]);
        assert_eq!(labels, vec![9, 4]);
        assert!(ds.batch::<f32>(&[2]).is_err());
    }

    #[test]
    fn rejects_inconsistent_raw_data() {
        assert!(Dataset::from_raw(DatasetKind::Mnist, 2, 2, vec![0; 7], vec![0, 1]).is_err());
        assert!(Dataset::from_raw(DatasetKind::Mnist, 1, 1, vec![0], vec![10]).is_err());
    }

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let ds = Dataset::from_raw(DatasetKind::Mnist, 1, 1, vec![0; 100], vec![0; 100]).unwrap();
        let a = ds.epoch_order(&mut Rng::seed_from_u64(1));
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_eq!(a, ds.epoch_order(&mut Rng::seed_from_u64(1)));
    }

    #[test]
    fn names_round_trip() {
        for k in DatasetKind::ALL {
            assert_eq!(DatasetKind::from_name(k.name()), Some(k));
        }
        assert_eq!(DatasetKind::from_name("imagenet"), None);
    }
}

//! Image datasets: the CIFAR-10 binary loader, deterministic synthetic
//! pattern sets, per-channel standardization, seeded batching and flips.

pub mod cifar;
pub mod synthetic;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use cifar::load_cifar10;
pub use synthetic::{gen_synthetic, SyntheticSpec};

/// Where a run's images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        classes: usize,
        side: usize,
        noise_sigma: f64,
        samples_per_class: usize,
        seed: u64,
    },
    Cifar10 {
        dir: PathBuf,
    },
}

impl DatasetSpec {
    /// Loads `(train, test)`, both standardized with training-set constants.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSpec::Synthetic {
                classes,
                side,
                noise_sigma,
                samples_per_class,
                seed,
            } => gen_synthetic(&SyntheticSpec {
                classes: *classes,
                side: *side,
                noise_sigma: *noise_sigma,
                samples_per_class: *samples_per_class,
                seed: *seed,
            }),
            DatasetSpec::Cifar10 { dir } => load_cifar10(dir),
        }
    }

    /// Cheap reachability check run before any heavy work.
    pub fn check_available(&self) -> Result<()> {
        match self {
            DatasetSpec::Synthetic { .. } => self.describe().map(|_| ()),
            DatasetSpec::Cifar10 { dir } => {
                for name in cifar::TRAIN_FILES.iter().chain([&cifar::TEST_FILE]) {
                    let path = dir.join(name);
                    if !path.is_file() {
                        return Err(Error::Dataset {
                            path,
                            detail: "missing CIFAR-10 batch file".into(),
                        });
                    }
                }
                Ok(())
            }
        }
    }

    /// `(channels, side, classes, train size)` without loading pixels.
    pub fn describe(&self) -> Result<(usize, usize, usize, usize)> {
        match self {
            DatasetSpec::Synthetic {
                classes,
                side,
                noise_sigma,
                samples_per_class,
                seed,
            } => {
                let spec = SyntheticSpec {
                    classes: *classes,
                    side: *side,
                    noise_sigma: *noise_sigma,
                    samples_per_class: *samples_per_class,
                    seed: *seed,
                };
                spec.validate()?;
                Ok((3, *side, *classes, spec.train_per_class() * classes))
            }
            DatasetSpec::Cifar10 { .. } => Ok((3, 32, 10, 50_000)),
        }
    }
}

/// Pixel storage; bytes are scaled to `[0, 1]` on read.
#[derive(Debug, Clone, PartialEq)]
pub enum Pixels {
    Bytes(Vec<u8>),
    Real(Vec<f32>),
}

impl Pixels {
    fn get(&self, i: usize) -> f64 {
        match self {
            Pixels::Bytes(b) => b[i] as f64 / 255.0,
            Pixels::Real(r) => r[i] as f64,
        }
    }

    fn len(&self) -> usize {
        match self {
            Pixels::Bytes(b) => b.len(),
            Pixels::Real(r) => r.len(),
        }
    }
}

/// Per-channel standardization constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Normalization {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }
}

/// Labeled images in CHW order, one contiguous record per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub channels: usize,
    pub side: usize,
    pub classes: usize,
    pub labels: Vec<u8>,
    pub pixels: Pixels,
    pub norm: Normalization,
}

/// A normalized batch ready for a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        channels: usize,
        side: usize,
        classes: usize,
        labels: Vec<u8>,
        pixels: Pixels,
    ) -> Result<Self> {
        if pixels.len() != labels.len() * channels * side * side {
            return Err(Error::InvalidArgument(format!(
                "{} pixel values for {} images of {channels}x{side}x{side}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Dataset {
            channels,
            side,
            classes,
            labels,
            pixels,
            norm: Normalization::identity(channels),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.side * self.side
    }

    /// Unnormalized pixel value.
    pub fn raw(&self, sample: usize, channel: usize, row: usize, col: usize) -> f64 {
        let plane = self.side * self.side;
        self.pixels
            .get(sample * self.image_len() + channel * plane + row * self.side + col)
    }

    /// Per-channel mean and population standard deviation over all samples.
    pub fn compute_normalization(&self) -> Normalization {
        let plane = self.side * self.side;
        let count = (self.len() * plane) as f64;
        let mut mean = vec![0.0; self.channels];
        let mut sq = vec![0.0; self.channels];
        for s in 0..self.len() {
            let base = s * self.image_len();
            for c in 0..self.channels {
                for i in 0..plane {
                    let v = self.pixels.get(base + c * plane + i);
                    mean[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        let mut std = vec![1.0; self.channels];
        for c in 0..self.channels {
            mean[c] /= count;
            let var = (sq[c] / count - mean[c] * mean[c]).max(0.0);
            if var > 1e-12 {
                std[c] = var.sqrt();
            }
        }
        Normalization { mean, std }
    }

    pub fn with_normalization(mut self, norm: Normalization) -> Self {
        self.norm = norm;
        self
    }

    /// Gathers `indices` into a standardized batch.
    pub fn batch(&self, indices: &[usize]) -> ImageBatch {
        let plane = self.side * self.side;
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &s in indices {
            let base = s * self.image_len();
            for c in 0..self.channels {
                let (m, sd) = (self.norm.mean[c], self.norm.std[c]);
                for i in 0..plane {
                    data.push((self.pixels.get(base + c * plane + i) - m) / sd);
                }
            }
        }
        let images = Tensor::new([indices.len(), self.channels, self.side, self.side], data)
            .expect("batch shape");
        ImageBatch {
            images,
            labels: indices.iter().map(|&i| self.labels[i] as usize).collect(),
        }
    }
}

/// Disjoint index sets for weight training and architecture validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub weight_train: Vec<usize>,
    pub alpha_val: Vec<usize>,
}

/// Samples `val_size` of `n` training indices uniformly without replacement
/// for the validation side; both sides are returned sorted.
pub fn split_dataset(n: usize, val_size: usize, seed: u64) -> Result<Split> {
    if val_size > n {
        return Err(Error::InvalidArgument(format!(
            "val_size {val_size} exceeds training set of {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut alpha_val = idx[..val_size].to_vec();
    let mut weight_train = idx[val_size..].to_vec();
    alpha_val.sort_unstable();
    weight_train.sort_unstable();
    Ok(Split {
        weight_train,
        alpha_val,
    })
}

/// Seeded permutation of `0..n` for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Index batches over `pool` for one epoch; the last batch may be short.
pub fn batch_indices(
    pool: &[usize],
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>> {
    if pool.is_empty() {
        return Err(Error::InvalidArgument("cannot batch an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    let order = epoch_order(pool.len(), seed, epoch);
    Ok(order
        .chunks(batch_size)
        .map(|c| c.iter().map(|&i| pool[i]).collect())
        .collect())
}

pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    batches: std::vec::IntoIter<Vec<usize>>,
}

impl Iterator for BatchIter<'_> {
    type Item = ImageBatch;

    fn next(&mut self) -> Option<ImageBatch> {
        self.batches.next().map(|b| self.dataset.batch(&b))
    }
}

/// Iterates one seeded epoch over the samples listed in `pool`.
pub fn batch_iter<'a>(
    dataset: &'a Dataset,
    pool: &[usize],
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<BatchIter<'a>> {
    Ok(BatchIter {
        dataset,
        batches: batch_indices(pool, batch_size, seed, epoch)?.into_iter(),
    })
}

/// Mirrors each image horizontally with probability `prob`; returns how
/// many were flipped.
pub fn augment_flip<R: Rng + ?Sized>(batch: &mut ImageBatch, rng: &mut R, prob: f64) -> usize {
    let [n, c, h, w] = batch.images.shape();
    let mut flipped = 0;
    for b in 0..n {
        if rng.random::<f64>() >= prob {
            continue;
        }
        flipped += 1;
        flip_image(&mut batch.images.data_mut()[b * c * h * w..(b + 1) * c * h * w], w);
    }
    flipped
}

fn flip_image(image: &mut [f64], width: usize) {
    for row in image.chunks_mut(width) {
        row.reverse();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn split_sizes_and_disjointness() {
        let s = split_dataset(50_000, 5000, 1).unwrap();
        assert_eq!(s.alpha_val.len(), 5000);
        assert_eq!(s.weight_train.len(), 45_000);
        let mut all: Vec<usize> = s.alpha_val.iter().chain(&s.weight_train).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50_000).collect::<Vec<_>>());
    }

    #[test]
    fn split_edge_cases() {
        let s = split_dataset(10, 0, 3).unwrap();
        assert!(s.alpha_val.is_empty());
        assert_eq!(s.weight_train, (0..10).collect::<Vec<_>>());
        assert!(split_dataset(10, 11, 3).is_err());
    }

    #[test]
    fn split_is_seeded() {
        assert_eq!(split_dataset(1000, 100, 7).unwrap(), split_dataset(1000, 100, 7).unwrap());
        assert_ne!(split_dataset(1000, 100, 7).unwrap(), split_dataset(1000, 100, 8).unwrap());
    }

    #[test]
    fn batches_cover_epoch_with_short_tail() {
        let pool: Vec<usize> = (0..10).collect();
        let b = batch_indices(&pool, 4, 0, 0).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert_eq!(b, batch_indices(&pool, 4, 0, 0).unwrap());
        assert_ne!(b, batch_indices(&pool, 4, 0, 1).unwrap());
        assert!(batch_indices(&[], 4, 0, 0).is_err());
    }

    #[test]
    fn emitted_labels_match_dataset_multiset() {
        let (train, _) = gen_synthetic(&SyntheticSpec {
            classes: 4,
            side: 8,
            noise_sigma: 0.1,
            samples_per_class: 10,
            seed: 2,
        })
        .unwrap();
        let pool: Vec<usize> = (0..train.len()).collect();
        let mut seen: Vec<usize> = batch_iter(&train, &pool, 3, 5, 2)
            .unwrap()
            .flat_map(|b| b.labels)
            .collect();
        let mut want: Vec<usize> = train.labels.iter().map(|&l| l as usize).collect();
        seen.sort_unstable();
        want.sort_unstable();
        assert_eq!(seen, want);
    }

    fn sample_batch() -> ImageBatch {
        let data: Vec<f64> = (0..2 * 3 * 4 * 5).map(|v| v as f64).collect();
        ImageBatch {
            images: Tensor::new([2, 3, 4, 5], data).unwrap(),
            labels: vec![1, 0],
        }
    }

    #[test]
    fn flip_identity_and_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let orig = sample_batch();
        let mut b = orig.clone();
        assert_eq!(augment_flip(&mut b, &mut rng, 0.0), 0);
        assert_eq!(b, orig);
        assert_eq!(augment_flip(&mut b, &mut rng, 1.0), 2);
        assert_ne!(b, orig);
        assert_eq!(b.images.at(0, 0, 0, 0), orig.images.at(0, 0, 0, 4));
        assert_eq!(b.labels, orig.labels);
        augment_flip(&mut b, &mut rng, 1.0);
        assert_eq!(b, orig);
    }

    #[test]
    fn flip_rate_is_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10_000usize;
        let mut flips = 0;
        for _ in 0..n {
            let mut b = ImageBatch {
                images: Tensor::zeros([1, 1, 1, 2]),
                labels: vec![0],
            };
            flips += augment_flip(&mut b, &mut rng, 0.5);
        }
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((flips as f64 - n as f64 / 2.0).abs() <= 3.0 * sigma, "{flips}");
    }

    #[test]
    fn descriptor_rejects_unknown_keys() {
        let ok = r#"{"kind":"cifar10","dir":"/tmp/x"}"#;
        assert!(serde_json::from_str::<DatasetSpec>(ok).is_ok());
        let bad = r#"{"kind":"cifar10","dir":"/tmp/x","extra":1}"#;
        assert!(serde_json::from_str::<DatasetSpec>(bad).is_err());
    }

    proptest! {
        #[test]
        fn splits_are_disjoint_and_exhaustive(n in 1usize..300, frac in 0.0f64..1.0, seed: u64) {
            let val = ((n as f64) * frac) as usize;
            let s = split_dataset(n, val, seed).unwrap();
            let mut all: Vec<usize> = s.alpha_val.iter().chain(&s.weight_train).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(s.alpha_val.len(), val);
        }
    }
}

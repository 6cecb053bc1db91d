//! Deterministic pattern-classification sets. Each class is a fixed RGB
//! template; samples add independent Gaussian pixel noise.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{cifar, Dataset, Pixels};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub side: usize,
    pub noise_sigma: f64,
    pub samples_per_class: usize,
    pub seed: u64,
}

pub const CHANNELS: usize = 3;

type Template = fn(usize, usize, usize) -> [f64; 3];

fn gray(v: f64) -> [f64; 3] {
    [v, v, v]
}

fn bit(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

const TEMPLATES: [Template; 12] = [
    |r, _, _| gray(bit((r / 2) % 2 == 0)),
    |_, c, _| gray(bit((c / 2) % 2 == 0)),
    |r, c, _| gray(bit((r / 2 + c / 2) % 2 == 0)),
    |_, _, _| gray(0.75),
    |r, c, _| gray(bit(((r + c) / 2) % 2 == 0)),
    |r, c, s| gray(bit(((r + s - c) / 2) % 2 == 0)),
    |r, c, s| gray(bit(r.min(c).min(s - 1 - r).min(s - 1 - c) >= s / 4)),
    |r, c, s| gray(bit(r.abs_diff(s / 2) <= 1 || c.abs_diff(s / 2) <= 1)),
    |_, c, s| gray(c as f64 / (s - 1) as f64),
    |r, _, s| gray(r as f64 / (s - 1) as f64),
    |_, _, _| [1.0, 0.0, 0.0],
    |_, _, _| [0.0, 0.0, 1.0],
];

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("classes", "must be at least 2"));
        }
        if self.classes > TEMPLATES.len() {
            return Err(Error::config(
                "classes",
                format!(
                    "{} exceeds the {} available pattern templates",
                    self.classes,
                    TEMPLATES.len()
                ),
            ));
        }
        if self.side < 8 {
            return Err(Error::config("side", "must be at least 8"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::config("noise_sigma", "must be finite and non-negative"));
        }
        if self.samples_per_class < 2 {
            return Err(Error::config("samples_per_class", "must be at least 2"));
        }
        Ok(())
    }

    /// Training share of each class; the remaining fifth is test data.
    pub fn train_per_class(&self) -> usize {
        (self.samples_per_class * 4 / 5).clamp(1, self.samples_per_class - 1)
    }
}

/// Noiseless image of `class` in CHW order.
pub fn template(class: usize, side: usize) -> Vec<f64> {
    let f = TEMPLATES[class];
    let plane = side * side;
    let mut out = vec![0.0; CHANNELS * plane];
    for r in 0..side {
        for c in 0..side {
            let rgb = f(r, c, side);
            for (ch, v) in rgb.into_iter().enumerate() {
                out[ch * plane + r * side + c] = v;
            }
        }
    }
    out
}

/// Renders every sample in round-robin class order: sample `i` of every
/// class precedes sample `i + 1` of any class.
fn render(spec: &SyntheticSpec) -> Result<(Vec<u8>, Vec<f32>)> {
    spec.validate()?;
    let templates: Vec<Vec<f64>> = (0..spec.classes).map(|c| template(c, spec.side)).collect();
    let noise = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| Error::config("noise_sigma", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.classes * spec.samples_per_class;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * templates[0].len());
    for _ in 0..spec.samples_per_class {
        for (class, t) in templates.iter().enumerate() {
            labels.push(class as u8);
            pixels.extend(t.iter().map(|&v| (v + noise.sample(&mut rng)) as f32));
        }
    }
    Ok((labels, pixels))
}

/// Generates `(train, test)` with an 80/20 split per class, both
/// standardized with training-set constants.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    let (labels, pixels) = render(spec)?;
    let cut = spec.train_per_class() * spec.classes;
    let img = CHANNELS * spec.side * spec.side;
    let train = Dataset::new(
        CHANNELS,
        spec.side,
        spec.classes,
        labels[..cut].to_vec(),
        Pixels::Real(pixels[..cut * img].to_vec()),
    )?;
    let test = Dataset::new(
        CHANNELS,
        spec.side,
        spec.classes,
        labels[cut..].to_vec(),
        Pixels::Real(pixels[cut * img..].to_vec()),
    )?;
    let norm = train.compute_normalization();
    Ok((
        train.with_normalization(norm.clone()),
        test.with_normalization(norm),
    ))
}

/// Writes a synthetic set in the CIFAR-10 binary layout. The spec must
/// describe exactly 60,000 images of 32×32 in at most 10 classes; pixels
/// are clamped to `[0, 1]` and quantized to bytes.
pub fn dump_cifar_layout(spec: &SyntheticSpec, dir: &Path) -> Result<()> {
    if spec.side != cifar::SIDE || spec.classes > cifar::CLASSES {
        return Err(Error::InvalidArgument(
            "CIFAR layout needs 32x32 images in at most 10 classes".into(),
        ));
    }
    let (labels, pixels) = render(spec)?;
    let bytes: Vec<u8> = pixels
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    cifar::write_layout(dir, &labels, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(classes: usize, sigma: f64) -> SyntheticSpec {
        SyntheticSpec {
            classes,
            side: 8,
            noise_sigma: sigma,
            samples_per_class: 10,
            seed: 4,
        }
    }

    fn image(ds: &Dataset, i: usize) -> Vec<f64> {
        ds.batch(&[i]).images.into_data()
    }

    fn dist2(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    #[test]
    fn noiseless_classes_are_constant_and_distinct() {
        let (train, test) = gen_synthetic(&spec(12, 0.0)).unwrap();
        assert_eq!(train.len(), 8 * 12);
        assert_eq!(test.len(), 2 * 12);
        for i in 0..train.len() {
            let j = i % 12;
            assert_eq!(image(&train, i), image(&train, j));
        }
        for a in 0..12 {
            for b in a + 1..12 {
                assert!(dist2(&image(&train, a), &image(&train, b)) > 0.0, "{a} {b}");
            }
        }
    }

    #[test]
    fn seeded_generation() {
        assert_eq!(gen_synthetic(&spec(4, 0.3)).unwrap(), gen_synthetic(&spec(4, 0.3)).unwrap());
        let mut other = spec(4, 0.3);
        other.seed = 5;
        assert_ne!(gen_synthetic(&spec(4, 0.3)).unwrap().0, gen_synthetic(&other).unwrap().0);
    }

    #[test]
    fn too_many_classes_rejected() {
        assert!(gen_synthetic(&spec(13, 0.0)).is_err());
        assert!(gen_synthetic(&spec(1, 0.0)).is_err());
        let mut small = spec(4, 0.0);
        small.side = 7;
        assert!(gen_synthetic(&small).is_err());
    }

    #[test]
    fn nearest_centroid_is_perfect_without_noise() {
        let (train, test) = gen_synthetic(&spec(12, 0.0)).unwrap();
        let mut centroids = vec![vec![0.0; train.image_len()]; 12];
        let mut counts = [0usize; 12];
        for i in 0..train.len() {
            let l = train.labels[i] as usize;
            counts[l] += 1;
            for (c, v) in centroids[l].iter_mut().zip(image(&train, i)) {
                *c += v;
            }
        }
        for (c, n) in centroids.iter_mut().zip(counts) {
            c.iter_mut().for_each(|v| *v /= n as f64);
        }
        for i in 0..test.len() {
            let x = image(&test, i);
            let best = (0..12)
                .min_by(|&a, &b| dist2(&x, &centroids[a]).total_cmp(&dist2(&x, &centroids[b])))
                .unwrap();
            assert_eq!(best, test.labels[i] as usize);
        }
    }

    #[test]
    fn standardized_training_means_vanish() {
        let (train, _) = gen_synthetic(&spec(4, 0.3)).unwrap();
        let all: Vec<usize> = (0..train.len()).collect();
        let b = train.batch(&all);
        let [n, c, h, w] = b.images.shape();
        for ch in 0..c {
            let mut s = 0.0;
            for i in 0..n {
                for r in 0..h {
                    for col in 0..w {
                        s += b.images.at(i, ch, r, col);
                    }
                }
            }
            assert!((s / (n * h * w) as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn dumped_layout_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            classes: 10,
            side: 32,
            noise_sigma: 0.1,
            samples_per_class: 6000,
            seed: 1,
        };
        dump_cifar_layout(&spec, dir.path()).unwrap();
        let (train, test) = cifar::load_cifar10(dir.path()).unwrap();
        assert_eq!((train.len(), test.len()), (50_000, 10_000));
        assert_eq!(&train.labels[..3], &[0, 1, 2]);
        let mut per_class = [0usize; 10];
        test.labels.iter().for_each(|&l| per_class[l as usize] += 1);
        assert_eq!(per_class, [1000; 10]);
        let norm = &train.norm;
        let b = train.batch(&(0..train.len()).collect::<Vec<_>>());
        let plane = 32 * 32;
        for ch in 0..3 {
            let mut s = 0.0;
            for i in 0..train.len() {
                s += b.images.data()[(i * 3 + ch) * plane..(i * 3 + ch + 1) * plane]
                    .iter()
                    .sum::<f64>();
            }
            assert!((s / (train.len() * plane) as f64).abs() < 1e-6, "{norm:?}");
        }
    }
}

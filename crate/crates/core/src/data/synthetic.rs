//! Seeded stand-in for MNIST: one sparse Gaussian blob per class.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{DataError, Dataset, NUM_CLASSES};
use crate::rng::{rng_from, stream};

/// Fraction of pixels switched on in a class template.
const ACTIVE: f64 = 0.2;
const NOISE: f64 = 0.35;

/// `rows` samples of dimension `dim` with uniformly drawn labels. Each
/// class has a fixed sparse template; a sample is its class
/// template plus Gaussian noise on the template's support and a few stray
/// pixels, clamped to `[0, 1]`.
pub fn synthetic_dataset(rows: usize, dim: usize, seed: u64) -> Result<Dataset, DataError> {
    if rows == 0 || dim == 0 {
        return Err(DataError::Empty);
    }
    let mut rng = rng_from(seed, &[stream::SYNTHETIC]);
    let templates: Vec<Vec<f64>> = (0..NUM_CLASSES)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    if rng.random_bool(ACTIVE) {
                        rng.random_range(0.3..1.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, NOISE).expect("valid sigma");

    let mut images = Vec::with_capacity(rows * dim);
    let mut labels = Vec::with_capacity(rows);
    for _ in 0..rows {
        let label = rng.random_range(0..NUM_CLASSES);
        let t = &templates[label];
        for &base in t {
            let v = if base > 0.0 || rng.random_bool(0.05) {
                base + noise.sample(&mut rng)
            } else {
                0.0
            };
            images.push(v.clamp(0.0, 1.0));
        }
        labels.push(label as u8);
    }
    Dataset::new(images, labels, dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = synthetic_dataset(50, 16, 4).unwrap();
        assert_eq!(a, synthetic_dataset(50, 16, 4).unwrap());
        assert_ne!(a, synthetic_dataset(50, 16, 5).unwrap());
        assert!(a.images().iter().all(|p| (0.0..=1.0).contains(p)));
        assert!(a.labels().iter().all(|&l| l < 10));
    }
}

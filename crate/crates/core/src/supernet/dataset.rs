//! Synthetic low-dimensional classification datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Requested sample counts per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn new(train: usize, val: usize, test: usize) -> Self {
        SplitSizes { train, val, test }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// A borrowed mini-batch.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub inputs: &'a [Vec<f64>],
    pub labels: &'a [usize],
}

impl<'a> Batch<'a> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Reproducible synthetic dataset with disjoint train/val/test splits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MicroDataset {
    pub name: String,
    pub seed: u64,
    pub noise: f64,
    pub num_classes: usize,
    pub input_dim: usize,
    train_inputs: Vec<Vec<f64>>,
    train_labels: Vec<usize>,
    val_inputs: Vec<Vec<f64>>,
    val_labels: Vec<usize>,
    test_inputs: Vec<Vec<f64>>,
    test_labels: Vec<usize>,
}

impl MicroDataset {
    fn split(&self, which: Split) -> (&[Vec<f64>], &[usize]) {
        match which {
            Split::Train => (&self.train_inputs, &self.train_labels),
            Split::Val => (&self.val_inputs, &self.val_labels),
            Split::Test => (&self.test_inputs, &self.test_labels),
        }
    }

    pub fn split_len(&self, which: Split) -> usize {
        self.split(which).0.len()
    }

    /// Sequential mini-batches of size `b` (last one may be short).
    pub fn batches(&self, which: Split, b: usize) -> Vec<Batch<'_>> {
        let (inputs, labels) = self.split(which);
        assert!(b >= 1, "batch size must be >= 1");
        let mut out = Vec::new();
        let mut start = 0;
        while start < inputs.len() {
            let end = (start + b).min(inputs.len());
            out.push(Batch {
                inputs: &inputs[start..end],
                labels: &labels[start..end],
            });
            start = end;
        }
        out
    }

    pub fn rows(&self, which: Split) -> impl Iterator<Item = (&Vec<f64>, usize)> {
        let (inputs, labels) = self.split(which);
        inputs.iter().zip(labels.iter().copied())
    }
}

/// Generative formulas, with labels assigned round-robin so every split
/// is class-balanced when its size divides the class count:
///
/// - `moons`: two interleaved half-circles. Class 0 at
///   `(cos t, sin t)`, class 1 at `(1 - cos t, 0.5 - sin t)` with
///   `t ~ U[0, pi]`, plus `noise * N(0, I)`.
/// - `blobs`: three Gaussian blobs with centers on a circle of radius
///   2.5 at angles `2*pi*c/3`, standard deviation `max(noise, 1e-6)`
///   (the floor keeps rows distinct at zero noise).
/// - `xor-grid`: points `~ U[-1, 1]^2` jittered by `noise * N(0, I)`,
///   labeled by quadrant parity (positive x XOR positive y).
pub fn make_dataset(name: &str, sizes: SplitSizes, noise: f64, seed: u64) -> Result<MicroDataset> {
    if sizes.train < 1 || sizes.val < 1 || sizes.test < 1 {
        return Err(Error::InvalidConfig(
            "every dataset split needs at least one sample".into(),
        ));
    }
    let noise_ok = noise.is_finite() && noise >= 0.0;
    if !noise_ok {
        return Err(Error::InvalidConfig(
            "dataset noise must be finite and >= 0".into(),
        ));
    }
    let num_classes = match name {
        "moons" | "xor-grid" => 2,
        "blobs" => 3,
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown dataset `{other}` (expected moons, blobs, or xor-grid)"
            )))
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gen_split = |count: usize| {
        let mut inputs = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let class = i % num_classes;
            let point = match name {
                "moons" => {
                    let t = rng.gen_range(0.0..std::f64::consts::PI);
                    let (x, y) = if class == 0 {
                        (t.cos(), t.sin())
                    } else {
                        (1.0 - t.cos(), 0.5 - t.sin())
                    };
                    vec![
                        x + noise * rng.sample::<f64, _>(StandardNormal),
                        y + noise * rng.sample::<f64, _>(StandardNormal),
                    ]
                }
                "blobs" => {
                    // The 1e-6 floor keeps rows distinct at zero noise.
                    let s = noise.max(1e-6);
                    let angle = 2.0 * std::f64::consts::PI * class as f64 / num_classes as f64;
                    vec![
                        2.5 * angle.cos() + s * rng.sample::<f64, _>(StandardNormal),
                        2.5 * angle.sin() + s * rng.sample::<f64, _>(StandardNormal),
                    ]
                }
                "xor-grid" => {
                    // Sample away from the axes so labels stay clean,
                    // then jitter.
                    let x: f64 = rng.gen_range(-1.0..1.0);
                    let y: f64 = rng.gen_range(-1.0..1.0);
                    let label = usize::from((x > 0.0) ^ (y > 0.0));
                    let p = vec![
                        x + noise * rng.sample::<f64, _>(StandardNormal),
                        y + noise * rng.sample::<f64, _>(StandardNormal),
                    ];
                    labels.push(label);
                    inputs.push(p);
                    continue;
                }
                _ => unreachable!(),
            };
            inputs.push(point);
            labels.push(class);
        }
        (inputs, labels)
    };
    let (train_inputs, train_labels) = gen_split(sizes.train);
    let (val_inputs, val_labels) = gen_split(sizes.val);
    let (test_inputs, test_labels) = gen_split(sizes.test);
    Ok(MicroDataset {
        name: name.to_string(),
        seed,
        noise,
        num_classes,
        input_dim: 2,
        train_inputs,
        train_labels,
        val_inputs,
        val_labels,
        test_inputs,
        test_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn same_seed_same_dataset() {
        let a = make_dataset("moons", SplitSizes::new(20, 10, 10), 0.1, 7).unwrap();
        let b = make_dataset("moons", SplitSizes::new(20, 10, 10), 0.1, 7).unwrap();
        assert_eq!(a.train_inputs, b.train_inputs);
        assert_eq!(a.val_labels, b.val_labels);
        assert_eq!(a.test_inputs, b.test_inputs);
    }

    #[test]
    fn unknown_name_errors() {
        assert!(make_dataset("spirals", SplitSizes::new(1, 1, 1), 0.0, 0).is_err());
    }

    #[test]
    fn zero_split_errors() {
        assert!(make_dataset("moons", SplitSizes::new(0, 1, 1), 0.0, 0).is_err());
    }

    #[test]
    fn splits_are_disjoint() {
        for (name, noise) in [("xor-grid", 0.05), ("moons", 0.0), ("blobs", 0.0)] {
            let d = make_dataset(name, SplitSizes::new(100, 50, 50), noise, 3).unwrap();
            let key = |row: &Vec<f64>| -> Vec<u64> { row.iter().map(|v| v.to_bits()).collect() };
            let mut seen: HashSet<Vec<u64>> = HashSet::new();
            for split in [Split::Train, Split::Val, Split::Test] {
                for (row, _) in d.rows(split) {
                    assert!(seen.insert(key(row)), "duplicate row in {name}");
                }
            }
        }
    }

    #[test]
    fn labels_in_range_and_balanced() {
        for name in ["moons", "blobs"] {
            let d = make_dataset(name, SplitSizes::new(90, 30, 30), 0.1, 5).unwrap();
            for split in [Split::Train, Split::Val, Split::Test] {
                let mut counts = vec![0usize; d.num_classes];
                for (_, label) in d.rows(split) {
                    assert!(label < d.num_classes);
                    counts[label] += 1;
                }
                let expect = d.split_len(split) / d.num_classes;
                for c in counts {
                    assert_eq!(c, expect);
                }
            }
        }
    }

    #[test]
    fn batching_covers_everything() {
        let d = make_dataset("blobs", SplitSizes::new(25, 9, 9), 0.2, 1).unwrap();
        let batches = d.batches(Split::Train, 8);
        assert_eq!(batches.len(), 4);
        let total: usize = batches.iter().map(|b| b.len()).sum();
        assert_eq!(total, 25);
        assert_eq!(batches.last().unwrap().len(), 1);
    }

    /// Multinomial logistic-regression probe, trained by plain gradient
    /// descent. Used as an independent separability check.
    fn linear_probe_accuracy(d: &MicroDataset) -> f64 {
        let classes = d.num_classes;
        let dim = d.input_dim;
        let mut w = vec![vec![0.0; dim + 1]; classes];
        let lr = 0.5;
        for _ in 0..300 {
            let mut grad = vec![vec![0.0; dim + 1]; classes];
            let n = d.split_len(Split::Train) as f64;
            for (x, y) in d.rows(Split::Train) {
                let logits: Vec<f64> = w
                    .iter()
                    .map(|wc| wc[dim] + wc[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                    .collect();
                let ls = crate::supernet::math::log_softmax(&logits);
                for c in 0..classes {
                    let p = ls[c].exp() - if c == y { 1.0 } else { 0.0 };
                    for j in 0..dim {
                        grad[c][j] += p * x[j] / n;
                    }
                    grad[c][dim] += p / n;
                }
            }
            for c in 0..classes {
                for j in 0..=dim {
                    w[c][j] -= lr * grad[c][j];
                }
            }
        }
        let mut correct = 0usize;
        let mut total = 0usize;
        for (x, y) in d.rows(Split::Test) {
            let logits: Vec<f64> = w
                .iter()
                .map(|wc| wc[dim] + wc[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            if crate::supernet::math::argmax(&logits) == y {
                correct += 1;
            }
            total += 1;
        }
        correct as f64 / total as f64
    }

    #[test]
    fn noiseless_blobs_are_linearly_separable() {
        let d = make_dataset("blobs", SplitSizes::new(60, 30, 30), 0.0, 11).unwrap();
        assert_eq!(linear_probe_accuracy(&d), 1.0);
    }
}

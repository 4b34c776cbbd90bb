//! Datasets, deterministic batching and poisoned-batch construction.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attacks::{fgsm, AttackConfig};
use crate::error::{Error, Result};
use crate::snn::Model;
use crate::tensor::Tensor;

pub const CIFAR10_RECORD: usize = 1 + 3 * 32 * 32;
pub const CIFAR10_CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Synthetic(SyntheticSpec),
    File { path: PathBuf, format: String },
    Derived { from: Box<Provenance>, note: String },
}

/// Inputs `[N, ...sample_shape]` in `[0, 1]` with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(
        inputs: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if inputs.rank() < 2 || inputs.shape()[0] != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for inputs of shape {:?}",
                labels.len(),
                inputs.shape()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        if let Some(i) = inputs.data().iter().position(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Config(format!(
                "input element {i} = {} is outside [0, 1]",
                inputs.data()[i]
            )));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.inputs.gather_outer(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn subset(&self, indices: &[usize], note: &str) -> Dataset {
        let (inputs, labels) = self.batch(indices);
        Dataset {
            inputs,
            labels,
            num_classes: self.num_classes,
            provenance: Provenance::Derived {
                from: Box::new(self.provenance.clone()),
                note: note.to_string(),
            },
        }
    }

    /// First `n` samples (all of them if `n >= len`).
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx, &format!("first {}", idx.len()))
    }

    /// Seeded shuffle, then the first `test_len` samples become the test split.
    pub fn split(&self, test_len: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        if test_len > self.len() {
            return Err(Error::Config(format!(
                "test split of {test_len} from {} samples",
                self.len()
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (test, train) = idx.split_at(test_len);
        Ok((self.subset(train, "train split"), self.subset(test, "test split")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub shape: Vec<usize>,
    pub samples_per_class: usize,
    /// Standard deviation of the isotropic noise.
    pub spread: f64,
    /// Offset of the class means from 0.5 along their ±1 patterns.
    pub separation: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            shape: vec![1, 8, 8],
            samples_per_class: 500,
            spread: 0.15,
            separation: 0.2,
            seed: 0,
        }
    }
}

/// `±1` Walsh pattern `(−1)^popcount(index & j)`.
fn walsh(index: usize, j: usize) -> f64 {
    if (index & j).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

impl SyntheticSpec {
    pub fn dim(&self) -> usize {
        self.shape.iter().product()
    }

    /// Class `c` mean: `0.5 + separation · walsh(c + 1, ·)`. For a power-of-two
    /// `dim` above `num_classes` the patterns are mutually orthogonal.
    pub fn class_mean(&self, c: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|j| 0.5 + self.separation * walsh(c + 1, j))
            .collect()
    }

    pub fn generate(&self) -> Result<Dataset> {
        if !(self.spread > 0.0) {
            return Err(Error::Config(format!("spread must be > 0, got {}", self.spread)));
        }
        let d = self.dim();
        if self.num_classes < 1 || d == 0 {
            return Err(Error::Config("need at least one class and one dimension".into()));
        }
        let means: Vec<Vec<f64>> = (0..self.num_classes).map(|c| self.class_mean(c)).collect();
        for i in 0..means.len() {
            if (0..i).any(|j| means[i] == means[j]) {
                return Err(Error::Config(format!(
                    "{} classes do not get distinct mean patterns in {d} dimensions",
                    self.num_classes
                )));
            }
        }
        let normal = Normal::new(0.0, self.spread).expect("spread checked");
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.num_classes * self.samples_per_class;
        let mut data = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        // Interleave classes so any prefix stays roughly balanced.
        for _ in 0..self.samples_per_class {
            for (c, mean) in means.iter().enumerate() {
                data.extend(mean.iter().map(|m| (m + normal.sample(&mut rng)).clamp(0.0, 1.0)));
                labels.push(c);
            }
        }
        let mut shape = vec![n];
        shape.extend(&self.shape);
        Dataset::new(
            Tensor::from_vec(&shape, data)?,
            labels,
            self.num_classes,
            Provenance::Synthetic(self.clone()),
        )
    }
}

/// Isotropic Gaussian blobs with the default class-mean offset.
pub fn synth_gaussians(
    num_classes: usize,
    shape: &[usize],
    samples_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    SyntheticSpec {
        num_classes,
        shape: shape.to_vec(),
        samples_per_class,
        spread,
        seed,
        ..SyntheticSpec::default()
    }
    .generate()
}

/// Records of one label byte followed by 3072 pixel bytes (channel-major 3×32×32).
pub fn parse_cifar10_binary(bytes: &[u8], provenance: Provenance) -> Result<Dataset> {
    if bytes.len() % CIFAR10_RECORD != 0 || bytes.is_empty() {
        let expected = (bytes.len() / CIFAR10_RECORD + 1) * CIFAR10_RECORD;
        return Err(Error::TruncatedFile {
            expected,
            actual: bytes.len(),
        });
    }
    let n = bytes.len() / CIFAR10_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * (CIFAR10_RECORD - 1));
    for (r, rec) in bytes.chunks_exact(CIFAR10_RECORD).enumerate() {
        if rec[0] as usize >= CIFAR10_CLASSES {
            return Err(Error::BadMagnitude {
                offset: r * CIFAR10_RECORD,
                value: rec[0],
            });
        }
        labels.push(rec[0] as usize);
        data.extend(rec[1..].iter().map(|&p| p as f64 / 255.0));
    }
    Dataset::new(
        Tensor::from_vec(&[n, 3, 32, 32], data)?,
        labels,
        CIFAR10_CLASSES,
        provenance,
    )
}

pub fn load_cifar10_binary(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    parse_cifar10_binary(
        &bytes,
        Provenance::File {
            path: path.to_path_buf(),
            format: "cifar10-binary".into(),
        },
    )
}

/// Seeded per-epoch shuffling into fixed-size batches (the last may be short).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub seed: u64,
}

impl BatchPlan {
    pub fn new(batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(Self { batch_size, seed })
    }

    pub fn num_batches(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    pub fn epoch(&self, n: usize, epoch: u64) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        idx.shuffle(&mut rng);
        idx.chunks(self.batch_size).map(|c| c.to_vec()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoisonMode {
    /// FGSM on every sample.
    Perturb,
    /// Identity; clean data is the poison when the base stream is perturbed.
    CleanPassthrough,
}

pub fn make_poisoned_batch(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    steps: usize,
    cfg: &AttackConfig,
    mode: PoisonMode,
) -> Result<Tensor> {
    match mode {
        PoisonMode::CleanPassthrough => Ok(x.clone()),
        PoisonMode::Perturb => fgsm(model, x, labels, steps, cfg),
    }
}

//! Deterministic synthetic sequence-classification data.
//!
//! Every class owns a mean pattern of shape `[seq_len, token_dim]`: a random
//! direction scaled to norm `cluster_separation · √2`, so two class means sit
//! about `2 · cluster_separation` apart. Samples add i.i.d. Gaussian noise of
//! standard deviation `noise_std` to their class mean. Train and eval samples
//! draw noise from separate random streams.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::models::{load_tensors, save_tensors};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub seq_len: usize,
    pub token_dim: usize,
    pub train_size: usize,
    pub eval_size: usize,
    pub cluster_separation: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            seq_len: 8,
            token_dim: 16,
            train_size: 2048,
            eval_size: 512,
            cluster_separation: 3.0,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_classes", self.num_classes),
            ("seq_len", self.seq_len),
            ("token_dim", self.token_dim),
            ("train_size", self.train_size),
            ("eval_size", self.eval_size),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("data.{name} must be positive")));
            }
        }
        if !(self.cluster_separation >= 0.0) || !(self.noise_std >= 0.0) {
            return Err(Error::Config(
                "data.cluster_separation and data.noise_std must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Samples stored contiguously as `[len, seq_len, token_dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    seq_len: usize,
    token_dim: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>, seq_len: usize, token_dim: usize) -> Result<Self> {
        if inputs.len() != labels.len() * seq_len * token_dim {
            return Err(Error::InvalidArgument(format!(
                "{} input values do not match {} samples of {seq_len}x{token_dim}",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Self {
            inputs,
            labels,
            seq_len,
            token_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn token_dim(&self) -> usize {
        self.token_dim
    }

    fn sample_len(&self) -> usize {
        self.seq_len * self.token_dim
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.inputs[i * n..(i + 1) * n]
    }

    /// Gather samples into a `[indices.len(), seq_len, token_dim]` batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let t = Tensor::new(vec![indices.len(), self.seq_len, self.token_dim], data)
            .expect("batch of a non-empty dataset");
        (t, labels)
    }

    /// Write as a checkpoint with `inputs` and `labels` entries.
    pub fn save(&self, path: &Path) -> Result<()> {
        let inputs = Tensor::new(vec![self.len(), self.seq_len, self.token_dim], self.inputs.clone())?;
        let labels = Tensor::new(vec![self.len()], self.labels.iter().map(|&l| l as f64).collect())?;
        save_tensors(path, &[("inputs".into(), inputs), ("labels".into(), labels)])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let entries = load_tensors(path)?;
        let find = |name: &str| {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Checkpoint(format!("dataset file lacks `{name}`")))
        };
        let inputs = find("inputs")?;
        let &[_, seq_len, token_dim] = inputs.shape() else {
            return Err(Error::Checkpoint("dataset inputs must be rank 3".into()));
        };
        let labels = find("labels")?.data().iter().map(|&l| l as usize).collect();
        Self::new(inputs.data().to_vec(), labels, seq_len, token_dim)
    }
}

fn class_means(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let dim = spec.seq_len * spec.token_dim;
    let radius = spec.cluster_separation * std::f64::consts::SQRT_2;
    (0..spec.num_classes)
        .map(|_| {
            let z: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            z.into_iter().map(|v| v * radius / norm).collect()
        })
        .collect()
}

fn split(spec: &SyntheticSpec, means: &[Vec<f64>], size: usize, stream: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let mut labels: Vec<usize> = (0..size).map(|i| i % spec.num_classes).collect();
    labels.shuffle(&mut rng);
    let mut inputs = Vec::with_capacity(size * means[0].len());
    for &label in &labels {
        for &mu in &means[label] {
            let z: f64 = StandardNormal.sample(&mut rng);
            inputs.push(mu + spec.noise_std * z);
        }
    }
    Dataset {
        inputs,
        labels,
        seq_len: spec.seq_len,
        token_dim: spec.token_dim,
    }
}

/// Generate the `(train, eval)` pair for `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means = class_means(spec, &mut rng);
    Ok((split(spec, &means, spec.train_size, 1), split(spec, &means, spec.eval_size, 2)))
}

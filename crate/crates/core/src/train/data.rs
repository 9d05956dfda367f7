use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-example input layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InputShape {
    /// NHWC image.
    Image { height: usize, width: usize, channels: usize },
    /// `[T, F]` sequence.
    Sequence { steps: usize, features: usize },
}

impl InputShape {
    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Self::Image { height, width, channels } => vec![height, width, channels],
            Self::Sequence { steps, features } => vec![steps, features],
        }
    }

    pub fn numel(&self) -> usize {
        self.dims().iter().product()
    }
}

/// Synthetic Gaussian-cluster classification task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub classes: usize,
    pub train_examples: usize,
    pub eval_examples: usize,
    /// Standard deviation of the per-element noise around a class centre.
    pub noise: f32,
    pub input: InputShape,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.train_examples == 0 || self.eval_examples == 0 || self.input.numel() == 0 {
            return Err(Error::invalid("TaskSpec", format!("{self:?}: need ≥2 classes and non-empty data")));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::invalid("TaskSpec", format!("noise {} must be finite and non-negative", self.noise)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[N, ...input dims]`
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn example_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    /// Rows `indices` stacked in order.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let per: usize = self.example_shape().iter().product();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.inputs.data()[i * per..(i + 1) * per]);
        }
        let mut shape = self.inputs.shape().to_vec();
        shape[0] = indices.len();
        let t = Tensor::new(shape, data).expect("gather shape");
        (t, indices.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Train and eval sets drawn around the same class centres.
pub fn generate_task(task: &TaskSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    task.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per = task.input.numel();
    let centres: Vec<Vec<f32>> = (0..task.classes).map(|_| (0..per).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let draw = |n: usize, rng: &mut ChaCha8Rng| -> Dataset {
        let mut data = Vec::with_capacity(n * per);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let label = rng.random_range(0..task.classes);
            for &c in &centres[label] {
                let z: f32 = StandardNormal.sample(rng);
                data.push(c + task.noise * z);
            }
            labels.push(label);
        }
        let mut shape = vec![n];
        shape.extend(task.input.dims());
        Dataset { inputs: Tensor::new(shape, data).expect("dataset shape"), labels, classes: task.classes }
    };
    let train = draw(task.train_examples, &mut rng);
    let eval = draw(task.eval_examples, &mut rng);
    Ok((train, eval))
}

/// Eval set padded with all-zero examples up to a multiple of the global eval batch.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalDataset {
    pub data: Dataset,
    /// `true` for real examples.
    pub mask: Vec<bool>,
    pub real_count: usize,
    pub cores: usize,
    pub per_core_batch: usize,
}

impl EvalDataset {
    pub fn padded_count(&self) -> usize {
        self.mask.len()
    }
}

pub fn pad_eval_dataset(ds: &Dataset, cores: usize, per_core_batch: usize) -> Result<EvalDataset> {
    if ds.is_empty() {
        return Err(Error::EmptyBatch { op: "pad_eval_dataset" });
    }
    if cores == 0 || per_core_batch == 0 {
        return Err(Error::invalid("pad_eval_dataset", "cores and per-core batch must be positive"));
    }
    let global = cores * per_core_batch;
    let padded = ds.len().div_ceil(global) * global;
    let per: usize = ds.example_shape().iter().product();
    let mut data = ds.inputs.data().to_vec();
    data.resize(padded * per, 0.0);
    let mut shape = ds.inputs.shape().to_vec();
    shape[0] = padded;
    let mut labels = ds.labels.clone();
    labels.resize(padded, 0);
    let mut mask = vec![true; ds.len()];
    mask.resize(padded, false);
    Ok(EvalDataset {
        data: Dataset { inputs: Tensor::new(shape, data)?, labels, classes: ds.classes },
        mask,
        real_count: ds.len(),
        cores,
        per_core_batch,
    })
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Top-1 accuracy counts over per-core logits, skipping masked (padding) rows.
/// Returns `(correct, real)`.
pub fn masked_top1(logits: &[Tensor], labels: &[&[usize]], mask: &[&[bool]]) -> Result<(usize, usize)> {
    if logits.len() != labels.len() || logits.len() != mask.len() {
        return Err(Error::shape("masked_top1", format!("{} logit blocks, {} label blocks, {} masks", logits.len(), labels.len(), mask.len())));
    }
    let (mut correct, mut real) = (0, 0);
    for ((l, y), m) in logits.iter().zip(labels).zip(mask) {
        let (b, c) = l.dims2("masked_top1")?;
        if c == 0 {
            return Err(Error::invalid("masked_top1", "logits have zero classes"));
        }
        if y.len() != b || m.len() != b {
            return Err(Error::shape("masked_top1", format!("{b} rows, {} labels, {} mask bits", y.len(), m.len())));
        }
        for (r, row) in l.data().chunks_exact(c).enumerate() {
            if m[r] {
                real += 1;
                if argmax(row) == y[r] {
                    correct += 1;
                }
            }
        }
    }
    Ok((correct, real))
}

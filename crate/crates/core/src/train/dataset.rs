//! Uniform batch access over the image and tabular domains.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{FeatureMatrix, ImageDatasetHandle};
use crate::error::{Error, Result};
use crate::model::Task;
use crate::tensor::Tensor;

/// Supervision attached to a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Vec<f32>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub targets: Targets,
}

/// Dense feature rows with scalar regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularSet {
    pub features: FeatureMatrix,
    pub targets: Vec<f32>,
}

impl TabularSet {
    pub fn new(features: FeatureMatrix, targets: Vec<f32>) -> Result<Self> {
        if features.rows != targets.len() {
            return Err(Error::Shape {
                expected: format!("{} targets", features.rows),
                got: format!("{}", targets.len()),
            });
        }
        Ok(TabularSet { features, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn target_mean(&self) -> f64 {
        if self.targets.is_empty() {
            return 0.0;
        }
        self.targets.iter().map(|&v| v as f64).sum::<f64>() / self.targets.len() as f64
    }

    fn batch(&self, idx: &[usize]) -> Batch {
        let cols = self.features.cols;
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(self.features.row(i));
        }
        Batch {
            x: Tensor::from_vec(&[idx.len(), cols], data).expect("tabular batch shape"),
            targets: Targets::Values(idx.iter().map(|&i| self.targets[i]).collect()),
        }
    }
}

/// Training and evaluation splits of one domain.
#[derive(Debug, Clone)]
pub enum DatasetHandle {
    Images {
        train: ImageDatasetHandle,
        val: ImageDatasetHandle,
    },
    Tabular {
        train: TabularSet,
        test: TabularSet,
    },
}

impl DatasetHandle {
    pub fn task(&self) -> Task {
        match self {
            DatasetHandle::Images { .. } => Task::Classification,
            DatasetHandle::Tabular { .. } => Task::Regression,
        }
    }

    pub fn train_len(&self) -> usize {
        match self {
            DatasetHandle::Images { train, .. } => train.len(),
            DatasetHandle::Tabular { train, .. } => train.len(),
        }
    }

    pub fn eval_len(&self) -> usize {
        match self {
            DatasetHandle::Images { val, .. } => val.len(),
            DatasetHandle::Tabular { test, .. } => test.len(),
        }
    }

    /// Shuffled training batches for one epoch; a trailing batch of one
    /// sample is dropped.
    pub fn epoch_batches<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Vec<Batch> {
        match self {
            DatasetHandle::Images { train, .. } => train
                .epoch_batches(batch_size, rng)
                .into_iter()
                .map(|b| Batch {
                    x: b.x,
                    targets: Targets::Classes(b.labels),
                })
                .collect(),
            DatasetHandle::Tabular { train, .. } => {
                let mut order: Vec<usize> = (0..train.len()).collect();
                order.shuffle(rng);
                order
                    .chunks(batch_size)
                    .filter(|c| c.len() > 1 || train.len() == 1)
                    .map(|c| train.batch(c))
                    .collect()
            }
        }
    }

    /// Evaluation batches in storage order.
    pub fn eval_batches(&self, batch_size: usize) -> Vec<Batch> {
        match self {
            DatasetHandle::Images { val, .. } => val
                .eval_batches(batch_size)
                .into_iter()
                .map(|b| Batch {
                    x: b.x,
                    targets: Targets::Classes(b.labels),
                })
                .collect(),
            DatasetHandle::Tabular { test, .. } => {
                let order: Vec<usize> = (0..test.len()).collect();
                order.chunks(batch_size).map(|c| test.batch(c)).collect()
            }
        }
    }
}

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Activations exported by one tap: (batch, channels, height, width) for
/// conv nets or (batch, units) for tabular nets. Stored in `f64` because the
/// distillation math is evaluated in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.len() != 2 && shape.len() != 4 {
            return Err(Error::Shape {
                expected: "2 or 4 axes".into(),
                got: format!("{shape:?}"),
            });
        }
        if shape.iter().product::<usize>() != values.len() || shape.contains(&0) {
            return Err(Error::Shape {
                expected: format!("{shape:?}"),
                got: format!("{} values", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("feature map contains non-finite values".into()));
        }
        Ok(FeatureMap { shape, values })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        FeatureMap {
            shape: shape.to_vec(),
            values: vec![0.0; shape.iter().product()],
        }
    }

    /// Widens network activations; finiteness is not checked here.
    pub fn from_tensor(t: &Tensor) -> Self {
        FeatureMap {
            shape: t.shape().to_vec(),
            values: t.data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&self.shape, self.values.iter().map(|&v| v as f32).collect())
            .expect("shape matches values")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    /// True for 4-axis maps.
    pub fn is_spatial(&self) -> bool {
        self.shape.len() == 4
    }

    /// (height, width); (1, 1) for 2-axis maps.
    pub fn spatial(&self) -> (usize, usize) {
        if self.is_spatial() {
            (self.shape[2], self.shape[3])
        } else {
            (1, 1)
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Channels that are not identically zero across the batch.
    pub fn active_channels(&self) -> usize {
        let (b, c) = (self.batch(), self.channels());
        let plane = self.values.len() / (b * c);
        (0..c)
            .filter(|&ch| {
                (0..b).any(|s| {
                    let base = (s * c + ch) * plane;
                    self.values[base..base + plane].iter().any(|&v| v != 0.0)
                })
            })
            .count()
    }
}

/// Ordered taps in forward-pass order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet {
    taps: Vec<(String, FeatureMap)>,
}

impl FeatureSet {
    pub fn new(taps: Vec<(String, FeatureMap)>) -> Self {
        FeatureSet { taps }
    }

    pub fn from_tensors(ids: &[String], tensors: &[Tensor]) -> Self {
        FeatureSet {
            taps: ids
                .iter()
                .cloned()
                .zip(tensors.iter().map(FeatureMap::from_tensor))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn get(&self, i: usize) -> &FeatureMap {
        &self.taps[i].1
    }

    pub fn id(&self, i: usize) -> &str {
        &self.taps[i].0
    }

    pub fn maps(&self) -> impl Iterator<Item = &FeatureMap> {
        self.taps.iter().map(|(_, m)| m)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &FeatureMap)> {
        self.taps.iter().map(|(id, m)| (id.as_str(), m))
    }

    pub fn get_mut(&mut self, i: usize) -> &mut FeatureMap {
        &mut self.taps[i].1
    }
}

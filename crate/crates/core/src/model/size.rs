use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::prune::MaskSet;

use super::Model;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub total_params: usize,
    pub surviving_params: usize,
    pub pruned_params: usize,
    pub reduction_fraction: f64,
}

impl SizeReport {
    pub fn from_counts(total_params: usize, surviving_params: usize) -> Self {
        SizeReport {
            total_params,
            surviving_params,
            pruned_params: total_params - surviving_params,
            reduction_fraction: if total_params == 0 {
                0.0
            } else {
                1.0 - surviving_params as f64 / total_params as f64
            },
        }
    }
}

/// Parameter count after structured pruning. A weight survives only when both
/// its input and output channels survive.
pub fn effective_size(model: &Model, masks: &MaskSet) -> Result<SizeReport> {
    let pm = model.param_masks(masks)?;
    Ok(SizeReport::from_counts(model.num_params(), pm.surviving(model.store())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelSpec};

    #[test]
    fn no_pruning_no_reduction() {
        let m = build_model(&ModelSpec::wide_resnet(10, 1, 10), 0).unwrap();
        let r = effective_size(&m, &MaskSet::for_model(&m)).unwrap();
        assert_eq!(r.surviving_params, r.total_params);
        assert_eq!(r.reduction_fraction, 0.0);
    }

    #[test]
    fn conservation_under_masking() {
        let model = build_model(&ModelSpec::tabular_mlp(3, 1, 10), 0).unwrap();
        let mut masks = MaskSet::for_model(&model);
        for c in 0..128 {
            masks.disable_channel("hidden1", c).unwrap();
        }
        let r = effective_size(&model, &masks).unwrap();
        assert_eq!(r.surviving_params + r.pruned_params, r.total_params);
        // hidden1: 128*10 weights + 128 biases; hidden2 loses 128 input columns
        assert_eq!(r.pruned_params, 128 * 10 + 128 + 128 * 128);
    }
}

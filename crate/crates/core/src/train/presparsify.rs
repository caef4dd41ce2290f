//! Standalone lottery-ticket pre-sparsification of a student.

use crate::error::{Error, Result};
use crate::model::{build_model, Model, ModelSpec};
use crate::prune::{MaskSet, PruneConfig, Strategy};

use super::dataset::DatasetHandle;
use super::engine::{train, EpochRecord, NoopObserver, TrainConfig};

/// A rewound sparse student ready for distillation.
#[derive(Debug, Clone)]
pub struct Presparsified {
    pub model: Model,
    pub masks: MaskSet,
    /// False when saturation stopped pruning short of the target.
    pub reached: bool,
    pub history: Vec<EpochRecord>,
}

/// Iterates train, prune, rewind without distillation until the cumulative
/// sparsity reaches `target_sparsity`. `base` supplies the optimizer
/// settings; its distillation and pruning fields are overridden.
pub fn presparsify_lth(
    spec: &ModelSpec,
    data: &DatasetHandle,
    cfg: &PruneConfig,
    target_sparsity: f64,
    base: &TrainConfig,
    seed: u64,
) -> Result<Presparsified> {
    if !(target_sparsity > 0.0 && target_sparsity < 1.0) {
        return Err(Error::Config(format!("target sparsity must lie in (0, 1), got {target_sparsity}")));
    }
    cfg.validate()?;
    let prune = PruneConfig {
        strategy: Strategy::LthSad,
        ..*cfg
    };
    let max_rounds = (1.0 / cfg.rate).ceil() as usize + 1;
    let mut tc = base.clone();
    tc.beta = 0.0;
    tc.alpha_kd = 0.0;
    tc.prune = Some(prune);
    tc.target_sparsity = Some(target_sparsity);
    tc.stop_at_target = true;
    tc.epochs = prune.every * max_rounds;
    tc.seed = seed;
    let student = build_model(spec, seed)?;
    let (state, _) = train(&tc, None, student, None, data, &mut NoopObserver)?;
    let reached = state.masks.cumulative_sparsity() >= target_sparsity - 1e-12;
    if !reached {
        log::warn!(
            "pre-sparsification saturated at {:.4} before reaching {target_sparsity}",
            state.masks.cumulative_sparsity()
        );
    }
    Ok(Presparsified {
        model: state.student,
        masks: state.masks,
        reached,
        history: state.history,
    })
}

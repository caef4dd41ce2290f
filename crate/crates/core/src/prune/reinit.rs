use crate::error::{Error, Result};
use crate::model::{restore, Model, SnapshotTag, WeightSnapshot};

use super::mask::MaskSet;

fn rewind(model: &mut Model, snap: &WeightSnapshot, masks: &MaskSet, tag: SnapshotTag) -> Result<()> {
    if snap.tag() != tag {
        return Err(Error::Structure(format!("expected a {tag:?} snapshot, got {:?}", snap.tag())));
    }
    let pm = model.param_masks(masks)?;
    restore(model, snap)?;
    pm.apply_values(model.store_mut());
    model.apply_mask(masks)
}

/// Restores surviving weights to the previous round's values and zeroes the
/// masked ones. Callers reset optimizer state afterwards.
pub fn reinit_sp(model: &mut Model, prev: &WeightSnapshot, masks: &MaskSet) -> Result<()> {
    rewind(model, prev, masks, SnapshotTag::PreviousRound)
}

/// Rewinds surviving weights to their initial values and zeroes the masked
/// ones. Callers reset optimizer state afterwards.
pub fn reinit_lth(model: &mut Model, init: &WeightSnapshot, masks: &MaskSet) -> Result<()> {
    rewind(model, init, masks, SnapshotTag::Init)
}

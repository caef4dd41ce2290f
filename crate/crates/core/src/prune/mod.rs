//! Channel ranking, monotone mask extraction, and weight reinitialization.

mod config;
mod extract;
mod mask;
mod reinit;

pub use config::{Criterion, PruneConfig, Scope, Strategy};
pub use extract::{extract_mask, rank_channels, ChannelScores, Extraction};
pub use mask::{LayerBitmap, MaskFile, MaskSet, MASK_FORMAT, MASK_VERSION};
pub use reinit::{reinit_lth, reinit_sp};
pub use crate::train::{presparsify_lth, Presparsified};

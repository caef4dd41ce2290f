//! Attention-weighted feature distillation and the combined student loss.

mod attention;
mod head;
mod objective;
mod pool;
mod projection;
mod resize;

pub use attention::{attention_loss, attention_term, pair_distances, AttentionTerm};
pub use head::{attention_weights, Activation, AttentionHead, AttentionMatrix, DEFAULT_KEY_DIM};
pub use objective::{cross_entropy, mse_loss, soft_target, soft_target_loss, student_loss};
pub use pool::{channel_pool_norm, gap_hw};
pub use projection::ProjectionBank;
pub use resize::BilinearResize;

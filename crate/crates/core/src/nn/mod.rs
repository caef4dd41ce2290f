//! Minimal CPU neural-network primitives with explicit backward passes.

pub mod conv;
pub mod init;
pub mod linear;
pub mod norm;
pub mod ops;
pub mod param;

pub use conv::ConvGeom;
pub use param::{Buffer, BufferId, Param, ParamId, ParamStore};

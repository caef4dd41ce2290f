//! Iterative pruning with attention-guided distillation.

mod dataset;
mod engine;
mod optim;
mod presparsify;
mod schedule;
mod ticket;

pub use dataset::{Batch, DatasetHandle, TabularSet, Targets};
pub use engine::{
    evaluate, rewind_spikes, train, EpochRecord, EvalMetrics, NoopObserver, PlateauBest, PruneEvent, TrainConfig,
    TrainObserver, TrainState,
};
pub use optim::Sgd;
pub use presparsify::{presparsify_lth, Presparsified};
pub use schedule::{lr_schedule, LrSchedule};
pub use ticket::{plateau_checkpoint_name, select_winning_ticket, WinningTicket};

#[cfg(test)]
mod tests;

//! Winning-ticket selection over sparsity plateaus.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Task;

use super::engine::EpochRecord;

/// The chosen sparse student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinningTicket {
    pub round: usize,
    pub sparsity: f64,
    pub metric: f64,
    pub epoch: usize,
    pub checkpoint_ref: String,
}

/// Checkpoint name holding the best student of a plateau.
pub fn plateau_checkpoint_name(round: usize) -> String {
    format!("best-round-{round}.ckpt")
}

/// Picks the plateau whose best evaluation is maximal (accuracy) or minimal
/// (MSE). Ties go to the higher sparsity. The dense plateau competes only
/// when no pruned plateau was evaluated.
pub fn select_winning_ticket(history: &[EpochRecord], task: Task) -> Result<WinningTicket> {
    if history.is_empty() {
        return Err(Error::Empty("no completed epochs to select a ticket from".into()));
    }
    let better = |a: f64, b: f64| match task {
        Task::Classification => a > b,
        Task::Regression => a < b,
    };
    let mut plateaus: Vec<&EpochRecord> = Vec::new();
    for r in history {
        match plateaus.iter_mut().find(|p| p.round == r.round) {
            Some(p) if better(r.metric(), p.metric()) => *p = r,
            Some(_) => {}
            None => plateaus.push(r),
        }
    }
    if plateaus.iter().any(|p| p.sparsity > 0.0) {
        plateaus.retain(|p| p.sparsity > 0.0);
    }
    let best = plateaus
        .into_iter()
        .reduce(|a, b| {
            if better(b.metric(), a.metric()) || (b.metric() == a.metric() && b.sparsity > a.sparsity) {
                b
            } else {
                a
            }
        })
        .expect("non-empty history");
    Ok(WinningTicket {
        round: best.round,
        sparsity: best.sparsity,
        metric: best.metric(),
        epoch: best.epoch,
        checkpoint_ref: plateau_checkpoint_name(best.round),
    })
}

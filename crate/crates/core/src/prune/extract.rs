use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::Model;

use super::config::{removal_count, PruneConfig, Scope};
use super::mask::MaskSet;

/// Channel scores per prunable layer. Pruned channels score `-inf`.
pub type ChannelScores = BTreeMap<String, Vec<f64>>;

/// Filter L1 norm of every surviving output channel.
pub fn rank_channels(model: &Model, masks: &MaskSet) -> Result<ChannelScores> {
    let mut out = ChannelScores::new();
    for layer in model.prunable_layers() {
        let alive = masks
            .get(&layer.id)
            .ok_or_else(|| Error::Structure(format!("mask set lacks layer {}", layer.id)))?;
        if alive.len() != layer.channels {
            return Err(Error::Structure(format!(
                "mask for {} has {} channels, layer has {}",
                layer.id,
                alive.len(),
                layer.channels
            )));
        }
        let w = model.store().value(layer.weight);
        let per = w.len() / layer.channels;
        let scores = w
            .chunks(per)
            .zip(alive)
            .map(|(f, &a)| {
                if a {
                    f.iter().map(|v| v.abs() as f64).sum()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        out.insert(layer.id, scores);
    }
    if out.len() != masks.len() {
        return Err(Error::Structure("mask set has layers the model lacks".into()));
    }
    Ok(out)
}

/// Result of one pruning round.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub masks: MaskSet,
    pub removed: usize,
    /// Layers whose requested removal was capped to keep one channel.
    pub saturated: Vec<String>,
}

impl Extraction {
    pub fn is_saturated(&self) -> bool {
        !self.saturated.is_empty()
    }
}

fn lowest(scores: &[f64], alive: &[bool]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| alive[i]).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    idx
}

/// Removes the lowest-scoring surviving channels. Ties prune the lower index
/// first; no layer drops below one channel.
pub fn extract_mask(scores: &ChannelScores, masks: &MaskSet, cfg: &PruneConfig) -> Result<Extraction> {
    cfg.validate()?;
    for (id, m) in masks.layers() {
        match scores.get(id) {
            Some(s) if s.len() == m.len() => {}
            _ => return Err(Error::Structure(format!("scores do not cover layer {id}"))),
        }
    }
    let mut next = masks.raw().clone();
    let mut removed = 0;
    let mut saturated = Vec::new();
    match cfg.scope {
        Scope::PerLayer => {
            for (id, alive) in next.iter_mut() {
                let want = removal_count(cfg.rate, alive.len());
                let survivors = alive.iter().filter(|&&b| b).count();
                let take = want.min(survivors.saturating_sub(1));
                if take < want {
                    saturated.push(id.clone());
                }
                for i in lowest(&scores[id], alive).into_iter().take(take) {
                    alive[i] = false;
                }
                removed += take;
            }
        }
        Scope::Global => {
            let want = removal_count(cfg.rate, masks.total_channels());
            let mut pool: Vec<(f64, &str, usize)> = next
                .iter()
                .flat_map(|(id, alive)| {
                    let s = &scores[id];
                    (0..alive.len()).filter(|&i| alive[i]).map(move |i| (s[i], id.as_str(), i))
                })
                .collect();
            pool.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)).then(a.2.cmp(&b.2)));
            let mut left: BTreeMap<String, usize> =
                next.iter().map(|(id, a)| (id.clone(), a.iter().filter(|&&b| b).count())).collect();
            let mut chosen = Vec::new();
            for (_, id, i) in pool {
                if chosen.len() == want {
                    break;
                }
                let n = left.get_mut(id).expect("layer present");
                if *n > 1 {
                    *n -= 1;
                    chosen.push((id.to_string(), i));
                }
            }
            if chosen.len() < want {
                saturated.extend(left.iter().filter(|(_, &n)| n == 1).map(|(id, _)| id.clone()));
            }
            removed = chosen.len();
            for (id, i) in chosen {
                next.get_mut(&id).expect("layer present")[i] = false;
            }
        }
    }
    if !saturated.is_empty() {
        log::warn!("pruning saturated in {} layer(s); kept one channel each", saturated.len());
    }
    Ok(Extraction {
        masks: masks.next_round(next),
        removed,
        saturated,
    })
}

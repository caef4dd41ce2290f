use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnapshotTag {
    Init,
    PreviousRound,
}

/// Immutable deep copy of a model's parameters and running buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSnapshot {
    tag: SnapshotTag,
    params: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
    buffers: BTreeMap<String, Vec<f32>>,
}

impl WeightSnapshot {
    pub fn tag(&self) -> SnapshotTag {
        self.tag
    }

    pub fn param(&self, name: &str) -> Option<&[f32]> {
        self.params.get(name).map(|(_, v)| v.as_slice())
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Number of parameter scalars held (buffers excluded).
    pub fn num_params(&self) -> usize {
        self.params.values().map(|(_, v)| v.len()).sum()
    }
}

pub fn snapshot(model: &Model, tag: SnapshotTag) -> WeightSnapshot {
    WeightSnapshot {
        tag,
        params: model
            .store()
            .params()
            .iter()
            .map(|p| (p.name.clone(), (p.shape.clone(), p.value.clone())))
            .collect(),
        buffers: model
            .store()
            .buffers()
            .iter()
            .map(|b| (b.name.clone(), b.value.clone()))
            .collect(),
    }
}

/// Copies every parameter and buffer of `snap` into `model`.
pub fn restore(model: &mut Model, snap: &WeightSnapshot) -> Result<()> {
    let store = model.store();
    if store.params().len() != snap.params.len() || store.buffers().len() != snap.buffers.len() {
        return Err(Error::Structure(format!(
            "snapshot holds {} params / {} buffers, model has {} / {}",
            snap.params.len(),
            snap.buffers.len(),
            store.params().len(),
            store.buffers().len()
        )));
    }
    for p in store.params() {
        match snap.params.get(&p.name) {
            Some((shape, _)) if *shape == p.shape => {}
            Some((shape, _)) => {
                return Err(Error::Structure(format!(
                    "snapshot shape {shape:?} for {} does not match model {:?}",
                    p.name, p.shape
                )))
            }
            None => return Err(Error::Structure(format!("snapshot lacks parameter {}", p.name))),
        }
    }
    for b in store.buffers() {
        if snap.buffers.get(&b.name).map(Vec::len) != Some(b.value.len()) {
            return Err(Error::Structure(format!("snapshot lacks buffer {}", b.name)));
        }
    }
    let store = model.store_mut();
    for p in store.params_mut() {
        p.value.copy_from_slice(&snap.params[&p.name].1);
    }
    for b in store.buffers_mut() {
        b.value.copy_from_slice(&snap.buffers[&b.name]);
    }
    Ok(())
}

//! Channel masks: the structured-sparsity state of a student.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, PrunableLayer};

/// Per-layer boolean masks over output channels (`true` = surviving).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSet {
    masks: BTreeMap<String, Vec<bool>>,
    round: usize,
    cumulative_sparsity: f64,
}

impl MaskSet {
    /// All-ones masks over the given layers, round 0.
    pub fn full(layers: &[PrunableLayer]) -> Self {
        let masks = layers
            .iter()
            .map(|l| (l.id.clone(), vec![true; l.channels]))
            .collect();
        MaskSet {
            masks,
            round: 0,
            cumulative_sparsity: 0.0,
        }
    }

    pub fn for_model(model: &Model) -> Self {
        Self::full(&model.prunable_layers())
    }

    pub fn from_parts(masks: BTreeMap<String, Vec<bool>>, round: usize) -> Self {
        let mut m = MaskSet {
            masks,
            round,
            cumulative_sparsity: 0.0,
        };
        m.cumulative_sparsity = m.recompute_sparsity();
        m
    }

    pub fn get(&self, layer: &str) -> Option<&[bool]> {
        self.masks.get(layer).map(Vec::as_slice)
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &[bool])> {
        self.masks.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn cumulative_sparsity(&self) -> f64 {
        self.cumulative_sparsity
    }

    pub fn surviving(&self, layer: &str) -> Option<usize> {
        self.get(layer).map(|m| m.iter().filter(|&&b| b).count())
    }

    pub fn total_channels(&self) -> usize {
        self.masks.values().map(Vec::len).sum()
    }

    pub fn total_surviving(&self) -> usize {
        self.masks.values().map(|m| m.iter().filter(|&&b| b).count()).sum()
    }

    /// `1 - surviving / original`, aggregated over all layers.
    pub fn recompute_sparsity(&self) -> f64 {
        let total = self.total_channels();
        if total == 0 {
            return 0.0;
        }
        1.0 - self.total_surviving() as f64 / total as f64
    }

    /// True when every channel alive in `self` is also alive in `earlier`.
    pub fn is_subset_of(&self, earlier: &MaskSet) -> bool {
        self.masks.len() == earlier.masks.len()
            && self.masks.iter().all(|(id, m)| {
                earlier.masks.get(id).is_some_and(|e| {
                    e.len() == m.len() && m.iter().zip(e).all(|(now, before)| !*now || *before)
                })
            })
    }

    /// Turns off one channel by hand.
    pub fn disable_channel(&mut self, layer: &str, channel: usize) -> Result<()> {
        let m = self
            .masks
            .get_mut(layer)
            .ok_or_else(|| Error::Structure(format!("unknown prunable layer {layer}")))?;
        let slot = m
            .get_mut(channel)
            .ok_or_else(|| Error::Structure(format!("{layer} has no channel {channel}")))?;
        *slot = false;
        self.cumulative_sparsity = self.recompute_sparsity();
        Ok(())
    }

    pub(crate) fn next_round(&self, masks: BTreeMap<String, Vec<bool>>) -> MaskSet {
        MaskSet::from_parts(masks, self.round + 1)
    }

    pub(crate) fn raw(&self) -> &BTreeMap<String, Vec<bool>> {
        &self.masks
    }

    pub fn to_file(&self) -> MaskFile {
        MaskFile {
            format: MASK_FORMAT.to_string(),
            version: MASK_VERSION,
            round: self.round,
            cumulative_sparsity: self.cumulative_sparsity,
            layers: self
                .masks
                .iter()
                .map(|(id, m)| LayerBitmap {
                    id: id.clone(),
                    channels: m.len(),
                    bitmap: m.iter().map(|&b| if b { '1' } else { '0' }).collect(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: &MaskFile) -> Result<Self> {
        if file.format != MASK_FORMAT || file.version != MASK_VERSION {
            return Err(Error::Structure(format!(
                "unsupported mask file {} v{}",
                file.format, file.version
            )));
        }
        let mut masks = BTreeMap::new();
        for l in &file.layers {
            let bits: Vec<bool> = l
                .bitmap
                .chars()
                .map(|c| match c {
                    '1' => Ok(true),
                    '0' => Ok(false),
                    other => Err(Error::Structure(format!("bad bitmap character {other:?}"))),
                })
                .collect::<Result<_>>()?;
            if bits.len() != l.channels {
                return Err(Error::Structure(format!(
                    "layer {}: bitmap has {} bits, expected {}",
                    l.id,
                    bits.len(),
                    l.channels
                )));
            }
            masks.insert(l.id.clone(), bits);
        }
        Ok(MaskSet::from_parts(masks, file.round))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(&self.to_file())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: MaskFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        Self::from_file(&file)
    }
}

pub const MASK_FORMAT: &str = "kdprune-mask";
pub const MASK_VERSION: u32 = 1;

/// Standalone mask file: one `'1'`/`'0'` bitmap per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskFile {
    pub format: String,
    pub version: u32,
    pub round: usize,
    pub cumulative_sparsity: f64,
    pub layers: Vec<LayerBitmap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerBitmap {
    pub id: String,
    pub channels: usize,
    pub bitmap: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> MaskSet {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), vec![true, false, true, true]);
        m.insert("b".to_string(), vec![false, true]);
        MaskSet::from_parts(m, 2)
    }

    #[test]
    fn sparsity_aggregates_over_layers() {
        let m = toy();
        assert_eq!(m.total_channels(), 6);
        assert_eq!(m.total_surviving(), 4);
        assert!((m.cumulative_sparsity() - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn file_round_trip() {
        let m = toy();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mask.json");
        m.save(&p).unwrap();
        let back = MaskSet::load(&p).unwrap();
        assert_eq!(back, m);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"bitmap\": \"1011\""));
    }

    #[test]
    fn subset_relation() {
        let m = toy();
        let mut later = m.clone();
        later.disable_channel("a", 0).unwrap();
        assert!(later.is_subset_of(&m));
        assert!(!m.is_subset_of(&later));
        assert!(later.disable_channel("zzz", 0).is_err());
    }
}

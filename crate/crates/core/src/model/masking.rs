//! Expands channel masks into per-parameter element masks.
//!
//! Channel liveness is propagated through the network: a weight survives only
//! when both the channel it reads and the channel it writes survive. Residual
//! streams with identity shortcuts stay alive while any contributor is alive.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore};
use crate::prune::MaskSet;

use super::wrn::{BnLayer, ConvLayer};
use super::Model;

/// Element masks indexed by parameter; `None` means fully alive.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMasks {
    masks: Vec<Option<Vec<bool>>>,
}

impl ParamMasks {
    pub fn get(&self, id: ParamId) -> Option<&[bool]> {
        self.masks.get(id.0).and_then(|m| m.as_deref())
    }

    /// Mask of parameter `index` in store order.
    pub fn by_index(&self, index: usize) -> Option<&[bool]> {
        self.masks.get(index).and_then(|m| m.as_deref())
    }

    pub fn apply_values(&self, store: &mut ParamStore) {
        for (p, m) in store.params_mut().iter_mut().zip(&self.masks) {
            if let Some(m) = m {
                for (v, &keep) in p.value.iter_mut().zip(m) {
                    if !keep {
                        *v = 0.0;
                    }
                }
            }
        }
    }

    pub fn apply_grads(&self, store: &mut ParamStore) {
        for (p, m) in store.params_mut().iter_mut().zip(&self.masks) {
            if let Some(m) = m {
                for (g, &keep) in p.grad.iter_mut().zip(m) {
                    if !keep {
                        *g = 0.0;
                    }
                }
            }
        }
    }

    /// Zeroes masked entries of an arbitrary per-parameter buffer set.
    pub fn apply_to(&self, index: usize, values: &mut [f32]) {
        if let Some(Some(m)) = self.masks.get(index) {
            for (v, &keep) in values.iter_mut().zip(m) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
    }

    pub fn surviving(&self, store: &ParamStore) -> usize {
        store
            .params()
            .iter()
            .zip(&self.masks)
            .map(|(p, m)| m.as_ref().map_or(p.len(), |m| m.iter().filter(|&&b| b).count()))
            .sum()
    }

    pub fn masked_count(&self) -> usize {
        self.masks
            .iter()
            .flatten()
            .map(|m| m.iter().filter(|&&b| !b).count())
            .sum()
    }
}

struct Builder {
    masks: Vec<Option<Vec<bool>>>,
}

impl Builder {
    fn channel_vector(&mut self, id: ParamId, alive: &[bool]) {
        if alive.iter().all(|&b| b) {
            return;
        }
        self.masks[id.0] = Some(alive.to_vec());
    }

    /// Weight laid out (out, in, k...) with `per` elements per (out, in) pair.
    fn matrix(&mut self, id: ParamId, out_alive: &[bool], in_alive: &[bool], per: usize) {
        if out_alive.iter().all(|&b| b) && in_alive.iter().all(|&b| b) {
            return;
        }
        let mut m = Vec::with_capacity(out_alive.len() * in_alive.len() * per);
        for &o in out_alive {
            for &i in in_alive {
                m.extend(std::iter::repeat_n(o && i, per));
            }
        }
        self.masks[id.0] = Some(m);
    }

    fn bn(&mut self, bn: &BnLayer, alive: &[bool]) {
        self.channel_vector(bn.gamma, alive);
        self.channel_vector(bn.beta, alive);
    }

    fn conv(&mut self, conv: &ConvLayer, out_alive: &[bool], in_alive: &[bool]) {
        let per = conv.geom.kernel * conv.geom.kernel;
        self.matrix(conv.weight, out_alive, in_alive, per);
    }
}

fn layer_mask<'a>(masks: &'a MaskSet, id: &str, channels: usize) -> Result<&'a [bool]> {
    let m = masks
        .get(id)
        .ok_or_else(|| Error::Structure(format!("mask set has no entry for layer {id}")))?;
    if m.len() != channels {
        return Err(Error::Structure(format!(
            "mask for {id} has {} channels, layer has {channels}",
            m.len()
        )));
    }
    Ok(m)
}

pub(super) fn compute(model: &Model, masks: &MaskSet) -> Result<ParamMasks> {
    let layers = model.prunable_layers();
    let expected: BTreeSet<&str> = layers.iter().map(|l| l.id.as_str()).collect();
    let given: BTreeSet<&str> = masks.layers().map(|(id, _)| id).collect();
    if expected != given {
        let extra: Vec<_> = given.difference(&expected).collect();
        let missing: Vec<_> = expected.difference(&given).collect();
        return Err(Error::Structure(format!(
            "mask layers do not match model: unknown {extra:?}, missing {missing:?}"
        )));
    }
    let mut b = Builder {
        masks: vec![None; model.store().params().len()],
    };
    if let Some(w) = model.wrn() {
        let mut stream = vec![true; w.stem.geom.c_out];
        for block in w.groups.iter().flatten() {
            let m1 = layer_mask(masks, &format!("{}.conv1", block.id), block.conv1.geom.c_out)?;
            let m2 = layer_mask(masks, &format!("{}.conv2", block.id), block.conv2.geom.c_out)?;
            b.bn(&block.bn1, &stream);
            b.conv(&block.conv1, m1, &stream);
            b.bn(&block.bn2, m1);
            b.conv(&block.conv2, m2, m1);
            stream = match &block.shortcut {
                Some(sc) => {
                    b.conv(sc, m2, &stream);
                    m2.to_vec()
                }
                None => stream.iter().zip(m2).map(|(s, m)| *s || *m).collect(),
            };
        }
        b.bn(&w.bn_final, &stream);
        b.matrix(w.fc_weight, &vec![true; w.num_outputs], &stream, 1);
    } else if let Some(mlp) = model.mlp() {
        let mut prev = vec![true; model.spec().input_dim];
        for d in &mlp.hidden {
            let m = layer_mask(masks, &d.id, d.out_dim)?;
            b.matrix(d.weight, m, &prev, 1);
            b.channel_vector(d.bias, m);
            prev = m.to_vec();
        }
        b.matrix(mlp.out.weight, &vec![true; mlp.out.out_dim], &prev, 1);
    }
    Ok(ParamMasks { masks: b.masks })
}

#[cfg(test)]
mod tests {
    use crate::model::{build_model, ModelSpec};
    use crate::prune::MaskSet;
    use crate::tensor::Tensor;

    #[test]
    fn half_masked_dense_layer_keeps_half() {
        let mut b = super::Builder { masks: vec![None] };
        let out: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        b.matrix(crate::nn::ParamId(0), &out, &[true; 10], 1);
        let m = b.masks[0].as_ref().unwrap();
        assert_eq!(m.len(), 100);
        assert_eq!(m.iter().filter(|&&k| k).count(), 50);
    }

    #[test]
    fn all_ones_mask_is_identity() {
        let mut m = build_model(&ModelSpec::wide_resnet(10, 1, 10), 4).unwrap();
        let before = m.fingerprint();
        let masks = MaskSet::for_model(&m);
        m.apply_mask(&masks).unwrap();
        assert_eq!(m.fingerprint(), before);
        assert_eq!(m.active_mask().unwrap().masked_count(), 0);
    }

    #[test]
    fn masked_channel_output_is_zero() {
        let mut m = build_model(&ModelSpec::wide_resnet(10, 1, 10), 4).unwrap();
        let mut masks = MaskSet::for_model(&m);
        masks.disable_channel("group2.block0.conv2", 3).unwrap();
        m.apply_mask(&masks).unwrap();
        let x = Tensor::from_vec(&[2, 3, 8, 8], (0..384).map(|i| (i as f32 * 0.1).cos()).collect()).unwrap();
        let (_, feats) = m.forward_with_features(&x).unwrap();
        let g2 = feats.get(1);
        let plane = 4 * 4;
        for s in 0..2 {
            let base = (s * 32 + 3) * plane;
            assert!(g2.values()[base..base + plane].iter().all(|&v| v == 0.0));
        }
        assert_eq!(g2.active_channels(), 31);
    }

    #[test]
    fn mismatched_mask_is_structural_error() {
        let m = build_model(&ModelSpec::wide_resnet(10, 1, 10), 4).unwrap();
        let other = build_model(&ModelSpec::tabular_mlp(3, 1, 4), 4).unwrap();
        assert!(m.param_masks(&MaskSet::for_model(&other)).is_err());
    }
}

//! Teacher and student network families with named feature taps.

mod feature;
mod masking;
mod mlp;
mod size;
mod snapshot;
mod spec;
mod wrn;

use std::hash::{Hash, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use feature::{FeatureMap, FeatureSet};
pub use masking::ParamMasks;
pub use size::{effective_size, SizeReport};
pub use snapshot::{restore, snapshot, SnapshotTag, WeightSnapshot};
pub use spec::{Family, ModelSpec, Task, MLP_BASE_WIDTH, WRN_BASE_WIDTHS, WRN_STEM_CHANNELS};

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore};
use crate::prune::MaskSet;
use crate::tensor::Tensor;
use mlp::{Mlp, MlpCache};
use wrn::{Wrn, WrnCache, WRN_TAP_IDS};

#[derive(Debug, Clone)]
enum Arch {
    Wrn(Wrn),
    Mlp(Mlp),
}

/// A layer whose output channels can be masked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrunableLayer {
    pub id: String,
    pub channels: usize,
    pub(crate) weight: ParamId,
}

/// Activations saved by [`Model::forward_train`] for the backward pass.
pub struct ForwardCache(CacheInner);

enum CacheInner {
    Wrn(WrnCache),
    Mlp(MlpCache),
}

/// A constructed network: spec, parameters, and the active channel mask.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    seed: u64,
    store: ParamStore,
    arch: Arch,
    active_mask: Option<ParamMasks>,
}

/// Builds a model with parameters drawn deterministically from `seed`.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<Model> {
    Model::build(spec, seed)
}

impl Model {
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let arch = match spec.family {
            Family::WideResnet => Arch::Wrn(Wrn::build(spec, &mut store, &mut rng)),
            Family::TabularMlp => Arch::Mlp(Mlp::build(spec, &mut store, &mut rng)),
        };
        Ok(Model {
            spec: spec.clone(),
            seed,
            store,
            arch,
            active_mask: None,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    /// Tap identifiers in forward order.
    pub fn tap_ids(&self) -> Vec<String> {
        match &self.arch {
            Arch::Wrn(_) => WRN_TAP_IDS.iter().map(|s| s.to_string()).collect(),
            Arch::Mlp(m) => m.hidden.iter().map(|d| d.id.clone()).collect(),
        }
    }

    /// Unmasked channel (or unit) count of each tap.
    pub fn tap_channels(&self) -> Vec<usize> {
        match &self.arch {
            Arch::Wrn(w) => {
                let mut c: Vec<usize> = w
                    .groups
                    .iter()
                    .map(|g| g.last().map_or(0, |b| b.conv2.geom.c_out))
                    .collect();
                c.push(w.final_channels());
                c
            }
            Arch::Mlp(m) => m.hidden.iter().map(|d| d.out_dim).collect(),
        }
    }

    pub fn prunable_layers(&self) -> Vec<PrunableLayer> {
        match &self.arch {
            Arch::Wrn(w) => w
                .groups
                .iter()
                .flatten()
                .flat_map(|b| {
                    [
                        PrunableLayer {
                            id: format!("{}.conv1", b.id),
                            channels: b.conv1.geom.c_out,
                            weight: b.conv1.weight,
                        },
                        PrunableLayer {
                            id: format!("{}.conv2", b.id),
                            channels: b.conv2.geom.c_out,
                            weight: b.conv2.weight,
                        },
                    ]
                })
                .collect(),
            Arch::Mlp(m) => m
                .hidden
                .iter()
                .map(|d| PrunableLayer {
                    id: d.id.clone(),
                    channels: d.out_dim,
                    weight: d.weight,
                })
                .collect(),
        }
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let ok = match self.spec.family {
            Family::WideResnet => x.ndim() == 4 && x.dim(1) == self.spec.input_dim && x.dim(2) >= 4 && x.dim(3) >= 4,
            Family::TabularMlp => x.ndim() == 2 && x.dim(1) == self.spec.input_dim,
        } && x.dim(0) > 0;
        if ok {
            Ok(())
        } else {
            let expected = match self.spec.family {
                Family::WideResnet => format!("(batch, {}, H>=4, W>=4)", self.spec.input_dim),
                Family::TabularMlp => format!("(batch, {})", self.spec.input_dim),
            };
            Err(Error::Shape {
                expected,
                got: format!("{:?}", x.shape()),
            })
        }
    }

    /// Inference-mode forward pass returning outputs and every tap.
    pub fn forward_with_features(&self, x: &Tensor) -> Result<(Tensor, FeatureSet)> {
        self.check_input(x)?;
        let (out, taps) = match &self.arch {
            Arch::Wrn(w) => {
                let (o, t, _) = w.forward(&self.store, x, false);
                (o, t)
            }
            Arch::Mlp(m) => {
                let (o, t, _) = m.forward(&self.store, x, false);
                (o, t)
            }
        };
        Ok((out, FeatureSet::from_tensors(&self.tap_ids(), &taps)))
    }

    /// Inference-mode outputs only.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        Ok(match &self.arch {
            Arch::Wrn(w) => w.forward(&self.store, x, false).0,
            Arch::Mlp(m) => m.forward(&self.store, x, false).0,
        })
    }

    /// Training-mode forward pass. Updates batch-norm running statistics and
    /// returns raw tap activations plus the cache for [`Model::backward`].
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>, ForwardCache)> {
        self.check_input(x)?;
        match &self.arch {
            Arch::Wrn(w) => {
                let (o, t, c) = w.forward(&self.store, x, true);
                let c = c.expect("train mode yields a cache");
                w.commit_running_stats(&mut self.store, &c);
                Ok((o, t, ForwardCache(CacheInner::Wrn(c))))
            }
            Arch::Mlp(m) => {
                let (o, t, c) = m.forward(&self.store, x, true);
                Ok((o, t, ForwardCache(CacheInner::Mlp(c.expect("train mode yields a cache")))))
            }
        }
    }

    /// Accumulates parameter gradients. `tap_grads[i]` is added at tap `i`.
    pub fn backward(&mut self, cache: &ForwardCache, d_out: &Tensor, tap_grads: &[Option<Tensor>]) {
        match (&self.arch, &cache.0) {
            (Arch::Wrn(w), CacheInner::Wrn(c)) => w.backward(&mut self.store, c, d_out, tap_grads),
            (Arch::Mlp(m), CacheInner::Mlp(c)) => m.backward(&mut self.store, c, d_out, tap_grads),
            _ => panic!("forward cache belongs to a different architecture"),
        }
    }

    /// Per-parameter masks implied by a channel mask set.
    pub fn param_masks(&self, masks: &MaskSet) -> Result<ParamMasks> {
        masking::compute(self, masks)
    }

    /// Zeroes every weight feeding or produced by a masked channel and keeps
    /// the mask active so optimizer steps leave those weights at zero.
    pub fn apply_mask(&mut self, masks: &MaskSet) -> Result<()> {
        let pm = self.param_masks(masks)?;
        pm.apply_values(&mut self.store);
        self.active_mask = Some(pm);
        Ok(())
    }

    pub fn active_mask(&self) -> Option<&ParamMasks> {
        self.active_mask.as_ref()
    }

    pub fn clear_mask(&mut self) {
        self.active_mask = None;
    }

    pub fn mask_grads(&mut self) {
        if let Some(pm) = &self.active_mask {
            pm.apply_grads(&mut self.store);
        }
    }

    pub fn enforce_mask(&mut self) {
        if let Some(pm) = &self.active_mask {
            pm.apply_values(&mut self.store);
        }
    }

    /// Sets the output-layer bias (e.g. to the training-target mean).
    pub fn set_output_bias(&mut self, value: f32) {
        let id = match &self.arch {
            Arch::Wrn(w) => w.fc_bias,
            Arch::Mlp(m) => m.out.bias,
        };
        self.store.get_mut(id).value.fill(value);
    }

    /// Hash over parameter and buffer bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for p in self.store.params() {
            p.name.hash(&mut h);
            for v in &p.value {
                v.to_bits().hash(&mut h);
            }
        }
        for b in self.store.buffers() {
            for v in &b.value {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    pub(crate) fn wrn(&self) -> Option<&Wrn> {
        match &self.arch {
            Arch::Wrn(w) => Some(w),
            Arch::Mlp(_) => None,
        }
    }

    pub(crate) fn mlp(&self) -> Option<&Mlp> {
        match &self.arch {
            Arch::Mlp(m) => Some(m),
            Arch::Wrn(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(b: usize) -> Tensor {
        Tensor::from_vec(
            &[b, 3, 8, 8],
            (0..b * 192).map(|i| ((i as f32) * 0.013).sin()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn wrn_16_2_exposes_four_taps() {
        let m = build_model(&ModelSpec::wide_resnet(16, 2, 100), 0).unwrap();
        assert_eq!(m.tap_ids(), vec!["group1", "group2", "group3", "pooled"]);
        assert_eq!(m.tap_channels(), vec![32, 64, 128, 128]);
        assert_eq!(m.prunable_layers().len(), 12);
    }

    #[test]
    fn invalid_depth_names_constraint() {
        let err = build_model(&ModelSpec::wide_resnet(15, 2, 100), 0).unwrap_err();
        assert!(err.to_string().contains("depth must be 6k+4"));
    }

    #[test]
    fn same_seed_same_parameters() {
        let spec = ModelSpec::wide_resnet(10, 1, 10);
        let a = build_model(&spec, 7).unwrap();
        let b = build_model(&spec, 7).unwrap();
        let c = build_model(&spec, 8).unwrap();
        for (p, q) in a.store().params().iter().zip(b.store().params()) {
            assert!(p.value.iter().zip(&q.value).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_ne!(a.fingerprint(), c.fingerprint());
        let x = images(2);
        assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
    }

    #[test]
    fn batch_of_one_keeps_leading_axis() {
        let m = build_model(&ModelSpec::wide_resnet(10, 1, 10), 1).unwrap();
        let (out, feats) = m.forward_with_features(&images(1)).unwrap();
        assert_eq!(out.shape(), &[1, 10]);
        assert_eq!(feats.len(), 4);
        for f in feats.maps() {
            assert_eq!(f.batch(), 1);
        }
        assert_eq!(feats.get(0).shape(), &[1, 16, 8, 8]);
        assert_eq!(feats.get(1).shape(), &[1, 32, 4, 4]);
        assert_eq!(feats.get(2).shape(), &[1, 64, 2, 2]);
        assert_eq!(feats.get(3).shape(), &[1, 64]);
    }

    #[test]
    fn shape_mismatch_is_input_error() {
        let m = build_model(&ModelSpec::wide_resnet(10, 1, 10), 1).unwrap();
        let bad = Tensor::zeros(&[2, 1, 8, 8]);
        assert!(matches!(m.predict(&bad), Err(Error::Shape { .. })));
        let mlp = build_model(&ModelSpec::tabular_mlp(3, 1, 5), 1).unwrap();
        assert!(mlp.predict(&Tensor::zeros(&[4, 6])).is_err());
        let (y, f) = mlp.forward_with_features(&Tensor::zeros(&[4, 5])).unwrap();
        assert_eq!(y.shape(), &[4, 1]);
        assert_eq!(f.len(), 3);
    }

    fn loss_of(m: &Model, x: &Tensor, w: &[f32], tw: &[Vec<f32>]) -> f64 {
        let mut m = m.clone();
        let (y, taps, _) = m.forward_train(x).unwrap();
        let mut l: f64 = y.data().iter().zip(w).map(|(a, b)| (a * b) as f64).sum();
        for (t, wv) in taps.iter().zip(tw) {
            l += t.data().iter().zip(wv).map(|(a, b)| (a * b) as f64).sum::<f64>();
        }
        l
    }

    /// Backward pass (including injected tap gradients) against central
    /// differences of a random linear functional of outputs and taps.
    fn check_backward(spec: &ModelSpec, x: Tensor) {
        let mut m = build_model(spec, 3).unwrap();
        let (y, taps, cache) = m.clone().forward_train(&x).unwrap();
        let w: Vec<f32> = (0..y.len()).map(|i| ((i as f32) * 0.7).cos()).collect();
        let tw: Vec<Vec<f32>> = taps
            .iter()
            .map(|t| (0..t.len()).map(|i| ((i as f32) * 0.3).sin() * 0.1).collect())
            .collect();
        let dy = Tensor::from_vec(y.shape(), w.clone()).unwrap();
        let tg: Vec<Option<Tensor>> = taps
            .iter()
            .zip(&tw)
            .map(|(t, v)| Some(Tensor::from_vec(t.shape(), v.clone()).unwrap()))
            .collect();
        m.store_mut().zero_grad();
        m.backward(&cache, &dy, &tg);
        let h = 1e-3f32;
        let mut checked = 0;
        for pi in 0..m.store().params().len() {
            let len = m.store().params()[pi].len();
            for &ei in &[0, len / 2, len - 1] {
                let mut mp = m.clone();
                mp.store_mut().params_mut()[pi].value[ei] += h;
                let mut mm = m.clone();
                mm.store_mut().params_mut()[pi].value[ei] -= h;
                let fd = (loss_of(&mp, &x, &w, &tw) - loss_of(&mm, &x, &w, &tw)) / (2.0 * h as f64);
                let an = m.store().params()[pi].grad[ei] as f64;
                let tol = 5e-2 * fd.abs().max(an.abs()).max(0.5);
                assert!(
                    (fd - an).abs() < tol,
                    "{} [{ei}]: fd {fd} vs analytic {an}",
                    m.store().params()[pi].name
                );
                checked += 1;
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn wrn_backward_matches_finite_differences() {
        let x = Tensor::from_vec(
            &[3, 3, 6, 6],
            (0..3 * 108).map(|i| ((i as f32) * 0.37).sin()).collect(),
        )
        .unwrap();
        check_backward(&ModelSpec::wide_resnet(10, 1, 4), x);
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let x = Tensor::from_vec(&[4, 5], (0..20).map(|i| ((i as f32) * 0.53).cos()).collect()).unwrap();
        let mut spec = ModelSpec::tabular_mlp(3, 1, 5);
        spec.width_factor = 1;
        check_backward(&spec, x);
    }
}

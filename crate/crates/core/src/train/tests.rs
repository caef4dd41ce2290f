use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::data::{ChannelStats, FeatureMatrix, ImageDatasetHandle, ImageSet, Split};
use crate::model::{build_model, snapshot, ModelSpec, SnapshotTag};
use crate::prune::{MaskSet, PruneConfig, Strategy};
use crate::Error;

fn tabular(rows: usize, seed: u64) -> TabularSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = 8;
    let mut values = Vec::with_capacity(rows * cols);
    let mut targets = Vec::with_capacity(rows);
    for _ in 0..rows {
        let x: Vec<f32> = (0..cols).map(|_| StandardNormal.sample(&mut rng)).collect();
        let noise: f32 = StandardNormal.sample(&mut rng);
        targets.push(5.0 + x[0] - 0.5 * x[1] + 0.5 * x[2] * x[3] + 0.2 * noise);
        values.extend(x);
    }
    let features = FeatureMatrix {
        rows,
        cols,
        values,
        columns: (0..cols).map(|j| format!("f{j}")).collect(),
    };
    TabularSet::new(features, targets).unwrap()
}

fn tabular_data() -> DatasetHandle {
    DatasetHandle::Tabular {
        train: tabular(256, 1),
        test: tabular(64, 2),
    }
}

fn image_data(n: usize) -> DatasetHandle {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let set = |n: usize, rng: &mut ChaCha8Rng| {
        let labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let pixels = labels
            .iter()
            .flat_map(|&l| (0..3072).map(|p| (if p % 4 == l { 200 } else { 40 }) + rng.random_range(0..30u8)).collect::<Vec<u8>>())
            .collect();
        ImageSet {
            pixels,
            labels,
            classes: 4,
        }
    };
    let train = set(n, &mut rng);
    let val = set(8, &mut rng);
    let stats = ChannelStats::of(&train);
    DatasetHandle::Images {
        train: ImageDatasetHandle {
            split: Split::Train,
            set: train,
            stats,
            subset_fraction: 1.0,
            augment: true,
        },
        val: ImageDatasetHandle {
            split: Split::Val,
            set: val,
            stats,
            subset_fraction: 1.0,
            augment: false,
        },
    }
}

fn mlp(wf: usize) -> ModelSpec {
    ModelSpec::tabular_mlp(3, wf, 8)
}

fn base_cfg(epochs: usize) -> TrainConfig {
    let mut c = TrainConfig::new(epochs, 32, LrSchedule::new(0.01, 0.1, vec![]).unwrap(), 3);
    c.key_dim = 16;
    c
}

fn pruning(epochs: usize, every: usize, rate: f64, strategy: Strategy) -> TrainConfig {
    let mut c = base_cfg(epochs);
    c.prune = Some(PruneConfig::new(rate, every, strategy));
    c
}

fn masked_max_abs(model: &crate::model::Model, masks: &MaskSet) -> f32 {
    let pm = model.param_masks(masks).unwrap();
    let mut worst = 0f32;
    for (i, p) in model.store().params().iter().enumerate() {
        if let Some(m) = pm.by_index(i) {
            for (v, &keep) in p.value.iter().zip(m) {
                if !keep {
                    worst = worst.max(v.abs());
                }
            }
        }
    }
    worst
}

#[test]
fn prune_events_follow_schedule() {
    let student = build_model(&mlp(1), 0).unwrap();
    let cfg = pruning(6, 2, 0.1, Strategy::SpSad);
    let (state, _) = train(&cfg, None, student, None, &tabular_data(), &mut NoopObserver).unwrap();
    assert_eq!(state.history.len(), 6);
    let epochs: Vec<usize> = state.prune_events.iter().map(|e| e.epoch).collect();
    assert_eq!(epochs, vec![2, 4, 6]);
    assert!(state.history.windows(2).all(|w| w[0].sparsity <= w[1].sparsity));
    assert!(state.history.iter().all(|r| r.total_loss.is_finite()));
    assert!(state.masks.is_subset_of(&MaskSet::for_model(&state.student)));
}

#[test]
fn prune_every_beyond_epochs_never_prunes() {
    let student = build_model(&mlp(1), 0).unwrap();
    let cfg = pruning(3, 4, 0.1, Strategy::SpSad);
    let (state, ticket) = train(&cfg, None, student, None, &tabular_data(), &mut NoopObserver).unwrap();
    assert!(state.prune_events.is_empty());
    assert_eq!(state.masks.cumulative_sparsity(), 0.0);
    assert_eq!(ticket.round, 0);
}

#[test]
fn zero_floor_rate_keeps_full_masks() {
    let student = build_model(&mlp(1), 0).unwrap();
    // floor(0.001 * 256) = 0 in every layer.
    let cfg = pruning(2, 1, 0.001, Strategy::SpSad);
    let (state, _) = train(&cfg, None, student, None, &tabular_data(), &mut NoopObserver).unwrap();
    assert!(state.masks.layers().all(|(_, m)| m.iter().all(|&b| b)));
    assert!(state.prune_events.is_empty());
}

#[test]
fn masked_weights_stay_zero() {
    let student = build_model(&mlp(1), 0).unwrap();
    let cfg = pruning(4, 1, 0.2, Strategy::SpSad);
    let (state, _) = train(&cfg, None, student, None, &tabular_data(), &mut NoopObserver).unwrap();
    assert!(state.masks.cumulative_sparsity() > 0.5);
    assert_eq!(masked_max_abs(&state.student, &state.masks), 0.0);
}

#[test]
fn lth_rewinds_to_init_after_final_prune() {
    let student = build_model(&mlp(1), 0).unwrap();
    let init = snapshot(&student, SnapshotTag::Init);
    let cfg = pruning(2, 2, 0.25, Strategy::LthSad);
    let (state, _) = train(&cfg, None, student, None, &tabular_data(), &mut NoopObserver).unwrap();
    assert_eq!(state.prune_events.len(), 1);
    let pm = state.student.param_masks(&state.masks).unwrap();
    for (i, p) in state.student.store().params().iter().enumerate() {
        let reference = init.param(&p.name).unwrap();
        for (j, (v, r)) in p.value.iter().zip(reference).enumerate() {
            match pm.by_index(i) {
                Some(m) if !m[j] => assert_eq!(*v, 0.0),
                _ => assert_eq!(v.to_bits(), r.to_bits(), "{}[{j}]", p.name),
            }
        }
    }
}

#[test]
fn sp_carries_trained_weights_forward() {
    let student = build_model(&mlp(1), 0).unwrap();
    let cfg = pruning(2, 2, 0.25, Strategy::SpSad);
    let (state, _) = train(&cfg, None, student, None, &tabular_data(), &mut NoopObserver).unwrap();
    let prev = state.previous_round.as_ref().unwrap();
    for p in state.student.store().params() {
        for (v, r) in p.value.iter().zip(prev.param(&p.name).unwrap()) {
            assert!(*v == 0.0 || v.to_bits() == r.to_bits());
        }
    }
    assert_ne!(state.student.fingerprint(), build_model(&mlp(1), 0).unwrap().fingerprint());
}

#[test]
fn history_is_reproducible() {
    let run = || {
        let student = build_model(&mlp(1), 0).unwrap();
        let cfg = pruning(3, 1, 0.1, Strategy::LthSad);
        let (state, ticket) = train(&cfg, None, student, None, &tabular_data(), &mut NoopObserver).unwrap();
        let rows: Vec<(f64, f64, f64)> = state.history.iter().map(|r| (r.total_loss, r.metric(), r.sparsity)).collect();
        (rows, ticket, state.student.fingerprint())
    };
    assert_eq!(run(), run());
}

#[test]
fn plain_regression_beats_mean_predictor() {
    let data = tabular_data();
    let mut student = build_model(&mlp(1), 0).unwrap();
    let DatasetHandle::Tabular { train: tr, test } = &data else {
        unreachable!()
    };
    student.set_output_bias(tr.target_mean() as f32);
    let cfg = base_cfg(15);
    let (state, ticket) = train(&cfg, None, student, None, &data, &mut NoopObserver).unwrap();
    let mean = tr.target_mean();
    let baseline = test.targets.iter().map(|&y| (y as f64 - mean).abs()).sum::<f64>() / test.len() as f64;
    let best_mae = state.history.iter().filter_map(|r| r.mae).fold(f64::INFINITY, f64::min);
    assert!(best_mae < baseline, "{best_mae} vs {baseline}");
    assert_eq!(ticket.round, 0);
}

#[test]
fn distillation_leaves_teacher_untouched() {
    let data = tabular_data();
    let teacher = build_model(&ModelSpec::tabular_mlp(4, 1, 8), 11).unwrap();
    let print = teacher.fingerprint();
    let student = build_model(&mlp(1), 0).unwrap();
    let mut cfg = pruning(2, 1, 0.1, Strategy::LthSad);
    cfg.beta = 5.0;
    cfg.alpha_kd = 0.5;
    let (state, _) = train(&cfg, Some(&teacher), student, None, &data, &mut NoopObserver).unwrap();
    assert_eq!(teacher.fingerprint(), print);
    assert!(state.history.iter().all(|r| r.attention_loss > 0.0 && r.soft_target_loss > 0.0));
    assert!(state.head.unwrap().is_finite());
}

#[test]
fn distillation_without_teacher_is_config_error() {
    let student = build_model(&mlp(1), 0).unwrap();
    let mut cfg = base_cfg(1);
    cfg.beta = 1.0;
    let err = train(&cfg, None, student, None, &tabular_data(), &mut NoopObserver).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn nan_target_aborts_with_diagnostic() {
    let mut set = tabular(64, 1);
    set.targets[0] = f32::NAN;
    let data = DatasetHandle::Tabular {
        train: set.clone(),
        test: set,
    };
    let student = build_model(&mlp(1), 0).unwrap();
    let err = train(&base_cfg(1), None, student, None, &data, &mut NoopObserver).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { epoch: 1, .. }), "{err}");
}

#[test]
fn image_distillation_smoke() {
    let data = image_data(12);
    let teacher = build_model(&ModelSpec::wide_resnet(10, 1, 4), 5).unwrap();
    let student = build_model(&ModelSpec::wide_resnet(10, 1, 4), 6).unwrap();
    let mut cfg = pruning(2, 1, 0.25, Strategy::SpSad);
    cfg.batch_size = 6;
    cfg.beta = 10.0;
    cfg.alpha_kd = 0.9;
    let (state, ticket) = train(&cfg, Some(&teacher), student, None, &data, &mut NoopObserver).unwrap();
    assert_eq!(state.history.len(), 2);
    assert!(state.history.iter().all(|r| r.accuracy.is_some() && r.attention_loss > 0.0));
    assert_eq!(ticket.round, 1);
    assert_eq!(masked_max_abs(&state.student, &state.masks), 0.0);
}

#[test]
fn rewind_spikes_pair_prune_epochs() {
    let student = build_model(&mlp(1), 0).unwrap();
    let cfg = pruning(6, 3, 0.1, Strategy::LthSad);
    let (state, _) = train(&cfg, None, student, None, &tabular_data(), &mut NoopObserver).unwrap();
    let spikes = rewind_spikes(&state.history);
    assert_eq!(spikes.len(), 1);
    assert_eq!(spikes[0].0, 3);
}

#[test]
fn single_round_presparsification() {
    // Widths 1280/640/320: a 5% round removes exactly 5% of every layer.
    let spec = ModelSpec::tabular_mlp(3, 5, 8);
    let cfg = PruneConfig::new(0.05, 1, Strategy::SsSad);
    let out = presparsify_lth(&spec, &tabular_data(), &cfg, 0.05, &base_cfg(1), 4).unwrap();
    assert!(out.reached);
    assert_eq!(out.masks.round(), 1);
    assert_eq!(out.history.len(), 1);
    assert!((out.masks.cumulative_sparsity() - 0.05).abs() < 1e-12);
}

#[test]
fn presparsification_replays_mask_arithmetic() {
    let spec = mlp(1);
    let cfg = PruneConfig::new(0.1, 1, Strategy::SsSad);
    let out = presparsify_lth(&spec, &tabular_data(), &cfg, 0.35, &base_cfg(1), 4).unwrap();
    // Per round: floor(25.6) + floor(12.8) + floor(6.4) = 43 of 448 channels.
    let expected = 4.0 * 43.0 / 448.0;
    assert_eq!(out.masks.round(), 4);
    assert!((out.masks.cumulative_sparsity() - expected).abs() < 1e-12);
    let init = build_model(&spec, 4).unwrap();
    for (p, q) in out.model.store().params().iter().zip(init.store().params()) {
        for (a, b) in p.value.iter().zip(&q.value) {
            assert!(*a == 0.0 || a.to_bits() == b.to_bits());
        }
    }
}

#[test]
fn invalid_target_rejected() {
    let cfg = PruneConfig::new(0.1, 1, Strategy::SsSad);
    assert!(presparsify_lth(&mlp(1), &tabular_data(), &cfg, 1.0, &base_cfg(1), 0).is_err());
}

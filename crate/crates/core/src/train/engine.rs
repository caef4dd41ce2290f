//! The epoch loop: distillation steps, periodic pruning, and reinitialization.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distill::{
    attention_term, cross_entropy, mse_loss, soft_target, student_loss, Activation, AttentionHead, ProjectionBank,
    DEFAULT_KEY_DIM,
};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, argmax_rows, mae, mse};
use crate::model::{snapshot, FeatureSet, Model, SnapshotTag, Task, WeightSnapshot};
use crate::prune::{extract_mask, rank_channels, reinit_lth, reinit_sp, MaskSet, PruneConfig, Strategy};
use crate::telemetry::Phase;
use crate::tensor::Tensor;

use super::dataset::{Batch, DatasetHandle, Targets};
use super::optim::Sgd;
use super::schedule::LrSchedule;
use super::ticket::{select_winning_ticket, WinningTicket};

const DEFAULT_EVAL_BATCH: usize = 256;

/// Everything the epoch loop needs besides models and data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Weight of the attention loss.
    pub beta: f64,
    pub temperature: f64,
    /// Weight of the soft-target term; the class loss gets `1 − alpha_kd`.
    pub alpha_kd: f64,
    pub key_dim: usize,
    pub query_activation: Activation,
    pub key_activation: Activation,
    pub prune: Option<PruneConfig>,
    /// Pruning stops once cumulative sparsity reaches this level.
    pub target_sparsity: Option<f64>,
    /// End training right after the pruning event that reaches the target.
    pub stop_at_target: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, schedule: LrSchedule, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size,
            eval_batch_size: DEFAULT_EVAL_BATCH,
            schedule,
            momentum: 0.9,
            weight_decay: 5e-4,
            beta: 0.0,
            temperature: 4.0,
            alpha_kd: 0.0,
            key_dim: DEFAULT_KEY_DIM,
            query_activation: Activation::Identity,
            key_activation: Activation::Identity,
            prune: None,
            target_sparsity: None,
            stop_at_target: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("epochs and batch sizes must be positive".into()));
        }
        self.schedule.validate()?;
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("momentum must lie in [0, 1) and weight decay be non-negative".into()));
        }
        if self.beta < 0.0 || !(0.0..=1.0).contains(&self.alpha_kd) || self.temperature <= 0.0 {
            return Err(Error::Config(format!(
                "need beta >= 0, alpha_kd in [0, 1], T > 0 (got {}, {}, {})",
                self.beta, self.alpha_kd, self.temperature
            )));
        }
        if self.key_dim == 0 {
            return Err(Error::Config("key_dim must be positive".into()));
        }
        if let Some(p) = &self.prune {
            p.validate()?;
        }
        if let Some(t) = self.target_sparsity {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Config(format!("target sparsity must lie in (0, 1), got {t}")));
            }
        }
        Ok(())
    }

    /// True when the teacher contributes to the loss.
    pub fn distills(&self) -> bool {
        self.beta > 0.0 || self.alpha_kd > 0.0
    }
}

/// One row of the per-epoch history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Pruning round whose mask was active while training this epoch.
    pub round: usize,
    pub class_loss: f64,
    pub attention_loss: f64,
    pub soft_target_loss: f64,
    pub total_loss: f64,
    pub accuracy: Option<f64>,
    pub mae: Option<f64>,
    pub mse: Option<f64>,
    pub sparsity: f64,
    pub lr: f64,
    pub wall_time_s: f64,
    pub energy_j: Option<f64>,
    pub pruned_after: bool,
}

impl EpochRecord {
    /// Accuracy for classification, MSE for regression.
    pub fn metric(&self) -> f64 {
        self.accuracy.or(self.mse).unwrap_or(f64::NAN)
    }
}

/// One pruning event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub epoch: usize,
    pub round: usize,
    pub sparsity: f64,
    pub removed: usize,
    pub saturated: Vec<String>,
    pub strategy: Strategy,
}

/// Best evaluated student within one sparsity plateau.
#[derive(Debug, Clone)]
pub struct PlateauBest {
    pub round: usize,
    pub sparsity: f64,
    pub epoch: usize,
    pub metric: f64,
    pub student: Model,
    pub masks: MaskSet,
}

/// Evaluation metrics over a full split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: Option<f64>,
    pub mae: Option<f64>,
    pub mse: Option<f64>,
}

/// Callbacks fired by [`train`].
pub trait TrainObserver {
    fn phase(&mut self, _phase: Phase) {}
    /// Energy consumed since the previous call, when measured.
    fn epoch_energy(&mut self) -> Option<f64> {
        None
    }
    fn epoch_end(&mut self, _record: &EpochRecord) -> Result<()> {
        Ok(())
    }
    /// Called after the mask is applied and the student reinitialized.
    fn pruned(&mut self, _event: &PruneEvent, _student: &Model, _masks: &MaskSet) -> Result<()> {
        Ok(())
    }
    /// Called when a plateau gets a new best student.
    fn plateau_best(&mut self, _best: &PlateauBest) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores every callback.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

/// State after [`train`] returns.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub epoch: usize,
    pub student: Model,
    pub masks: MaskSet,
    pub init: WeightSnapshot,
    pub previous_round: Option<WeightSnapshot>,
    pub history: Vec<EpochRecord>,
    pub prune_events: Vec<PruneEvent>,
    pub plateau_bests: Vec<PlateauBest>,
    pub head: Option<AttentionHead>,
    pub bank: Option<ProjectionBank>,
    pub seed: u64,
    pub task: Task,
}

impl TrainState {
    pub fn best_for_round(&self, round: usize) -> Option<&PlateauBest> {
        self.plateau_bests.iter().find(|b| b.round == round)
    }
}

/// Accuracy or MAE/MSE of `model` over the evaluation split.
pub fn evaluate(model: &Model, data: &DatasetHandle, batch_size: usize) -> Result<EvalMetrics> {
    let mut pred_classes = Vec::new();
    let mut labels = Vec::new();
    let mut pred_values = Vec::new();
    let mut values = Vec::new();
    for batch in data.eval_batches(batch_size) {
        let out = model.predict(&batch.x)?;
        match batch.targets {
            Targets::Classes(l) => {
                pred_classes.extend(argmax_rows(&out));
                labels.extend(l);
            }
            Targets::Values(v) => {
                pred_values.extend(out.data().iter().map(|&p| p as f64));
                values.extend(v.iter().map(|&y| y as f64));
            }
        }
    }
    Ok(match data.task() {
        Task::Classification => EvalMetrics {
            accuracy: Some(accuracy(&pred_classes, &labels)?),
            mae: None,
            mse: None,
        },
        Task::Regression => EvalMetrics {
            accuracy: None,
            mae: Some(mae(&values, &pred_values)?),
            mse: Some(mse(&values, &pred_values)?),
        },
    })
}

struct Distiller<'a> {
    teacher: &'a Model,
    head: AttentionHead,
    bank: ProjectionBank,
}

#[derive(Default)]
struct StepLosses {
    class: f64,
    attention: f64,
    soft_target: f64,
    total: f64,
}

fn class_term(out: &Tensor, targets: &Targets) -> Result<(f64, Tensor)> {
    match targets {
        Targets::Classes(l) => cross_entropy(out, l),
        Targets::Values(v) => mse_loss(out, v),
    }
}

fn teacher_term(teacher_out: &Tensor, out: &Tensor, task: Task, temperature: f64) -> Result<(f64, Tensor)> {
    match task {
        Task::Classification => soft_target(teacher_out, out, temperature),
        Task::Regression => mse_loss(out, teacher_out.data()),
    }
}

struct Step<'s, 'a> {
    cfg: &'s TrainConfig,
    student: &'s mut Model,
    distiller: Option<&'s mut Distiller<'a>>,
    opt: &'s mut Sgd,
    lr: f64,
    task: Task,
}

impl Step<'_, '_> {
    fn run(self, batch: &Batch, epoch: usize, step: usize) -> Result<StepLosses> {
        let cfg = self.cfg;
        let (out, taps, cache) = self.student.forward_train(&batch.x)?;
        let (class, d_class) = class_term(&out, &batch.targets)?;
        let mut losses = StepLosses {
            class,
            ..StepLosses::default()
        };
        let mut d_out = d_class;
        let mut tap_grads: Vec<Option<Tensor>> = vec![None; taps.len()];
        let mut aux_grads = None;
        if let Some(dist) = self.distiller.as_deref() {
            let (t_out, t_feats) = dist.teacher.forward_with_features(&batch.x)?;
            if cfg.alpha_kd > 0.0 {
                let (kd, d_kd) = teacher_term(&t_out, &out, self.task, cfg.temperature)?;
                losses.soft_target = kd;
                let (a, c) = (cfg.alpha_kd as f32, (1.0 - cfg.alpha_kd) as f32);
                for (g, k) in d_out.data_mut().iter_mut().zip(d_kd.data()) {
                    *g = c * *g + a * k;
                }
            }
            if cfg.beta > 0.0 {
                let s_feats = FeatureSet::from_tensors(&self.student.tap_ids(), &taps);
                let term = attention_term(&t_feats, &s_feats, &dist.head, &dist.bank)?;
                losses.attention = term.loss;
                let beta = cfg.beta as f32;
                for (slot, g) in tap_grads.iter_mut().zip(&term.student_grads) {
                    let mut t = g.to_tensor();
                    t.data_mut().iter_mut().for_each(|v| *v *= beta);
                    *slot = Some(t);
                }
                aux_grads = Some((term.head_grads, term.bank_grads));
            }
        }
        if ![losses.class, losses.attention, losses.soft_target].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteLoss {
                epoch,
                step,
                class: losses.class,
                attention: losses.attention,
                soft_target: losses.soft_target,
            });
        }
        losses.total = student_loss(losses.class, losses.attention, losses.soft_target, cfg.beta, cfg.alpha_kd)?;
        self.student.store_mut().zero_grad();
        self.student.backward(&cache, &d_out, &tap_grads);
        self.student.mask_grads();
        self.opt.step_store(self.student.store_mut(), self.lr);
        self.student.enforce_mask();
        if let (Some(dist), Some((hg, bg))) = (self.distiller, aux_grads) {
            let scale = |it: &mut dyn Iterator<Item = &Vec<f64>>| -> Vec<Vec<f64>> {
                it.map(|a| a.iter().map(|v| v * cfg.beta).collect()).collect()
            };
            let hg = scale(&mut hg.arrays());
            let bg = scale(&mut bg.arrays());
            self.opt.step_arrays(0, dist.head.arrays_mut(), hg.iter(), self.lr);
            self.opt.step_arrays(1, dist.bank.arrays_mut(), bg.iter(), self.lr);
            if !dist.head.is_finite() || !dist.bank.is_finite() {
                return Err(Error::Numeric(format!("distillation parameters diverged at epoch {epoch}, step {step}")));
            }
        }
        Ok(losses)
    }
}

fn improves(task: Task, candidate: f64, best: f64) -> bool {
    match task {
        Task::Classification => candidate > best,
        Task::Regression => candidate < best,
    }
}

fn target_reached(masks: &MaskSet, target: Option<f64>) -> bool {
    target.is_some_and(|t| masks.cumulative_sparsity() >= t - 1e-12)
}

/// Runs the iterative pruning loop with attention-guided distillation.
///
/// Each epoch trains the student on every batch, evaluates it, and, when
/// `epoch % prune.every == 0`, extracts a smaller mask and reinitializes the
/// surviving weights per strategy. `initial_masks` lets a pre-sparsified
/// student start from its existing mask.
pub fn train(
    cfg: &TrainConfig,
    teacher: Option<&Model>,
    student: Model,
    initial_masks: Option<MaskSet>,
    data: &DatasetHandle,
    observer: &mut dyn TrainObserver,
) -> Result<(TrainState, WinningTicket)> {
    cfg.validate()?;
    let task = data.task();
    if student.spec().task != task {
        return Err(Error::Structure(format!(
            "student task {:?} does not match dataset task {task:?}",
            student.spec().task
        )));
    }
    let mut student = student;
    let mut masks = initial_masks.unwrap_or_else(|| MaskSet::for_model(&student));
    student.apply_mask(&masks)?;

    let mut distiller = match teacher {
        Some(t) if cfg.distills() => {
            if t.spec().task != task || t.spec().num_outputs != student.spec().num_outputs {
                return Err(Error::Structure("teacher and student outputs differ".into()));
            }
            let mut head = AttentionHead::new(&t.tap_channels(), &student.tap_channels(), cfg.key_dim, cfg.seed ^ 0xA77E)?;
            head.f_q = cfg.query_activation;
            head.f_k = cfg.key_activation;
            Some(Distiller {
                teacher: t,
                head,
                bank: ProjectionBank::new(&t.tap_channels(), &student.tap_channels(), cfg.seed ^ 0xBA2C),
            })
        }
        None if cfg.distills() => {
            return Err(Error::Config("beta or alpha_kd is positive but no teacher was given".into()));
        }
        _ => None,
    };
    let teacher_print = teacher.map(Model::fingerprint);

    let init = snapshot(&student, SnapshotTag::Init);
    let mut state_prev = None;
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut events = Vec::new();
    let mut bests: Vec<PlateauBest> = Vec::new();
    let mut epoch = 0;

    while epoch < cfg.epochs {
        epoch += 1;
        let start = Instant::now();
        let lr = cfg.schedule.rate(epoch - 1);
        observer.phase(Phase::Train);
        let batches = data.epoch_batches(cfg.batch_size, &mut rng);
        if batches.is_empty() {
            return Err(Error::Empty("training split yields no batches".into()));
        }
        let mut sums = StepLosses::default();
        for (i, batch) in batches.iter().enumerate() {
            let l = Step {
                cfg,
                student: &mut student,
                distiller: distiller.as_mut(),
                opt: &mut opt,
                lr,
                task,
            }
            .run(batch, epoch, i)?;
            sums.class += l.class;
            sums.attention += l.attention;
            sums.soft_target += l.soft_target;
            sums.total += l.total;
        }
        let n = batches.len() as f64;
        observer.phase(Phase::Inference);
        let eval = evaluate(&student, data, cfg.eval_batch_size)?;
        let mut record = EpochRecord {
            epoch,
            round: masks.round(),
            class_loss: sums.class / n,
            attention_loss: sums.attention / n,
            soft_target_loss: sums.soft_target / n,
            total_loss: sums.total / n,
            accuracy: eval.accuracy,
            mae: eval.mae,
            mse: eval.mse,
            sparsity: masks.cumulative_sparsity(),
            lr,
            wall_time_s: 0.0,
            energy_j: None,
            pruned_after: false,
        };
        let metric = record.metric();
        let slot = bests.iter().position(|b| b.round == masks.round());
        if slot.is_none_or(|i| improves(task, metric, bests[i].metric)) {
            let best = PlateauBest {
                round: masks.round(),
                sparsity: masks.cumulative_sparsity(),
                epoch,
                metric,
                student: student.clone(),
                masks: masks.clone(),
            };
            observer.plateau_best(&best)?;
            match slot {
                Some(i) => bests[i] = best,
                None => bests.push(best),
            }
        }

        let mut stop = false;
        if let Some(pc) = cfg.prune.filter(|p| epoch % p.every == 0 && !target_reached(&masks, cfg.target_sparsity)) {
            let scores = rank_channels(&student, &masks)?;
            let ex = extract_mask(&scores, &masks, &pc)?;
            if ex.removed > 0 {
                let prev = snapshot(&student, SnapshotTag::PreviousRound);
                match pc.strategy {
                    Strategy::LthSad => reinit_lth(&mut student, &init, &ex.masks)?,
                    Strategy::SpSad | Strategy::SsSad | Strategy::Sad => reinit_sp(&mut student, &prev, &ex.masks)?,
                }
                opt.reset();
                masks = ex.masks;
                state_prev = Some(prev);
                let event = PruneEvent {
                    epoch,
                    round: masks.round(),
                    sparsity: masks.cumulative_sparsity(),
                    removed: ex.removed,
                    saturated: ex.saturated,
                    strategy: pc.strategy,
                };
                log::info!(
                    "epoch {epoch}: pruned {} channels, round {}, sparsity {:.4}",
                    event.removed,
                    event.round,
                    event.sparsity
                );
                observer.pruned(&event, &student, &masks)?;
                events.push(event);
                record.pruned_after = true;
                stop = cfg.stop_at_target && target_reached(&masks, cfg.target_sparsity);
            } else {
                log::warn!("epoch {epoch}: pruning removed no channels; event skipped");
            }
        }
        record.wall_time_s = start.elapsed().as_secs_f64();
        record.energy_j = observer.epoch_energy();
        log::info!(
            "epoch {epoch}/{}: loss {:.4} metric {:.4} sparsity {:.3} lr {lr}",
            cfg.epochs,
            record.total_loss,
            metric,
            record.sparsity
        );
        observer.epoch_end(&record)?;
        history.push(record);
        if stop {
            break;
        }
    }

    if let (Some(t), Some(print)) = (teacher, teacher_print) {
        if t.fingerprint() != print {
            return Err(Error::Structure("teacher parameters changed during student training".into()));
        }
    }
    let ticket = select_winning_ticket(&history, task)?;
    let (head, bank) = match distiller {
        Some(d) => (Some(d.head), Some(d.bank)),
        None => (None, None),
    };
    Ok((
        TrainState {
            epoch,
            student,
            masks,
            init,
            previous_round: state_prev,
            history,
            prune_events: events,
            plateau_bests: bests,
            head,
            bank,
            seed: cfg.seed,
            task,
        },
        ticket,
    ))
}

/// Epochs immediately following each rewind whose mean training loss rose
/// relative to the epoch before the rewind: `(event epoch, before, after)`.
pub fn rewind_spikes(history: &[EpochRecord]) -> Vec<(usize, f64, f64)> {
    history
        .windows(2)
        .filter(|w| w[0].pruned_after)
        .map(|w| (w[0].epoch, w[0].total_loss, w[1].total_loss))
        .collect()
}

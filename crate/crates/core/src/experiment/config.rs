//! Experiment configuration: TOML files, presets, and environment overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::FeatureGroup;
use crate::distill::{Activation, DEFAULT_KEY_DIM};
use crate::error::{Error, Result};
use crate::model::{build_model, Family, ModelSpec, Task};
use crate::prune::{extract_mask, ChannelScores, MaskSet, PruneConfig, Scope, Strategy};
use crate::telemetry::DEFAULT_INTERVAL_MS;
use crate::train::{LrSchedule, TrainConfig};

/// Prefix of environment variables that override config keys. Section keys
/// use a double underscore: `KDPRUNE_TEACHER__EPOCHS=5`.
pub const ENV_PREFIX: &str = "KDPRUNE_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    CifarLike,
    Movies,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::CifarLike => "cifar-like",
            DatasetKind::Movies => "movies",
        })
    }
}

/// How the "decay" value is interpreted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayMode {
    /// `decay` is the optimizer's weight decay; milestones use `lr_gamma`.
    #[default]
    WeightDecay,
    /// `decay` is the milestone multiplier; no weight decay.
    LrFactor,
}

/// Architecture of one network; the output width comes from the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub family: Family,
    pub depth: usize,
    pub width_factor: usize,
}

impl ModelSection {
    pub fn spec(&self, task: Task, num_outputs: usize, input_dim: usize) -> ModelSpec {
        ModelSpec {
            family: self.family,
            depth: self.depth,
            width_factor: self.width_factor,
            num_outputs,
            task,
            input_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherSection {
    pub family: Family,
    pub depth: usize,
    pub width_factor: usize,
    pub epochs: usize,
    pub lr: f64,
    #[serde(default)]
    pub lr_milestones: Vec<usize>,
    #[serde(default = "default_gamma")]
    pub lr_gamma: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    pub seed: u64,
    /// Load the teacher from this checkpoint instead of training it.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

impl TeacherSection {
    pub fn model(&self) -> ModelSection {
        ModelSection {
            family: self.family,
            depth: self.depth,
            width_factor: self.width_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TelemetrySection {
    pub enabled: bool,
    pub device: usize,
    pub interval_ms: u64,
}

impl Default for TelemetrySection {
    fn default() -> Self {
        TelemetrySection {
            enabled: true,
            device: 0,
            interval_ms: DEFAULT_INTERVAL_MS,
        }
    }
}

/// Synthetic corpus written when the data path does not exist yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub distractor: f64,
    pub noise_std: f64,
    pub movie_rows: usize,
    pub seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let img = crate::data::synth::ImageSynthConfig::default();
        SynthSection {
            train_per_class: img.train_per_class,
            test_per_class: img.test_per_class,
            distractor: img.distractor,
            noise_std: img.noise_std,
            movie_rows: 2000,
            seed: img.seed,
        }
    }
}

fn default_gamma() -> f64 {
    0.1
}

fn default_weight_decay() -> f64 {
    5e-4
}

fn default_momentum() -> f64 {
    0.9
}

fn default_key_dim() -> usize {
    DEFAULT_KEY_DIM
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_subset() -> f64 {
    1.0
}

fn default_eval_batch() -> usize {
    256
}

/// Fully determines one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub strategy: Strategy,
    pub dataset: DatasetKind,
    /// Image archive directory or movie table file.
    pub data_path: PathBuf,
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub feature_group: Option<FeatureGroup>,
    /// Synthesize a corpus at `data_path` when it is missing.
    #[serde(default)]
    pub synthesize: bool,
    pub epochs: usize,
    #[serde(default)]
    pub prune_rate: Option<f64>,
    #[serde(default)]
    pub prune_every: Option<usize>,
    #[serde(default)]
    pub prune_scope: Scope,
    /// Pruning stops once reached; SS-SAD pre-sparsifies up to it.
    #[serde(default)]
    pub target_sparsity: Option<f64>,
    /// Learning rate of SS-SAD's pre-sparsification phase.
    #[serde(default)]
    pub presparsify_lr: Option<f64>,
    pub lr: f64,
    #[serde(default)]
    pub lr_milestones: Vec<usize>,
    #[serde(default = "default_gamma")]
    pub lr_gamma: f64,
    #[serde(default)]
    pub decay: f64,
    #[serde(default)]
    pub decay_mode: DecayMode,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub beta: f64,
    pub temperature: f64,
    pub alpha_kd: f64,
    pub batch_size: usize,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_subset")]
    pub subset_fraction: f64,
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default = "default_key_dim")]
    pub key_dim: usize,
    #[serde(default)]
    pub query_activation: Activation,
    #[serde(default)]
    pub key_activation: Activation,
    pub output_dir: PathBuf,
    pub teacher: TeacherSection,
    pub student: ModelSection,
    #[serde(default)]
    pub telemetry: TelemetrySection,
    #[serde(default)]
    pub synth: SynthSection,
}

/// Bundled preset files, by name.
pub const PRESETS: [(&str, &str); 11] = [
    ("sp_sad_cifar", include_str!("../../presets/sp_sad_cifar.toml")),
    ("lth_sad_cifar", include_str!("../../presets/lth_sad_cifar.toml")),
    ("ss_sad_cifar", include_str!("../../presets/ss_sad_cifar.toml")),
    ("sad_cifar", include_str!("../../presets/sad_cifar.toml")),
    ("desk_plain_cifar", include_str!("../../presets/desk_plain_cifar.toml")),
    ("desk_sad_cifar", include_str!("../../presets/desk_sad_cifar.toml")),
    ("desk_lth_sad_cifar", include_str!("../../presets/desk_lth_sad_cifar.toml")),
    ("desk_sp_sad_cifar", include_str!("../../presets/desk_sp_sad_cifar.toml")),
    ("desk_ss_sad_cifar", include_str!("../../presets/desk_ss_sad_cifar.toml")),
    ("desk_sad_movies", include_str!("../../presets/desk_sad_movies.toml")),
    ("desk_lth_sad_movies", include_str!("../../presets/desk_lth_sad_movies.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

fn env_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn section_mut<'a>(mut cur: &'a mut toml::Table, sections: &[String]) -> Option<&'a mut toml::Table> {
    for s in sections {
        match cur.entry(s.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new())) {
            toml::Value::Table(t) => cur = t,
            _ => return None,
        }
    }
    Some(cur)
}

/// Applies `KDPRUNE_*` overrides from `vars` to a parsed table.
pub fn apply_env_overrides(table: &mut toml::Table, vars: impl IntoIterator<Item = (String, String)>) {
    for (key, raw) in vars {
        let Some(rest) = key.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let path: Vec<String> = rest.to_ascii_lowercase().split("__").map(str::to_string).collect();
        let (last, sections) = path.split_last().expect("split yields one item");
        match section_mut(table, sections) {
            Some(t) => {
                log::info!("config override {key}={raw}");
                t.insert(last.clone(), env_value(&raw));
            }
            None => log::warn!("ignoring override {key}: not a section path"),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text, applies overrides, and validates.
    pub fn parse(text: &str, overrides: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        apply_env_overrides(&mut table, overrides);
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file, or a bundled preset when `source` names one and
    /// no such file exists. Process environment overrides are applied.
    pub fn load(source: &str) -> Result<Self> {
        let path = Path::new(source);
        let text = if path.is_file() {
            std::fs::read_to_string(path)?
        } else if let Some((_, t)) = PRESETS.iter().find(|(n, _)| *n == source) {
            t.to_string()
        } else {
            return Err(Error::Config(format!(
                "{source} is neither a file nor a preset ({})",
                preset_names().collect::<Vec<_>>().join(", ")
            )));
        };
        Self::parse(&text, std::env::vars())
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Config(format!("unknown preset {name}")))?;
        Self::parse(text, std::iter::empty())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        let prunes = self.prune_rate.is_some() || self.prune_every.is_some();
        match self.strategy {
            Strategy::Sad => {
                if prunes || self.target_sparsity.is_some() || self.presparsify_lr.is_some() {
                    return err("strategy SAD does not prune; remove prune_rate, prune_every, target_sparsity".into());
                }
            }
            s => {
                if self.prune_rate.is_none() || self.prune_every.is_none() {
                    return err(format!("strategy {s} requires prune_rate and prune_every"));
                }
                self.prune_config().expect("checked above").validate()?;
                if s == Strategy::SsSad && self.target_sparsity.is_none() {
                    return err("strategy SS-SAD requires target_sparsity".into());
                }
                if s != Strategy::SsSad && self.presparsify_lr.is_some() {
                    return err("presparsify_lr applies only to SS-SAD".into());
                }
            }
        }
        if let Some(t) = self.target_sparsity {
            if !(t > 0.0 && t < 1.0) {
                return err(format!("target_sparsity must lie in (0, 1), got {t}"));
            }
        }
        match (self.dataset, self.feature_group) {
            (DatasetKind::Movies, None) => return err("dataset movies requires feature_group".into()),
            (DatasetKind::CifarLike, Some(_)) => return err("feature_group applies only to the movies dataset".into()),
            _ => {}
        }
        let expect_family = match self.dataset {
            DatasetKind::CifarLike => Family::WideResnet,
            DatasetKind::Movies => Family::TabularMlp,
        };
        if self.student.family != expect_family || self.teacher.family != expect_family {
            return err(format!("dataset {} needs {expect_family:?} teacher and student", self.dataset));
        }
        if self.seeds.is_empty() {
            return err("seeds must not be empty".into());
        }
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return err(format!("subset_fraction must lie in (0, 1], got {}", self.subset_fraction));
        }
        if self.decay < 0.0 || self.momentum < 0.0 || self.momentum >= 1.0 {
            return err("decay must be non-negative and momentum in [0, 1)".into());
        }
        if self.teacher.checkpoint.is_none() && self.teacher.epochs == 0 {
            return err("teacher needs epochs or a checkpoint".into());
        }
        LrSchedule::new(self.teacher.lr, self.teacher.lr_gamma, self.teacher.lr_milestones.clone())?;
        for m in [&self.student, &self.teacher.model()] {
            m.spec(Task::Classification, 1, 1).validate()?;
        }
        self.train_config(self.seeds[0])?.validate()
    }

    pub fn prune_config(&self) -> Option<PruneConfig> {
        match (self.prune_rate, self.prune_every) {
            (Some(rate), Some(every)) => Some(PruneConfig {
                scope: self.prune_scope,
                ..PruneConfig::new(rate, every, self.strategy)
            }),
            _ => None,
        }
    }

    pub fn lr_schedule(&self) -> Result<LrSchedule> {
        let gamma = match self.decay_mode {
            DecayMode::WeightDecay => self.lr_gamma,
            DecayMode::LrFactor => self.decay,
        };
        LrSchedule::new(self.lr, gamma, self.lr_milestones.clone())
    }

    pub fn weight_decay(&self) -> f64 {
        match self.decay_mode {
            DecayMode::WeightDecay => self.decay,
            DecayMode::LrFactor => 0.0,
        }
    }

    /// Student training settings for one seed. SS-SAD's distillation phase
    /// trains the pre-sparsified student without further pruning.
    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let mut tc = TrainConfig::new(self.epochs, self.batch_size, self.lr_schedule()?, seed);
        tc.eval_batch_size = self.eval_batch_size;
        tc.momentum = self.momentum;
        tc.weight_decay = self.weight_decay();
        tc.beta = self.beta;
        tc.temperature = self.temperature;
        tc.alpha_kd = self.alpha_kd;
        tc.key_dim = self.key_dim;
        tc.query_activation = self.query_activation;
        tc.key_activation = self.key_activation;
        if self.strategy != Strategy::SsSad {
            tc.prune = self.prune_config();
            tc.target_sparsity = self.target_sparsity;
        }
        Ok(tc)
    }

    /// Optimizer settings of SS-SAD's pre-sparsification phase.
    pub fn presparsify_config(&self, seed: u64) -> Result<TrainConfig> {
        let mut tc = self.train_config(seed)?;
        tc.schedule = LrSchedule::new(self.presparsify_lr.unwrap_or(self.lr), self.lr_gamma, vec![])?;
        Ok(tc)
    }

    pub fn teacher_config(&self) -> Result<TrainConfig> {
        let t = &self.teacher;
        let mut tc = TrainConfig::new(
            t.epochs.max(1),
            self.batch_size,
            LrSchedule::new(t.lr, t.lr_gamma, t.lr_milestones.clone())?,
            t.seed,
        );
        tc.eval_batch_size = self.eval_batch_size;
        tc.momentum = self.momentum;
        tc.weight_decay = t.weight_decay;
        Ok(tc)
    }

    fn task(&self) -> Task {
        match self.dataset {
            DatasetKind::CifarLike => Task::Classification,
            DatasetKind::Movies => Task::Regression,
        }
    }

    /// Replays up to `rounds` pruning rounds on the student's channel layout,
    /// stopping at the target sparsity or when nothing more can be removed.
    fn simulate_rounds(&self, pc: &PruneConfig, rounds: usize) -> Result<Vec<ScheduledPrune>> {
        let model = build_model(&self.student.spec(self.task(), 1, 1), 0)?;
        let mut masks = MaskSet::for_model(&model);
        let scores: ChannelScores = masks.layers().map(|(id, m)| (id.to_string(), vec![0.0; m.len()])).collect();
        let mut out = Vec::new();
        for k in 1..=rounds {
            if self.target_sparsity.is_some_and(|t| masks.cumulative_sparsity() >= t) {
                break;
            }
            let ext = extract_mask(&scores, &masks, pc)?;
            if ext.removed == 0 {
                break;
            }
            masks = ext.masks;
            out.push(ScheduledPrune {
                epoch: k * pc.every,
                round: k,
                sparsity: masks.cumulative_sparsity(),
            });
        }
        Ok(out)
    }

    /// Expands epochs, LR drops, and pruning events without training.
    pub fn schedule(&self) -> Result<ResolvedSchedule> {
        let sched = self.lr_schedule()?;
        let lr_drops = self
            .lr_milestones
            .iter()
            .filter(|&&m| m < self.epochs)
            .map(|&m| (m, sched.rate(m)))
            .collect();
        let mut presparsify_rounds = Vec::new();
        let mut prune_events = Vec::new();
        if let Some(pc) = self.prune_config() {
            let rounds = if self.strategy == Strategy::SsSad {
                usize::MAX
            } else {
                self.epochs / pc.every
            };
            let planned = self.simulate_rounds(&pc, rounds)?;
            if self.strategy == Strategy::SsSad {
                presparsify_rounds = planned;
            } else {
                prune_events = planned;
            }
        }
        Ok(ResolvedSchedule {
            name: self.name.clone(),
            strategy: self.strategy,
            epochs: self.epochs,
            base_lr: self.lr,
            lr_drops,
            prune_events,
            presparsify_rounds,
            teacher_epochs: if self.teacher.checkpoint.is_some() { 0 } else { self.teacher.epochs },
            seeds: self.seeds.clone(),
        })
    }

    /// Key/value view used by reports.
    pub fn summary(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("strategy".into(), self.strategy.to_string());
        m.insert("dataset".into(), self.dataset.to_string());
        if let Some(g) = self.feature_group {
            m.insert("feature_group".into(), g.to_string());
        }
        m.insert("student".into(), self.student.spec(Task::Classification, 1, 3).label());
        m.insert("teacher".into(), self.teacher.model().spec(Task::Classification, 1, 3).label());
        m
    }
}

/// One planned pruning event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledPrune {
    pub epoch: usize,
    pub round: usize,
    /// Cumulative channel sparsity after the event.
    pub sparsity: f64,
}

/// Dry-run expansion of a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSchedule {
    pub name: String,
    pub strategy: Strategy,
    pub epochs: usize,
    pub base_lr: f64,
    /// `(milestone epoch, rate from then on)`.
    pub lr_drops: Vec<(usize, f64)>,
    pub prune_events: Vec<ScheduledPrune>,
    pub presparsify_rounds: Vec<ScheduledPrune>,
    pub teacher_epochs: usize,
    pub seeds: Vec<u64>,
}

impl fmt::Display for ResolvedSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "run {} ({})", self.name, self.strategy)?;
        writeln!(f, "teacher epochs: {}", self.teacher_epochs)?;
        writeln!(f, "seeds: {:?}", self.seeds)?;
        writeln!(f, "student epochs: {}", self.epochs)?;
        writeln!(f, "base lr: {}", self.base_lr)?;
        let drops: Vec<String> = self.lr_drops.iter().map(|(e, lr)| format!("{e} (lr {lr:.6})")).collect();
        writeln!(f, "lr drops at: {}", if drops.is_empty() { "none".into() } else { drops.join(", ") })?;
        if !self.presparsify_rounds.is_empty() {
            let ev: Vec<String> = self.presparsify_rounds.iter().map(|p| p.epoch.to_string()).collect();
            writeln!(
                f,
                "pre-sparsification rounds: {} at epochs {} (sparsity {:.4})",
                ev.len(),
                ev.join(","),
                self.presparsify_rounds.last().map_or(0.0, |p| p.sparsity)
            )?;
        }
        let ev: Vec<String> = self.prune_events.iter().map(|p| p.epoch.to_string()).collect();
        write!(
            f,
            "pruning events: {}{}",
            ev.len(),
            if ev.is_empty() { String::new() } else { format!(" at epochs {}", ev.join(",")) }
        )?;
        if let Some(last) = self.prune_events.last() {
            write!(f, " (final channel sparsity {:.4})", last.sparsity)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn every_preset_parses_and_validates() {
        for name in preset_names() {
            let cfg = ExperimentConfig::preset(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(cfg.name, name);
            let back = ExperimentConfig::parse(&cfg.to_toml().unwrap(), std::iter::empty()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn sp_sad_preset_expands_to_eight_events() {
        let s = ExperimentConfig::preset("sp_sad_cifar").unwrap().schedule().unwrap();
        let epochs: Vec<usize> = s.prune_events.iter().map(|p| p.epoch).collect();
        assert_eq!(epochs, (1..=8).map(|k| 20 * k).collect::<Vec<_>>());
        assert_eq!(s.lr_drops.iter().map(|d| d.0).collect::<Vec<_>>(), vec![60, 120]);
        assert!((s.lr_drops[0].1 - 0.005).abs() < 1e-12);
        assert!((s.lr_drops[1].1 - 0.0005).abs() < 1e-12);
        let text = s.to_string();
        assert!(text.contains("lr drops at: 60"));
        assert!(text.contains("pruning events: 8 at epochs 20,40,60,80,100,120,140,160"));
    }

    #[test]
    fn ss_sad_presparsifies_then_distills_without_pruning() {
        let cfg = ExperimentConfig::preset("ss_sad_cifar").unwrap();
        let s = cfg.schedule().unwrap();
        assert!(s.prune_events.is_empty());
        // WRN-16-2 at 5% removes 1, 3 and 6 channels from each of four
        // 32-, 64- and 128-channel layers: 40 of 896 per round.
        assert_eq!(s.presparsify_rounds.len(), 16);
        assert!((s.presparsify_rounds[15].sparsity - 640.0 / 896.0).abs() < 1e-12);
        assert!(cfg.train_config(0).unwrap().prune.is_none());
        assert_eq!(cfg.presparsify_config(0).unwrap().schedule.base, 0.05);
    }

    #[test]
    fn sad_with_prune_fields_is_rejected() {
        let text = ExperimentConfig::preset("sad_cifar").unwrap().to_toml().unwrap();
        let err = ExperimentConfig::parse(&text, vars(&[("KDPRUNE_PRUNE_RATE", "0.1")])).unwrap_err();
        assert!(matches!(err, Error::Config(m) if m.contains("SAD")));
    }

    #[test]
    fn movies_require_a_feature_group() {
        let mut t: toml::Table = toml::from_str(&ExperimentConfig::preset("desk_sad_movies").unwrap().to_toml().unwrap()).unwrap();
        t.remove("feature_group");
        let err = ExperimentConfig::parse(&toml::to_string(&t).unwrap(), std::iter::empty()).unwrap_err();
        assert!(matches!(err, Error::Config(m) if m.contains("feature_group")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = ExperimentConfig::preset("sad_cifar").unwrap().to_toml().unwrap() + "\nbogus = 1\n";
        assert!(matches!(ExperimentConfig::parse(&text, std::iter::empty()), Err(Error::Config(_))));
    }

    #[test]
    fn env_overrides_reach_nested_sections() {
        let text = ExperimentConfig::preset("sp_sad_cifar").unwrap().to_toml().unwrap();
        let cfg = ExperimentConfig::parse(
            &text,
            vars(&[
                ("KDPRUNE_EPOCHS", "40"),
                ("KDPRUNE_TEACHER__EPOCHS", "3"),
                ("KDPRUNE_OUTPUT_DIR", "/tmp/x"),
                ("OTHER_EPOCHS", "9"),
            ]),
        )
        .unwrap();
        assert_eq!(cfg.epochs, 40);
        assert_eq!(cfg.teacher.epochs, 3);
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn lr_factor_mode_uses_decay_as_gamma() {
        let text = ExperimentConfig::preset("sad_cifar").unwrap().to_toml().unwrap();
        let cfg = ExperimentConfig::parse(&text, vars(&[("KDPRUNE_DECAY_MODE", "lr-factor")])).unwrap();
        assert_eq!(cfg.weight_decay(), 0.0);
        assert!((cfg.lr_schedule().unwrap().rate(150) - 0.05 * 0.05).abs() < 1e-12);
    }

    #[test]
    fn target_caps_planned_events() {
        let text = ExperimentConfig::preset("sp_sad_cifar").unwrap().to_toml().unwrap();
        let cfg = ExperimentConfig::parse(&text, vars(&[("KDPRUNE_TARGET_SPARSITY", "0.3")])).unwrap();
        // 84 of 896 channels per round: 0.28125 after three rounds, 0.375 after four.
        let events = cfg.schedule().unwrap().prune_events;
        assert_eq!(events.len(), 4);
        assert!((events[3].sparsity - 336.0 / 896.0).abs() < 1e-12);
    }
}

//! End-to-end experiment execution.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::data::synth::{write_cifar_like, write_movie_fixture, ImageSynthConfig};
use crate::data::{encode_group, load_image_splits, load_movies, split_by_year, Manifest, MovieTable};
use crate::error::{Error, Result};
use crate::model::{build_model, effective_size, Model, Task};
use crate::prune::{MaskSet, Strategy};
use crate::telemetry::{energy_joules, Phase, PowerLog, PowerSampler};
use crate::train::{
    plateau_checkpoint_name, presparsify_lth, train, DatasetHandle, EpochRecord, NoopObserver, PlateauBest,
    PruneEvent, TabularSet, TrainObserver,
};

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::config::{DatasetKind, ExperimentConfig};
use super::report::{MetricFamily, RunReport, SeedReport};

/// Dataset plus the network dimensions it implies.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub data: DatasetHandle,
    pub input_dim: usize,
    pub num_outputs: usize,
}

impl PreparedData {
    pub fn task(&self) -> Task {
        self.data.task()
    }
}

fn tabular(table: &MovieTable, x: crate::data::FeatureMatrix) -> Result<TabularSet> {
    TabularSet::new(x, table.target.iter().map(|&v| v as f32).collect())
}

/// Loads (and, when configured, synthesizes) the dataset of a config.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let path = &cfg.data_path;
    match cfg.dataset {
        DatasetKind::CifarLike => {
            if cfg.synthesize && !path.exists() {
                log::info!("writing synthetic image corpus to {}", path.display());
                write_cifar_like(
                    path,
                    &ImageSynthConfig {
                        train_per_class: cfg.synth.train_per_class,
                        test_per_class: cfg.synth.test_per_class,
                        distractor: cfg.synth.distractor,
                        noise_std: cfg.synth.noise_std,
                        seed: cfg.synth.seed,
                    },
                )?;
            }
            let (train, val) = load_image_splits(path, cfg.subset_fraction, cfg.data_seed)?;
            let classes = train.class_count();
            Ok(PreparedData {
                data: DatasetHandle::Images { train, val },
                input_dim: crate::data::IMAGE_CHANNELS,
                num_outputs: classes,
            })
        }
        DatasetKind::Movies => {
            if cfg.synthesize && !path.exists() {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir)?;
                }
                log::info!("writing synthetic movie table to {}", path.display());
                write_movie_fixture(path, cfg.synth.movie_rows, cfg.synth.seed)?;
            }
            let manifest = match &cfg.manifest {
                Some(m) => Manifest::load(m)?,
                None => Manifest::default(),
            };
            let (table, report) = load_movies(path, &manifest)?;
            log::info!("movie table: {} rows after cleaning", report.rows);
            let (train, test, counts) = split_by_year(&table);
            log::info!("year split: {} train / {} test", counts.train, counts.test);
            let group = cfg.feature_group.expect("validated");
            let (xtr, xte) = encode_group(&train, &test, group)?;
            let input_dim = xtr.cols;
            Ok(PreparedData {
                data: DatasetHandle::Tabular {
                    train: tabular(&train, xtr)?,
                    test: tabular(&test, xte)?,
                },
                input_dim,
                num_outputs: 1,
            })
        }
    }
}

fn train_target_mean(data: &DatasetHandle) -> Option<f32> {
    match data {
        DatasetHandle::Tabular { train, .. } => Some(train.target_mean() as f32),
        DatasetHandle::Images { .. } => None,
    }
}

/// Builds a freshly initialized model; regression outputs start at the
/// training-target mean.
pub fn init_model(section: &super::config::ModelSection, prepared: &PreparedData, seed: u64) -> Result<Model> {
    let spec = section.spec(prepared.task(), prepared.num_outputs, prepared.input_dim);
    let mut m = build_model(&spec, seed)?;
    if let Some(mean) = train_target_mean(&prepared.data) {
        m.set_output_bias(mean);
    }
    Ok(m)
}

/// Trains (or loads) the teacher. Returns the model and its final metric.
pub fn prepare_teacher(cfg: &ExperimentConfig, prepared: &PreparedData) -> Result<(Model, Option<f64>)> {
    if let Some(path) = &cfg.teacher.checkpoint {
        let loaded = load_checkpoint(path)?;
        let spec = loaded.model.spec();
        if spec.num_outputs != prepared.num_outputs || spec.input_dim != prepared.input_dim {
            return Err(Error::Structure(format!("teacher checkpoint {} does not fit the dataset", path.display())));
        }
        return Ok((loaded.model, None));
    }
    let teacher = init_model(&cfg.teacher.model(), prepared, cfg.teacher.seed)?;
    log::info!("training teacher {} for {} epochs", teacher.spec().label(), cfg.teacher.epochs);
    let (state, _) = train(&cfg.teacher_config()?, None, teacher, None, &prepared.data, &mut NoopObserver)?;
    let metric = state.history.last().map(EpochRecord::metric);
    Ok((state.student, metric))
}

const CSV_HEADER: &str = "epoch,round,class_loss,attention_loss,soft_target_loss,total_loss,accuracy,mae,mse,sparsity,lr,wall_time_s,energy_j,pruned_after";

fn csv_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// One metrics CSV line; the same columns as [`CSV_HEADER`].
pub fn csv_row(r: &EpochRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.epoch,
        r.round,
        r.class_loss,
        r.attention_loss,
        r.soft_target_loss,
        r.total_loss,
        csv_opt(r.accuracy),
        csv_opt(r.mae),
        csv_opt(r.mse),
        r.sparsity,
        r.lr,
        r.wall_time_s,
        csv_opt(r.energy_j),
        r.pruned_after
    )
}

/// Reads a metrics CSV written by a run back into records.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::ingest(path, e.to_string()))?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

struct RunObserver<'a> {
    csv: File,
    ckpt_dir: PathBuf,
    seed: u64,
    sampler: Option<&'a PowerSampler>,
    energy_mark: f64,
}

impl RunObserver<'_> {
    fn total_energy(&self) -> Option<f64> {
        self.sampler.map(|s| energy_joules(&s.snapshot(), None))
    }
}

impl TrainObserver for RunObserver<'_> {
    fn phase(&mut self, phase: Phase) {
        if let Some(s) = self.sampler {
            s.set_phase(phase);
        }
    }

    fn epoch_energy(&mut self) -> Option<f64> {
        let total = self.total_energy()?;
        let e = total - self.energy_mark;
        self.energy_mark = total;
        Some(e)
    }

    fn epoch_end(&mut self, record: &EpochRecord) -> Result<()> {
        writeln!(self.csv, "{}", csv_row(record))?;
        self.csv.flush()?;
        Ok(())
    }

    fn pruned(&mut self, event: &PruneEvent, student: &Model, masks: &MaskSet) -> Result<()> {
        let path = self.ckpt_dir.join(format!("round-{}.ckpt", event.round));
        save_checkpoint(&path, student, masks, event.epoch, self.seed)
    }

    fn plateau_best(&mut self, best: &PlateauBest) -> Result<()> {
        let path = self.ckpt_dir.join(plateau_checkpoint_name(best.round));
        save_checkpoint(&path, &best.student, &best.masks, best.epoch, self.seed)
    }
}

fn rel(path: &Path, base: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).display().to_string()
}

/// Trains one student seed and writes its outputs under `dir`.
pub fn run_seed(
    cfg: &ExperimentConfig,
    prepared: &PreparedData,
    teacher: &Model,
    seed: u64,
    dir: &Path,
    sampler: Option<&PowerSampler>,
) -> Result<SeedReport> {
    let seed_dir = dir.join(format!("seed-{seed}"));
    let ckpt_dir = seed_dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let mut student = init_model(&cfg.student, prepared, seed)?;
    let mut masks = None;
    if cfg.strategy == Strategy::SsSad {
        let pc = cfg.prune_config().expect("validated");
        let target = cfg.target_sparsity.expect("validated");
        let pre = presparsify_lth(student.spec(), &prepared.data, &pc, target, &cfg.presparsify_config(seed)?, seed)?;
        if !pre.reached {
            log::warn!("SS-SAD pre-sparsification stopped at {:.4}", pre.masks.cumulative_sparsity());
        }
        fs::write(
            seed_dir.join("presparsify.csv"),
            std::iter::once(CSV_HEADER.to_string())
                .chain(pre.history.iter().map(csv_row))
                .collect::<Vec<_>>()
                .join("\n")
                + "\n",
        )?;
        student = pre.model;
        masks = Some(pre.masks);
    }
    let metrics_path = seed_dir.join("metrics.csv");
    let mut csv = File::create(&metrics_path)?;
    writeln!(csv, "{CSV_HEADER}")?;
    let mut observer = RunObserver {
        csv,
        ckpt_dir: ckpt_dir.clone(),
        seed,
        sampler,
        energy_mark: 0.0,
    };
    observer.energy_mark = observer.total_energy().unwrap_or(0.0);
    let tc = cfg.train_config(seed)?;
    let teacher_ref = tc.distills().then_some(teacher);
    let (state, ticket) = train(&tc, teacher_ref, student, masks, &prepared.data, &mut observer)?;
    save_checkpoint(&ckpt_dir.join("final.ckpt"), &state.student, &state.masks, state.epoch, seed)?;
    let best = state
        .best_for_round(ticket.round)
        .ok_or_else(|| Error::Structure(format!("no plateau best for round {}", ticket.round)))?;
    let size = effective_size(&best.student, &best.masks)?;
    let record = state
        .history
        .iter()
        .find(|r| r.epoch == ticket.epoch)
        .expect("ticket comes from history");
    let energy = sampler.map(|_| state.history.iter().filter_map(|r| r.energy_j).sum());
    Ok(SeedReport {
        seed,
        accuracy: record.accuracy,
        mae: record.mae,
        mse: record.mse,
        size,
        prune_events: state.prune_events.len(),
        energy_joules: energy,
        metrics_csv: rel(&metrics_path, dir),
        checkpoint: rel(&ckpt_dir.join(&ticket.checkpoint_ref), dir),
        ticket,
    })
}

/// Executes a validated config end to end and writes `resolved_config.toml`,
/// `teacher.ckpt`, per-seed `metrics.csv` and checkpoints, `power_log.csv`,
/// and `summary.json` under the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("resolved_config.toml"), cfg.to_toml()?)?;
    let prepared = prepare_data(cfg)?;
    let sampler = cfg
        .telemetry
        .enabled
        .then(|| PowerSampler::for_device(cfg.telemetry.device, Duration::from_millis(cfg.telemetry.interval_ms)));
    let (teacher, teacher_metric) = prepare_teacher(cfg, &prepared)?;
    if cfg.teacher.checkpoint.is_none() {
        save_checkpoint(&dir.join("teacher.ckpt"), &teacher, &MaskSet::for_model(&teacher), cfg.teacher.epochs, cfg.teacher.seed)?;
    }
    let mut seeds = Vec::new();
    for &seed in &cfg.seeds {
        log::info!("student seed {seed}");
        seeds.push(run_seed(cfg, &prepared, &teacher, seed, dir, sampler.as_ref())?);
    }
    let power_log = match sampler {
        Some(s) => {
            let log: PowerLog = s.stop();
            let path = dir.join("power_log.csv");
            log.save(&path)?;
            Some(rel(&path, dir))
        }
        None => None,
    };
    let spec = |m: &super::config::ModelSection| m.spec(prepared.task(), prepared.num_outputs, prepared.input_dim).label();
    let mut report = RunReport {
        name: cfg.name.clone(),
        strategy: cfg.strategy,
        dataset: cfg.dataset.to_string(),
        feature_group: cfg.feature_group.map(|g| g.to_string()),
        metric_family: match prepared.task() {
            Task::Classification => MetricFamily::Accuracy,
            Task::Regression => MetricFamily::Regression,
        },
        student: spec(&cfg.student),
        teacher: spec(&cfg.teacher.model()),
        teacher_metric,
        seeds,
        accuracy: None,
        mae: None,
        mse: None,
        sparsity: 0.0,
        size_reduction: 0.0,
        energy_joules: None,
        power_log,
    };
    report.aggregate();
    report.save(&dir.join("summary.json"))?;
    Ok(report)
}

//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kdprune::distill::{
    attention_loss, attention_term, attention_weights, cross_entropy, student_loss, AttentionHead, ProjectionBank,
};
use kdprune::experiment::{init_model, prepare_data, ExperimentConfig, PreparedData};
use kdprune::metrics::{accuracy, mae, mse};
use kdprune::model::{build_model, effective_size, snapshot, FeatureMap, FeatureSet, Model, ModelSpec, SnapshotTag, WRN_STEM_CHANNELS};
use kdprune::prune::{extract_mask, rank_channels, reinit_lth, MaskSet, PruneConfig, Strategy};
use kdprune::telemetry::{energy_joules, PowerLog, PowerSample, Phase};
use kdprune::train::{rewind_spikes, train, DatasetHandle, NoopObserver, Sgd, TrainState};
use kdprune::Tensor;

/// Writes past the test harness capture so every verdict shows in the log.
fn verdict(n: usize, name: &str, pass: bool, detail: &str, started: Instant) {
    let line = format!(
        "ACCEPTANCE {n:>2} {:<4} {name}: {detail} ({:.1}s)\n",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    let mut err = std::io::stderr().lock();
    let _ = err.write_all(line.as_bytes());
    let _ = err.flush();
    assert!(pass, "criterion {n} failed: {detail}");
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn criterion_01_mask_arithmetic() {
    let t = Instant::now();
    let scores = BTreeMap::from([("layer".to_string(), (0..64).map(|i| ((i * 37) % 64) as f64).collect::<Vec<_>>())]);
    let masks = MaskSet::from_parts(BTreeMap::from([("layer".to_string(), vec![true; 64])]), 0);
    let out = extract_mask(&scores, &masks, &PruneConfig::new(0.30, 1, Strategy::SpSad)).unwrap();
    let kept = out.masks.surviving("layer").unwrap();
    let lowest_gone = (0..64).filter(|&i| (i * 37) % 64 < 19).all(|i| !out.masks.get("layer").unwrap()[i]);
    verdict(1, "mask arithmetic", kept == 45 && lowest_gone, &format!("64 channels at rate 0.30 keep {kept} (expected 45)"), t);
}

#[test]
fn criterion_02_rewind_exactness() {
    let t = Instant::now();
    let mut model = build_model(&ModelSpec::tabular_mlp(3, 1, 6), 11).unwrap();
    let init = snapshot(&model, SnapshotTag::Init);
    let mut masks = MaskSet::for_model(&model);
    let cfg = PruneConfig::new(0.2, 1, Strategy::LthSad);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut survivors, mut survivors_ok, mut masked, mut masked_ok) = (0usize, 0usize, 0usize, 0usize);
    for _round in 0..3 {
        for p in model.store_mut().params_mut() {
            p.value.iter_mut().for_each(|v| *v += rng.random_range(-0.5f32..0.5));
        }
        masks = extract_mask(&rank_channels(&model, &masks).unwrap(), &masks, &cfg).unwrap().masks;
        reinit_lth(&mut model, &init, &masks).unwrap();
        let pm = model.param_masks(&masks).unwrap();
        for (i, p) in model.store().params().iter().enumerate() {
            let snap = init.param(&p.name).unwrap();
            for (e, v) in p.value.iter().enumerate() {
                if pm.by_index(i).is_some_and(|m| !m[e]) {
                    masked += 1;
                    masked_ok += usize::from(*v == 0.0);
                } else {
                    survivors += 1;
                    survivors_ok += usize::from(v.to_bits() == snap[e].to_bits());
                }
            }
        }
    }
    verdict(
        2,
        "rewind exactness",
        survivors_ok == survivors && masked_ok == masked && masked > 0,
        &format!("{survivors_ok}/{survivors} survivors bitwise equal init, {masked_ok}/{masked} masked are zero over 3 rounds"),
        t,
    );
}

#[test]
fn criterion_03_mask_persistence() {
    let t = Instant::now();
    let mut model = build_model(&ModelSpec::wide_resnet(10, 1, 10), 3).unwrap();
    let masks = MaskSet::for_model(&model);
    let masks = extract_mask(
        &rank_channels(&model, &masks).unwrap(),
        &masks,
        &PruneConfig::new(0.3, 1, Strategy::SpSad),
    )
    .unwrap()
    .masks;
    model.apply_mask(&masks).unwrap();
    let mut opt = Sgd::new(0.9, 5e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Tensor::from_vec(&[8, 3, 8, 8], (0..8 * 3 * 64).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap();
    let labels: Vec<usize> = (0..8).map(|i| i % 10).collect();
    for _ in 0..50 {
        model.store_mut().zero_grad();
        let (logits, _, cache) = model.forward_train(&x).unwrap();
        let (_, grad) = cross_entropy(&logits, &labels).unwrap();
        model.backward(&cache, &grad, &[]);
        model.mask_grads();
        opt.step_store(model.store_mut(), 0.05);
        model.enforce_mask();
    }
    let pm = model.param_masks(&masks).unwrap();
    let mut max_abs = 0f32;
    for (i, p) in model.store().params().iter().enumerate() {
        if let Some(m) = pm.by_index(i) {
            for (v, keep) in p.value.iter().zip(m) {
                if !keep {
                    max_abs = max_abs.max(v.abs());
                }
            }
        }
    }
    verdict(3, "mask persistence", max_abs == 0.0, &format!("max |masked weight| after 50 steps = {max_abs}"), t);
}

fn random_set(rng: &mut ChaCha8Rng, shapes: &[Vec<usize>]) -> FeatureSet {
    FeatureSet::new(
        shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let n = s.iter().product();
                (format!("tap{i}"), FeatureMap::new(s.clone(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap())
            })
            .collect(),
    )
}

fn channels(s: &FeatureSet) -> Vec<usize> {
    s.maps().map(FeatureMap::channels).collect()
}

#[test]
fn criterion_04_attention_correctness() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_row = 0f64;
    for trial in 0..100 {
        let n_t = rng.random_range(1..4);
        let n_s = rng.random_range(1..4);
        let mk = |rng: &mut ChaCha8Rng, n| {
            (0..n)
                .map(|_| {
                    let c = rng.random_range(1..6);
                    if rng.random_bool(0.5) {
                        vec![2, c, 2, 2]
                    } else {
                        vec![2, c]
                    }
                })
                .collect::<Vec<_>>()
        };
        let ts = mk(&mut rng, n_t);
        let ss = mk(&mut rng, n_s);
        let teacher = random_set(&mut rng, &ts);
        let student = random_set(&mut rng, &ss);
        let head = AttentionHead::new(&channels(&teacher), &channels(&student), 8, trial).unwrap();
        let a = attention_weights(&teacher, &student, &head).unwrap();
        for row in a.rows() {
            worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    let teacher = random_set(&mut rng, &[vec![1, 4, 2, 2], vec![1, 4, 2, 2]]);
    let student = random_set(&mut rng, &[vec![1, 3, 2, 2], vec![1, 3, 2, 2]]);
    let head = AttentionHead::new(&[4, 4], &[3, 3], 4, 1).unwrap();
    let bank = ProjectionBank::new(&[4, 4], &[3, 3], 2);
    let term = attention_term(&teacher, &student, &head, &bank).unwrap();
    let loss = |s: &FeatureSet| {
        let alpha = attention_weights(&teacher, s, &head).unwrap();
        attention_loss(&teacher, s, &alpha, &bank).unwrap()
    };
    let h = 1e-5;
    let mut worst_rel = 0f64;
    for si in 0..student.len() {
        for e in 0..student.get(si).values().len() {
            let mut p = student.clone();
            p.get_mut(si).values_mut()[e] += h;
            let mut m = student.clone();
            m.get_mut(si).values_mut()[e] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            let an = term.student_grads[si].values()[e];
            worst_rel = worst_rel.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-8));
        }
    }
    verdict(
        4,
        "attention correctness",
        worst_row < 1e-6 && worst_rel < 1e-3,
        &format!("max |row sum - 1| = {worst_row:.2e} over 100 heads; max relative gradient error = {worst_rel:.2e}"),
        t,
    );
}

#[test]
fn criterion_05_loss_composition() {
    let t = Instant::now();
    let class = 2.0317;
    let att = 0.4172;
    let kd = 1.25;
    let plain = student_loss(class, att, kd, 0.0, 0.0).unwrap();
    let sp_sad = ExperimentConfig::preset("sp_sad_cifar").unwrap();
    let beta = sp_sad.beta;
    let with_att = student_loss(class, att, kd, beta, 0.0).unwrap();
    let contribution = with_att - student_loss(class, att, kd, 0.0, 0.0).unwrap();
    let pass = (plain - class).abs() <= 1e-12 && beta == 100.0 && (contribution - beta * att).abs() <= 1e-9;
    verdict(
        5,
        "loss composition",
        pass,
        &format!("beta=0 loss {plain} vs class {class}; beta={beta} contribution {contribution} vs {}", beta * att),
        t,
    );
}

#[test]
fn criterion_06_metrics_oracle() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let y: Vec<f64> = (0..1000).map(|_| rng.random_range(-10.0..10.0)).collect();
    let y_hat: Vec<f64> = (0..1000).map(|_| rng.random_range(-10.0..10.0)).collect();
    let labels: Vec<usize> = (0..1000).map(|_| rng.random_range(0..10)).collect();
    let preds: Vec<usize> = (0..1000).map(|_| rng.random_range(0..10)).collect();
    let (mut abs, mut sq, mut hits) = (0.0, 0.0, 0usize);
    for i in 0..1000 {
        let d = y[i] - y_hat[i];
        abs += d.abs();
        sq += d * d;
        if labels[i] == preds[i] {
            hits += 1;
        }
    }
    let errs = [
        (mae(&y, &y_hat).unwrap() - abs / 1000.0).abs(),
        (mse(&y, &y_hat).unwrap() - sq / 1000.0).abs(),
        (accuracy(&preds, &labels).unwrap() - hits as f64 / 1000.0).abs(),
    ];
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    verdict(6, "metrics oracle", worst <= 1e-12, &format!("max deviation from brute force = {worst:.2e}"), t);
}

fn constant_log(minutes: usize, watts: f64, dir: &Path) -> PowerLog {
    let mut log = PowerLog::new("constant");
    for s in 0..=minutes * 60 {
        log.push(PowerSample {
            timestamp_s: s as f64,
            power_watts: watts,
            phase: Phase::Train,
        })
        .unwrap();
    }
    let path = dir.join(format!("{minutes}min.csv"));
    log.save(&path).unwrap();
    PowerLog::load(&path).unwrap()
}

#[test]
fn criterion_07_energy_math() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let short = energy_joules(&constant_log(40, 75.0, dir.path()), None);
    let long = energy_joules(&constant_log(120, 75.0, dir.path()), None);
    let reduction = 100.0 * (1.0 - short / long);
    verdict(
        7,
        "energy math",
        (reduction - 66.67).abs() <= 0.1 && (short - 75.0 * 2400.0).abs() < 1e-6,
        &format!("{short:.0} J vs {long:.0} J: {reduction:.2}% less energy (claimed 66.67%)"),
        t,
    );
}

struct Desk {
    prepared: PreparedData,
    teacher: Model,
    teacher_acc: f64,
    plain: Vec<f64>,
    sad: Vec<f64>,
    _dir: tempfile::TempDir,
}

fn desk_config(preset: &str, data: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(preset).unwrap();
    cfg.data_path = data.to_path_buf();
    cfg
}

fn final_accuracy(state: &TrainState) -> f64 {
    state.history.last().and_then(|r| r.accuracy).expect("classification history")
}

fn train_student(cfg: &ExperimentConfig, desk: &PreparedData, teacher: Option<&Model>, seed: u64) -> TrainState {
    let tc = cfg.train_config(seed).unwrap();
    let student = init_model(&cfg.student, desk, seed).unwrap();
    train(&tc, teacher.filter(|_| tc.distills()), student, None, &desk.data, &mut NoopObserver).unwrap().0
}

const DESK_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data: PathBuf = dir.path().join("cifar");
        let sad_cfg = desk_config("desk_sad_cifar", &data);
        let plain_cfg = desk_config("desk_plain_cifar", &data);
        let prepared = prepare_data(&sad_cfg).unwrap();
        let teacher = init_model(&sad_cfg.teacher.model(), &prepared, sad_cfg.teacher.seed).unwrap();
        let state = train(&sad_cfg.teacher_config().unwrap(), None, teacher, None, &prepared.data, &mut NoopObserver)
            .unwrap()
            .0;
        let teacher_acc = final_accuracy(&state);
        let teacher = state.student;
        let mut plain = Vec::new();
        let mut sad = Vec::new();
        for seed in DESK_SEEDS {
            plain.push(final_accuracy(&train_student(&plain_cfg, &prepared, None, seed)));
            sad.push(final_accuracy(&train_student(&sad_cfg, &prepared, Some(&teacher), seed)));
        }
        Desk {
            prepared,
            teacher,
            teacher_acc,
            plain,
            sad,
            _dir: dir,
        }
    })
}

#[test]
fn criterion_08_distillation_benefit() {
    let t = Instant::now();
    let d = desk();
    let (p, s) = (median(d.plain.clone()), median(d.sad.clone()));
    verdict(
        8,
        "desk-scale distillation benefit",
        s > p,
        &format!(
            "teacher {:.4}; median of 5 seeds: SAD {s:.4} vs plain {p:.4} ({:+.2} points); plain {:?}, SAD {:?}",
            d.teacher_acc,
            100.0 * (s - p),
            d.plain,
            d.sad
        ),
        t,
    );
}

#[test]
fn criterion_09_pruning_trend() {
    let t = Instant::now();
    let d = desk();
    let cfg = ExperimentConfig::preset("desk_lth_sad_cifar").unwrap();
    let target = cfg.target_sparsity.expect("preset sets a target");
    let mut lth = Vec::new();
    let mut sparsities = Vec::new();
    for &seed in &DESK_SEEDS[..3] {
        let state = train_student(&cfg, &d.prepared, Some(&d.teacher), seed);
        sparsities.push(state.masks.cumulative_sparsity());
        lth.push(final_accuracy(&state));
    }
    let dense = median(d.sad[..3].to_vec());
    let pruned = median(lth.clone());
    let gap = 100.0 * (dense - pruned);
    let reached = sparsities.iter().all(|&s| s >= target);
    verdict(
        9,
        "desk-scale pruning trend",
        reached && gap <= 6.0,
        &format!(
            "LTH-SAD at sparsity {sparsities:?} median {pruned:.4} vs dense SAD {dense:.4}: gap {gap:.2} points (limit 6, full-scale gap 2.44)"
        ),
        t,
    );
}

#[test]
fn criterion_10_movie_regression() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("movies.csv");
    let sad_cfg = desk_config("desk_sad_movies", &data);
    let lth_cfg = desk_config("desk_lth_sad_movies", &data);
    assert_eq!(sad_cfg.synth.movie_rows, 2000);
    let prepared = prepare_data(&sad_cfg).unwrap();
    let teacher = init_model(&sad_cfg.teacher.model(), &prepared, sad_cfg.teacher.seed).unwrap();
    let teacher = train(&sad_cfg.teacher_config().unwrap(), None, teacher, None, &prepared.data, &mut NoopObserver)
        .unwrap()
        .0
        .student;
    let student = train_student(&sad_cfg, &prepared, Some(&teacher), 0);
    let student_mae = student.history.last().and_then(|r| r.mae).unwrap();
    let DatasetHandle::Tabular { train: tr, test } = &prepared.data else {
        panic!("movie data is tabular");
    };
    let mean = tr.target_mean();
    let baseline = test.targets.iter().map(|&y| (y as f64 - mean).abs()).sum::<f64>() / test.len() as f64;
    let lth = train_student(&lth_cfg, &prepared, Some(&teacher), 0);
    let spikes = rewind_spikes(&lth.history);
    let all_spike = !spikes.is_empty() && spikes.iter().all(|&(_, before, after)| after > before);
    verdict(
        10,
        "movie regression sanity",
        student_mae < baseline && all_spike && spikes.len() == lth.prune_events.iter().filter(|e| e.epoch < lth.epoch).count(),
        &format!(
            "student MAE {student_mae:.4} vs train-mean MAE {baseline:.4}; LTH rewind loss (before, after): {:?}",
            spikes.iter().map(|&(e, b, a)| (e, (b * 1e4).round() / 1e4, (a * 1e4).round() / 1e4)).collect::<Vec<_>>()
        ),
        t,
    );
}

#[test]
fn criterion_11_schedule_exactness() {
    let t = Instant::now();
    let s = ExperimentConfig::preset("sp_sad_cifar").unwrap().schedule().unwrap();
    let events: Vec<usize> = s.prune_events.iter().map(|p| p.epoch).collect();
    let drops: Vec<usize> = s.lr_drops.iter().map(|d| d.0).collect();
    verdict(
        11,
        "schedule exactness",
        events == [20, 40, 60, 80, 100, 120, 140, 160] && drops == [60, 120],
        &format!("pruning events at {events:?}, LR drops at {drops:?}"),
        t,
    );
}

/// Counts surviving parameters of a wide ResNet straight from channel masks.
fn recount_wrn(spec: &ModelSpec, masks: &MaskSet) -> (usize, usize) {
    let alive = |v: &[bool]| v.iter().filter(|&&b| b).count();
    let widths = spec.group_widths();
    let blocks = spec.blocks_per_group();
    let stem = WRN_STEM_CHANNELS;
    let (mut total, mut kept) = (stem * 3 * 9, stem * 3 * 9);
    let mut stream = vec![true; stem];
    for (g, &w) in widths.iter().enumerate() {
        for b in 0..blocks {
            let m1 = masks.get(&format!("group{}.block{b}.conv1", g + 1)).unwrap();
            let m2 = masks.get(&format!("group{}.block{b}.conv2", g + 1)).unwrap();
            let (c_in, a_in) = (stream.len(), alive(&stream));
            total += 2 * c_in + c_in * w * 9 + 2 * w + w * w * 9;
            kept += 2 * a_in + alive(m1) * a_in * 9 + 2 * alive(m1) + alive(m2) * alive(m1) * 9;
            if b == 0 {
                total += c_in * w;
                kept += alive(m2) * a_in;
                stream = m2.to_vec();
            } else {
                stream = stream.iter().zip(m2).map(|(s, m)| *s || *m).collect();
            }
        }
    }
    let out = spec.num_outputs;
    total += 2 * stream.len() + out * stream.len() + out;
    kept += 2 * alive(&stream) + out * alive(&stream) + out;
    (total, kept)
}

#[test]
fn criterion_12_size_reporting() {
    let t = Instant::now();
    let spec = ModelSpec::wide_resnet(16, 2, 100);
    let model = build_model(&spec, 12).unwrap();
    let full = MaskSet::for_model(&model);
    let masks = extract_mask(&rank_channels(&model, &full).unwrap(), &full, &PruneConfig::new(0.6, 1, Strategy::LthSad))
        .unwrap()
        .masks;
    let report = effective_size(&model, &masks).unwrap();
    let (total, kept) = recount_wrn(&spec, &masks);
    let recount = 1.0 - kept as f64 / total as f64;
    let pass = total == report.total_params
        && kept == report.surviving_params
        && (recount - report.reduction_fraction).abs() <= 1e-12;
    verdict(
        12,
        "size reporting",
        pass,
        &format!(
            "{} at channel sparsity {:.4}: {} of {} parameters survive, reduction {:.2}% (recount {:.2}%), claimed figure 45%",
            spec.label(),
            masks.cumulative_sparsity(),
            report.surviving_params,
            report.total_params,
            100.0 * report.reduction_fraction,
            100.0 * recount
        ),
        t,
    );
}

use crate::error::{Error, Result};
use crate::model::{FeatureMap, FeatureSet};

use super::head::{AttentionHead, AttentionMatrix};
use super::pool::{channel_mean, normalize};
use super::projection::ProjectionBank;

/// Attention loss with its gradients.
#[derive(Debug, Clone)]
pub struct AttentionTerm {
    pub loss: f64,
    pub alpha: AttentionMatrix,
    /// Batch-mean pooled distance for every (teacher, student) pair.
    pub distances: Vec<Vec<f64>>,
    /// Gradient w.r.t. each student tap, shaped like the tap.
    pub student_grads: Vec<FeatureMap>,
    pub head_grads: AttentionHead,
    pub bank_grads: ProjectionBank,
}

fn check_features(teacher: &FeatureSet, student: &FeatureSet) -> Result<()> {
    if !teacher.maps().chain(student.maps()).all(FeatureMap::is_finite) {
        return Err(Error::Numeric("attention loss received non-finite features".into()));
    }
    if teacher.is_empty() || student.is_empty() {
        return Err(Error::Structure("attention loss needs at least one tap per side".into()));
    }
    Ok(())
}

fn check_bank(teacher: &FeatureSet, student: &FeatureSet, bank: &ProjectionBank) -> Result<()> {
    let tc: Vec<usize> = teacher.maps().map(FeatureMap::channels).collect();
    let sc: Vec<usize> = student.maps().map(FeatureMap::channels).collect();
    if tc != bank.teacher_channels || sc != bank.student_channels {
        return Err(Error::Structure(format!(
            "projection bank covers teacher {:?} / student {:?}, features are {tc:?} / {sc:?}",
            bank.teacher_channels, bank.student_channels
        )));
    }
    if student.maps().chain(teacher.maps()).any(|f| f.batch() != teacher.get(0).batch()) {
        return Err(Error::Structure("teacher and student batches differ".into()));
    }
    Ok(())
}

struct PairSample {
    unit: Vec<f64>,
    norm: f64,
    diff: Vec<f64>,
    dist: f64,
}

fn pair_samples(t_units: &[Vec<f64>], z: Vec<Vec<f64>>) -> Vec<PairSample> {
    t_units
        .iter()
        .zip(z)
        .map(|(a, zb)| {
            let (unit, norm) = normalize(&zb);
            let diff: Vec<f64> = a.iter().zip(&unit).map(|(x, y)| x - y).collect();
            let dist = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
            PairSample { unit, norm, diff, dist }
        })
        .collect()
}

fn teacher_units(teacher: &FeatureSet) -> Vec<Vec<Vec<f64>>> {
    teacher
        .maps()
        .map(|f| channel_mean(f).iter().map(|v| normalize(v).0).collect())
        .collect()
}

/// Batch-mean distance between pooled, normalized teacher maps and projected
/// student maps for every (teacher, student) pair.
pub fn pair_distances(teacher: &FeatureSet, student: &FeatureSet, bank: &ProjectionBank) -> Result<Vec<Vec<f64>>> {
    check_features(teacher, student)?;
    check_bank(teacher, student, bank)?;
    let units = teacher_units(teacher);
    let b = teacher.get(0).batch() as f64;
    Ok((0..teacher.len())
        .map(|t| {
            (0..student.len())
                .map(|s| {
                    let z = bank.projected_mean(t, s, student.get(s), teacher.get(t));
                    pair_samples(&units[t], z).iter().map(|p| p.dist).sum::<f64>() / b
                })
                .collect()
        })
        .collect())
}

/// Σ_t Σ_s α[t][s] · batch-mean ‖pool(teacher_t) − pool(project(student_s))‖₂.
pub fn attention_loss(
    teacher: &FeatureSet,
    student: &FeatureSet,
    alpha: &AttentionMatrix,
    bank: &ProjectionBank,
) -> Result<f64> {
    if alpha.teacher_taps() != teacher.len() || alpha.student_taps() != student.len() {
        return Err(Error::Structure(format!(
            "attention matrix is {}x{}, features have {} teacher and {} student taps",
            alpha.teacher_taps(),
            alpha.student_taps(),
            teacher.len(),
            student.len()
        )));
    }
    let d = pair_distances(teacher, student, bank)?;
    Ok(alpha.rows().iter().zip(&d).map(|(a, r)| a.iter().zip(r).map(|(x, y)| x * y).sum::<f64>()).sum())
}

/// Evaluates the attention loss and back-propagates it into the student
/// taps, the head (through α), and the projection bank.
pub fn attention_term(
    teacher: &FeatureSet,
    student: &FeatureSet,
    head: &AttentionHead,
    bank: &ProjectionBank,
) -> Result<AttentionTerm> {
    check_features(teacher, student)?;
    check_bank(teacher, student, bank)?;
    let fwd = head.forward(teacher, student)?;
    let units = teacher_units(teacher);
    let batch = teacher.get(0).batch();
    let bf = batch as f64;
    let (n, m) = (teacher.len(), student.len());

    let mut samples = Vec::with_capacity(n);
    let mut distances = vec![vec![0.0; m]; n];
    for t in 0..n {
        let mut row = Vec::with_capacity(m);
        for s in 0..m {
            let z = bank.projected_mean(t, s, student.get(s), teacher.get(t));
            let ps = pair_samples(&units[t], z);
            distances[t][s] = ps.iter().map(|p| p.dist).sum::<f64>() / bf;
            row.push(ps);
        }
        samples.push(row);
    }
    let alpha = fwd.alpha.clone();
    let loss: f64 = (0..n).map(|t| (0..m).map(|s| alpha.get(t, s) * distances[t][s]).sum::<f64>()).sum();

    let mut student_grads: Vec<FeatureMap> = student.maps().map(|f| FeatureMap::zeros(f.shape())).collect();
    let mut bank_grads = bank.zeros_like();
    for t in 0..n {
        for s in 0..m {
            let w = alpha.get(t, s) / bf;
            let dz: Vec<Vec<f64>> = samples[t][s]
                .iter()
                .map(|p| {
                    if p.dist == 0.0 || p.norm == 0.0 {
                        return vec![0.0; p.unit.len()];
                    }
                    let g: Vec<f64> = p.diff.iter().map(|d| -d / p.dist).collect();
                    let ng: f64 = p.unit.iter().zip(&g).map(|(a, b)| a * b).sum();
                    g.iter().zip(&p.unit).map(|(gi, ui)| w * (gi - ui * ng) / p.norm).collect()
                })
                .collect();
            bank.projected_mean_backward(
                t,
                s,
                student.get(s),
                teacher.get(t),
                &dz,
                &mut bank_grads,
                student_grads[s].values_mut(),
            );
        }
    }

    let d_logits: Vec<Vec<f64>> = (0..n)
        .map(|t| {
            let mean: f64 = (0..m).map(|s| alpha.get(t, s) * distances[t][s]).sum();
            (0..m).map(|s| alpha.get(t, s) * (distances[t][s] - mean)).collect()
        })
        .collect();
    let mut head_grads = head.zeros_like();
    let d_desc = head.backward(&fwd, &d_logits, &mut head_grads);
    for (s, dd) in d_desc.iter().enumerate() {
        let f = student.get(s);
        let (h, w) = f.spatial();
        let plane = h * w;
        let scale = 1.0 / (bf * plane as f64);
        for sample in student_grads[s].values_mut().chunks_mut(dd.len() * plane) {
            for (dxc, g) in sample.chunks_mut(plane).zip(dd) {
                dxc.iter_mut().for_each(|v| *v += g * scale);
            }
        }
    }

    Ok(AttentionTerm {
        loss,
        alpha,
        distances,
        student_grads,
        head_grads,
        bank_grads,
    })
}

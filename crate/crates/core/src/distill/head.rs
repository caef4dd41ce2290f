use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FeatureSet;

use super::pool::gap_hw;

pub const DEFAULT_KEY_DIM: usize = 128;
const POSITIONAL_STD: f64 = 0.02;

/// Element-wise activation applied to queries or keys.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => f64::from(u8::from(x > 0.0)),
            Activation::Tanh => 1.0 - x.tanh().powi(2),
        }
    }
}

/// Learnable layer-matching parameters. Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    pub d: usize,
    pub teacher_channels: Vec<usize>,
    pub student_channels: Vec<usize>,
    /// One (d × C_t) matrix per teacher tap.
    pub w_q: Vec<Vec<f64>>,
    /// One (d × C_s) matrix per student tap.
    pub w_k: Vec<Vec<f64>>,
    /// One (d × d) bilinear form per student tap.
    pub w_qk: Vec<Vec<f64>>,
    pub p_t: Vec<Vec<f64>>,
    pub p_s: Vec<Vec<f64>>,
    pub f_q: Activation,
    pub f_k: Activation,
}

/// Row-stochastic matrix (teacher taps × student taps).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    rows: Vec<Vec<f64>>,
}

impl AttentionMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        AttentionMatrix { rows }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn get(&self, t: usize, s: usize) -> f64 {
        self.rows[t][s]
    }

    pub fn teacher_taps(&self) -> usize {
        self.rows.len()
    }

    pub fn student_taps(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

fn gaussian(rng: &mut ChaCha8Rng, len: usize, std: f64) -> Vec<f64> {
    let n = Normal::new(0.0, std).expect("positive std");
    (0..len).map(|_| n.sample(rng)).collect()
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn matvec(m: &[f64], rows: usize, x: &[f64]) -> Vec<f64> {
    m.chunks(x.len()).take(rows).map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn mat_t_vec(m: &[f64], cols: usize, y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (r, &g) in m.chunks(cols).zip(y) {
        for (o, a) in out.iter_mut().zip(r) {
            *o += a * g;
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Batch-averaged spatial means of every tap.
fn descriptors(feats: &FeatureSet) -> Vec<Vec<f64>> {
    feats
        .maps()
        .map(|f| {
            let g = gap_hw(f);
            let c = f.channels();
            let mut mean = vec![0.0; c];
            for row in g.values().chunks(c) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= f.batch() as f64);
            mean
        })
        .collect()
}

/// Intermediate values of one attention evaluation, kept for backward.
pub(crate) struct AttentionForward {
    pub alpha: AttentionMatrix,
    t_desc: Vec<Vec<f64>>,
    s_desc: Vec<Vec<f64>>,
    q_pre: Vec<Vec<f64>>,
    k_pre: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
}

impl AttentionHead {
    /// Random projections with 1/fan-in variance, identity bilinear forms,
    /// and small Gaussian positional encodings.
    pub fn new(teacher_channels: &[usize], student_channels: &[usize], d: usize, seed: u64) -> Result<Self> {
        if d == 0 || teacher_channels.is_empty() || student_channels.is_empty() {
            return Err(Error::Config("attention head needs d >= 1 and at least one tap per side".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let proj = |rng: &mut ChaCha8Rng, c: usize| gaussian(rng, d * c, (1.0 / c as f64).sqrt());
        let w_q = teacher_channels.iter().map(|&c| proj(&mut rng, c)).collect();
        let w_k = student_channels.iter().map(|&c| proj(&mut rng, c)).collect();
        let eye: Vec<f64> = (0..d * d).map(|i| f64::from(u8::from(i % (d + 1) == 0))).collect();
        let w_qk = vec![eye; student_channels.len()];
        let p_t = teacher_channels.iter().map(|_| gaussian(&mut rng, d, POSITIONAL_STD)).collect();
        let p_s = student_channels.iter().map(|_| gaussian(&mut rng, d, POSITIONAL_STD)).collect();
        Ok(AttentionHead {
            d,
            teacher_channels: teacher_channels.to_vec(),
            student_channels: student_channels.to_vec(),
            w_q,
            w_k,
            w_qk,
            p_t,
            p_s,
            f_q: Activation::Identity,
            f_k: Activation::Identity,
        })
    }

    pub fn teacher_taps(&self) -> usize {
        self.teacher_channels.len()
    }

    pub fn student_taps(&self) -> usize {
        self.student_channels.len()
    }

    /// Same layout, all zeros; used to accumulate gradients.
    pub fn zeros_like(&self) -> Self {
        let z = |v: &Vec<Vec<f64>>| v.iter().map(|x| vec![0.0; x.len()]).collect();
        AttentionHead {
            w_q: z(&self.w_q),
            w_k: z(&self.w_k),
            w_qk: z(&self.w_qk),
            p_t: z(&self.p_t),
            p_s: z(&self.p_s),
            ..self.clone()
        }
    }

    /// Every parameter array in a fixed order.
    pub fn arrays(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.w_q.iter().chain(&self.w_k).chain(&self.w_qk).chain(&self.p_t).chain(&self.p_s)
    }

    pub fn arrays_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.w_q
            .iter_mut()
            .chain(&mut self.w_k)
            .chain(&mut self.w_qk)
            .chain(&mut self.p_t)
            .chain(&mut self.p_s)
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().flatten().all(|v| v.is_finite())
    }

    pub(crate) fn check(&self, teacher: &FeatureSet, student: &FeatureSet) -> Result<()> {
        let tc: Vec<usize> = teacher.maps().map(|f| f.channels()).collect();
        let sc: Vec<usize> = student.maps().map(|f| f.channels()).collect();
        if tc != self.teacher_channels || sc != self.student_channels {
            return Err(Error::Structure(format!(
                "attention head expects teacher taps {:?} and student taps {:?}, got {tc:?} and {sc:?}",
                self.teacher_channels, self.student_channels
            )));
        }
        Ok(())
    }

    pub(crate) fn forward(&self, teacher: &FeatureSet, student: &FeatureSet) -> Result<AttentionForward> {
        self.check(teacher, student)?;
        let t_desc = descriptors(teacher);
        let s_desc = descriptors(student);
        let q_pre: Vec<Vec<f64>> = t_desc.iter().zip(&self.w_q).map(|(g, w)| matvec(w, self.d, g)).collect();
        let k_pre: Vec<Vec<f64>> = s_desc.iter().zip(&self.w_k).map(|(g, w)| matvec(w, self.d, g)).collect();
        let q: Vec<Vec<f64>> = q_pre.iter().map(|v| v.iter().map(|&x| self.f_q.apply(x)).collect()).collect();
        let k: Vec<Vec<f64>> = k_pre.iter().map(|v| v.iter().map(|&x| self.f_k.apply(x)).collect()).collect();
        let logits = self.logits_from(&q, &k);
        let alpha = AttentionMatrix::from_rows(logits.iter().map(|r| softmax(r)).collect());
        Ok(AttentionForward {
            alpha,
            t_desc,
            s_desc,
            q_pre,
            k_pre,
            q,
            k,
        })
    }

    fn logits_from(&self, q: &[Vec<f64>], k: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let scale = (self.d as f64).sqrt();
        q.iter()
            .zip(&self.p_t)
            .map(|(qt, pt)| {
                k.iter()
                    .zip(&self.w_qk)
                    .zip(&self.p_s)
                    .map(|((ks, w), ps)| (dot(qt, &matvec(w, self.d, ks)) + dot(pt, ps)) / scale)
                    .collect()
            })
            .collect()
    }

    /// Scaled logits before the row softmax.
    pub fn logits(&self, teacher: &FeatureSet, student: &FeatureSet) -> Result<Vec<Vec<f64>>> {
        let fwd = self.forward(teacher, student)?;
        Ok(self.logits_from(&fwd.q, &fwd.k))
    }

    /// Back-propagates `d_logits` (gradient w.r.t. the scaled logits).
    /// Parameter gradients are added to `grads`; the returned vectors are
    /// gradients w.r.t. each student tap's batch-mean channel descriptor.
    pub(crate) fn backward(&self, fwd: &AttentionForward, d_logits: &[Vec<f64>], grads: &mut AttentionHead) -> Vec<Vec<f64>> {
        let d = self.d;
        let scale = (d as f64).sqrt();
        let mut dq: Vec<Vec<f64>> = fwd.q.iter().map(|v| vec![0.0; v.len()]).collect();
        let mut dk: Vec<Vec<f64>> = fwd.k.iter().map(|v| vec![0.0; v.len()]).collect();
        for (t, row) in d_logits.iter().enumerate() {
            for (s, &dl) in row.iter().enumerate() {
                let g = dl / scale;
                if g == 0.0 {
                    continue;
                }
                let w = &self.w_qk[s];
                let (qt, ks) = (&fwd.q[t], &fwd.k[s]);
                let wk = matvec(w, d, ks);
                let wtq = mat_t_vec(w, d, qt);
                for i in 0..d {
                    dq[t][i] += g * wk[i];
                    dk[s][i] += g * wtq[i];
                    grads.p_t[t][i] += g * self.p_s[s][i];
                    grads.p_s[s][i] += g * self.p_t[t][i];
                }
                let gw = &mut grads.w_qk[s];
                for i in 0..d {
                    let gq = g * qt[i];
                    for j in 0..d {
                        gw[i * d + j] += gq * ks[j];
                    }
                }
            }
        }
        for t in 0..dq.len() {
            let pre: Vec<f64> = dq[t].iter().zip(&fwd.q_pre[t]).map(|(g, &x)| g * self.f_q.derivative(x)).collect();
            outer_add(&mut grads.w_q[t], &pre, &fwd.t_desc[t]);
        }
        dk.iter()
            .enumerate()
            .map(|(s, dks)| {
                let pre: Vec<f64> = dks.iter().zip(&fwd.k_pre[s]).map(|(g, &x)| g * self.f_k.derivative(x)).collect();
                outer_add(&mut grads.w_k[s], &pre, &fwd.s_desc[s]);
                mat_t_vec(&self.w_k[s], fwd.s_desc[s].len(), &pre)
            })
            .collect()
    }
}

fn outer_add(dst: &mut [f64], rows: &[f64], cols: &[f64]) {
    for (r, &a) in dst.chunks_mut(cols.len()).zip(rows) {
        for (o, &b) in r.iter_mut().zip(cols) {
            *o += a * b;
        }
    }
}

/// Row-softmax layer affinities between teacher and student taps.
pub fn attention_weights(teacher: &FeatureSet, student: &FeatureSet, head: &AttentionHead) -> Result<AttentionMatrix> {
    Ok(head.forward(teacher, student)?.alpha)
}

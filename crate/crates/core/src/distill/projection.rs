use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::FeatureMap;

use super::pool::gap_hw;
use super::resize::BilinearResize;

/// One 1×1 channel projection (teacher channels × student channels,
/// row-major) per (teacher tap, student tap) pair. Spatial geometry is
/// matched by bilinear resizing to the teacher tap's height and width.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBank {
    pub teacher_channels: Vec<usize>,
    pub student_channels: Vec<usize>,
    pub weights: Vec<Vec<Vec<f64>>>,
}

impl ProjectionBank {
    pub fn new(teacher_channels: &[usize], student_channels: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = teacher_channels
            .iter()
            .map(|&ct| {
                student_channels
                    .iter()
                    .map(|&cs| {
                        let n = Normal::new(0.0, (1.0 / cs as f64).sqrt()).expect("positive std");
                        (0..ct * cs).map(|_| n.sample(&mut rng)).collect()
                    })
                    .collect()
            })
            .collect();
        ProjectionBank {
            teacher_channels: teacher_channels.to_vec(),
            student_channels: student_channels.to_vec(),
            weights,
        }
    }

    pub fn zeros_like(&self) -> Self {
        ProjectionBank {
            weights: self
                .weights
                .iter()
                .map(|r| r.iter().map(|w| vec![0.0; w.len()]).collect())
                .collect(),
            ..self.clone()
        }
    }

    pub fn weight(&self, t: usize, s: usize) -> &[f64] {
        &self.weights[t][s]
    }

    pub fn arrays(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.weights.iter().flatten()
    }

    pub fn arrays_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.weights.iter_mut().flatten()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().flatten().all(|v| v.is_finite())
    }

    fn check_pair(&self, t: usize, s: usize, teacher: &FeatureMap, student: &FeatureMap) -> Result<()> {
        let ok = t < self.teacher_channels.len()
            && s < self.student_channels.len()
            && teacher.channels() == self.teacher_channels[t]
            && student.channels() == self.student_channels[s]
            && teacher.batch() == student.batch();
        if ok {
            Ok(())
        } else {
            Err(Error::Structure(format!(
                "projection ({t}, {s}) does not fit teacher {:?} / student {:?}",
                teacher.shape(),
                student.shape()
            )))
        }
    }

    /// Student map expressed in the teacher tap's geometry: same channel
    /// count and, for 4-axis teachers, same height and width.
    pub fn project(&self, t: usize, s: usize, student: &FeatureMap, teacher: &FeatureMap) -> Result<FeatureMap> {
        self.check_pair(t, s, teacher, student)?;
        let w = &self.weights[t][s];
        let (b, ct, cs) = (student.batch(), teacher.channels(), student.channels());
        if !teacher.is_spatial() {
            let g = gap_hw(student);
            let mut out = Vec::with_capacity(b * ct);
            for gx in g.values().chunks(cs) {
                for row in w.chunks(cs) {
                    out.push(row.iter().zip(gx).map(|(a, x)| a * x).sum());
                }
            }
            return FeatureMap::new(vec![b, ct], out);
        }
        let (sh, sw) = student.spatial();
        let (th, tw) = teacher.spatial();
        let resize = BilinearResize::new((sh, sw), (th, tw));
        let plane = sh * sw;
        let mut out = Vec::with_capacity(b * ct * th * tw);
        for xb in student.values().chunks(cs * plane) {
            for row in w.chunks(cs) {
                let mut mixed = vec![0.0; plane];
                for (a, xc) in row.iter().zip(xb.chunks(plane)) {
                    for (m, x) in mixed.iter_mut().zip(xc) {
                        *m += a * x;
                    }
                }
                out.extend(resize.apply(&mixed));
            }
        }
        FeatureMap::new(vec![b, ct, th, tw], out)
    }

    /// Channel mean of [`ProjectionBank::project`] per sample, computed
    /// without materialising every projected channel.
    pub(crate) fn projected_mean(&self, t: usize, s: usize, student: &FeatureMap, teacher: &FeatureMap) -> Vec<Vec<f64>> {
        let w = &self.weights[t][s];
        let (ct, cs) = (teacher.channels(), student.channels());
        if !teacher.is_spatial() {
            let g = gap_hw(student);
            return g
                .values()
                .chunks(cs)
                .map(|gx| w.chunks(cs).map(|row| row.iter().zip(gx).map(|(a, x)| a * x).sum()).collect())
                .collect();
        }
        let v = column_mean(w, ct, cs);
        let (sh, sw) = student.spatial();
        let resize = BilinearResize::new((sh, sw), teacher.spatial());
        let plane = sh * sw;
        student
            .values()
            .chunks(cs * plane)
            .map(|xb| {
                let mut mixed = vec![0.0; plane];
                for (a, xc) in v.iter().zip(xb.chunks(plane)) {
                    for (m, x) in mixed.iter_mut().zip(xc) {
                        *m += a * x;
                    }
                }
                resize.apply(&mixed)
            })
            .collect()
    }

    /// Adjoint of [`ProjectionBank::projected_mean`]: accumulates the weight
    /// gradient into `grads` and the student-map gradient into `d_student`.
    pub(crate) fn projected_mean_backward(
        &self,
        t: usize,
        s: usize,
        student: &FeatureMap,
        teacher: &FeatureMap,
        dz: &[Vec<f64>],
        grads: &mut ProjectionBank,
        d_student: &mut [f64],
    ) {
        let w = &self.weights[t][s];
        let gw = &mut grads.weights[t][s];
        let (ct, cs) = (teacher.channels(), student.channels());
        let (sh, sw) = student.spatial();
        let plane = sh * sw;
        let xs = student.values().chunks(cs * plane);
        let dxs = d_student.chunks_mut(cs * plane);
        if !teacher.is_spatial() {
            for ((xb, dxb), dzb) in xs.zip(dxs).zip(dz) {
                let gx: Vec<f64> = xb.chunks(plane).map(|p| p.iter().sum::<f64>() / plane as f64).collect();
                let mut dgx = vec![0.0; cs];
                for ((row, grow), &g) in w.chunks(cs).zip(gw.chunks_mut(cs)).zip(dzb) {
                    for c in 0..cs {
                        grow[c] += g * gx[c];
                        dgx[c] += g * row[c];
                    }
                }
                for (dxc, g) in dxb.chunks_mut(plane).zip(&dgx) {
                    dxc.iter_mut().for_each(|d| *d += g / plane as f64);
                }
            }
            return;
        }
        let v = column_mean(w, ct, cs);
        let resize = BilinearResize::new((sh, sw), teacher.spatial());
        let mut dv = vec![0.0; cs];
        for ((xb, dxb), dzb) in xs.zip(dxs).zip(dz) {
            let dy = resize.adjoint(dzb);
            for c in 0..cs {
                let xc = &xb[c * plane..(c + 1) * plane];
                dv[c] += xc.iter().zip(&dy).map(|(x, g)| x * g).sum::<f64>();
                for (d, g) in dxb[c * plane..(c + 1) * plane].iter_mut().zip(&dy) {
                    *d += v[c] * g;
                }
            }
        }
        for grow in gw.chunks_mut(cs) {
            for (g, d) in grow.iter_mut().zip(&dv) {
                *g += d / ct as f64;
            }
        }
    }
}

fn column_mean(w: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut v = vec![0.0; cols];
    for row in w.chunks(cols) {
        for (a, b) in v.iter_mut().zip(row) {
            *a += b;
        }
    }
    v.iter_mut().for_each(|a| *a /= rows as f64);
    v
}

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::head::softmax;

fn rows(t: &Tensor) -> impl Iterator<Item = Vec<f64>> + '_ {
    let c = t.dim(1);
    t.data().chunks(c).map(|r| r.iter().map(|&v| v as f64).collect())
}

/// Mean cross-entropy and its gradient `(softmax − onehot) / B`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, c) = (logits.dim(0), logits.dim(1));
    if labels.len() != b {
        return Err(Error::Shape {
            expected: format!("{b} labels"),
            got: format!("{}", labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Shape {
            expected: format!("labels below {c}"),
            got: format!("label {bad}"),
        });
    }
    let mut grad = Vec::with_capacity(b * c);
    let mut loss = 0.0;
    for (row, &y) in rows(logits).zip(labels) {
        let p = softmax(&row);
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        grad.extend(p.iter().enumerate().map(|(i, &pi)| ((pi - f64::from(u8::from(i == y))) / b as f64) as f32));
    }
    Ok((loss / b as f64, Tensor::from_vec(&[b, c], grad)?))
}

/// Mean squared error of (B, 1) predictions and its gradient `2(ŷ − y) / B`.
pub fn mse_loss(pred: &Tensor, target: &[f32]) -> Result<(f64, Tensor)> {
    if pred.len() != target.len() || pred.dim(0) != target.len() {
        return Err(Error::Shape {
            expected: format!("{} targets", pred.dim(0)),
            got: format!("{}", target.len()),
        });
    }
    let b = target.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let e = p as f64 - y as f64;
            loss += e * e;
            (2.0 * e / b) as f32
        })
        .collect();
    Ok((loss / b, Tensor::from_vec(pred.shape(), grad)?))
}

/// Temperature-softened KL(teacher ‖ student) scaled by T², with the
/// gradient w.r.t. the student logits `T (p_S − p_T) / B`.
pub fn soft_target(teacher: &Tensor, student: &Tensor, temperature: f64) -> Result<(f64, Tensor)> {
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    if teacher.shape() != student.shape() || teacher.ndim() != 2 {
        return Err(Error::Shape {
            expected: format!("{:?}", student.shape()),
            got: format!("{:?}", teacher.shape()),
        });
    }
    let b = student.dim(0) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(student.len());
    for (tr, sr) in rows(teacher).zip(rows(student)) {
        let pt = softmax(&tr.iter().map(|v| v / temperature).collect::<Vec<_>>());
        let ps = softmax(&sr.iter().map(|v| v / temperature).collect::<Vec<_>>());
        for (a, q) in pt.iter().zip(&ps) {
            if *a > 0.0 {
                loss += a * (a.ln() - q.max(f64::MIN_POSITIVE).ln());
            }
        }
        grad.extend(ps.iter().zip(&pt).map(|(q, a)| (temperature * (q - a) / b) as f32));
    }
    Ok((loss * temperature * temperature / b, Tensor::from_vec(student.shape(), grad)?))
}

pub fn soft_target_loss(teacher: &Tensor, student: &Tensor, temperature: f64) -> Result<f64> {
    soft_target(teacher, student, temperature).map(|(l, _)| l)
}

/// `(1 − alpha_kd)·class + alpha_kd·kd + beta·att`.
pub fn student_loss(class_loss: f64, att_loss: f64, kd_loss: f64, beta: f64, alpha_kd: f64) -> Result<f64> {
    if beta < 0.0 || !beta.is_finite() {
        return Err(Error::Config(format!("beta must be non-negative, got {beta}")));
    }
    if !(0.0..=1.0).contains(&alpha_kd) {
        return Err(Error::Config(format!("alpha_kd must lie in [0, 1], got {alpha_kd}")));
    }
    if ![class_loss, att_loss, kd_loss].iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("loss components must be finite".into()));
    }
    Ok((1.0 - alpha_kd) * class_loss + alpha_kd * kd_loss + beta * att_loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f32]) -> Tensor {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn degenerate_weights_return_class_loss() {
        assert_eq!(student_loss(1.234, 9.0, 7.0, 0.0, 0.0).unwrap(), 1.234);
    }

    #[test]
    fn weighted_sum_by_hand() {
        assert_eq!(student_loss(1.0, 0.5, 2.0, 2.0, 0.5).unwrap(), 2.5);
    }

    #[test]
    fn invalid_weights_are_config_errors() {
        assert!(matches!(student_loss(1.0, 1.0, 1.0, -1.0, 0.0), Err(Error::Config(_))));
        assert!(matches!(student_loss(1.0, 1.0, 1.0, 1.0, 1.5), Err(Error::Config(_))));
    }

    #[test]
    fn identical_logits_have_no_divergence() {
        let l = t(&[2, 3], &[1.0, -2.0, 0.5, 3.0, 0.0, 0.1]);
        assert!(soft_target_loss(&l, &l, 4.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn two_class_divergence_matches_formula() {
        let tl = t(&[1, 2], &[1.0, 0.0]);
        let sl = t(&[1, 2], &[0.0, 0.5]);
        let p = 1.0f64.exp() / (1.0f64.exp() + 1.0);
        let q = 1.0 / (1.0 + 0.5f64.exp());
        let kl = p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
        assert!((soft_target_loss(&tl, &sl, 1.0).unwrap() - kl).abs() < 1e-9);
    }

    #[test]
    fn non_positive_temperature_rejected() {
        let l = t(&[1, 2], &[0.0, 1.0]);
        assert!(matches!(soft_target_loss(&l, &l, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn soft_target_gradient_matches_finite_differences() {
        let tl = t(&[2, 3], &[0.3, -1.0, 2.0, 0.0, 0.4, -0.2]);
        let sv = [1.0f32, 0.2, -0.5, -0.3, 0.8, 0.1];
        let (_, g) = soft_target(&tl, &t(&[2, 3], &sv), 4.0).unwrap();
        for i in 0..6 {
            let h = 1e-2f32;
            let mut p = sv;
            p[i] += h;
            let mut m = sv;
            m[i] -= h;
            let fd = (soft_target_loss(&tl, &t(&[2, 3], &p), 4.0).unwrap()
                - soft_target_loss(&tl, &t(&[2, 3], &m), 4.0).unwrap())
                / (2.0 * h as f64);
            assert!((fd - g.data()[i] as f64).abs() < 1e-4, "{i}: {fd} vs {}", g.data()[i]);
        }
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let (l, g) = cross_entropy(&t(&[1, 4], &[0.0; 4]), &[2]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!((g.data()[2] + 0.75).abs() < 1e-7);
        assert!(cross_entropy(&t(&[1, 4], &[0.0; 4]), &[4]).is_err());
    }

    #[test]
    fn mse_matches_hand_values() {
        let (l, g) = mse_loss(&t(&[2, 1], &[2.0, 4.0]), &[1.0, 2.0]).unwrap();
        assert_eq!(l, 2.5);
        assert_eq!(g.data(), &[1.0, 2.0]);
    }
}

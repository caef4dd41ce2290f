//! Evaluation metrics.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::Empty("metric needs at least one element".into()));
    }
    if a != b {
        return Err(Error::Shape {
            expected: format!("{a} elements"),
            got: format!("{b}"),
        });
    }
    Ok(())
}

/// Fraction of exact matches.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(predictions.len(), labels.len())?;
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y.len(), y_hat.len())?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y.len(), y_hat.len())?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

/// Row-wise argmax of a (batch, classes) logit tensor; the first maximum wins.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    logits
        .data()
        .chunks(logits.dim(1))
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

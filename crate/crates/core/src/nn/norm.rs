//! Batch normalization over the channel axis of (B, C, ...) tensors.

use crate::tensor::Tensor;

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// Saved activations for the backward pass plus the batch statistics used
/// to update running buffers.
#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
    pub batch_mean: Vec<f32>,
    pub batch_var_unbiased: Vec<f32>,
}

fn layout(x: &Tensor) -> (usize, usize, usize) {
    let b = x.dim(0);
    let c = x.dim(1);
    (b, c, x.len() / (b * c))
}

pub fn forward_train(x: &Tensor, gamma: &[f32], beta: &[f32]) -> (Tensor, BnCache) {
    let (b, c, hw) = layout(x);
    let n = (b * hw) as f64;
    let mut mean = vec![0.0f32; c];
    let mut var = vec![0.0f32; c];
    let mut var_unbiased = vec![0.0f32; c];
    let xd = x.data();
    for ch in 0..c {
        let mut s = 0.0f64;
        for s_i in 0..b {
            let base = (s_i * c + ch) * hw;
            s += xd[base..base + hw].iter().map(|&v| v as f64).sum::<f64>();
        }
        let m = s / n;
        let mut ss = 0.0f64;
        for s_i in 0..b {
            let base = (s_i * c + ch) * hw;
            ss += xd[base..base + hw]
                .iter()
                .map(|&v| {
                    let d = v as f64 - m;
                    d * d
                })
                .sum::<f64>();
        }
        mean[ch] = m as f32;
        var[ch] = (ss / n) as f32;
        var_unbiased[ch] = if n > 1.0 { (ss / (n - 1.0)) as f32 } else { 0.0 };
    }
    let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0f32; x.len()];
    let mut y = Tensor::zeros(x.shape());
    let yd = y.data_mut();
    for s_i in 0..b {
        for ch in 0..c {
            let base = (s_i * c + ch) * hw;
            let (m, is, g, bt) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            for i in base..base + hw {
                let h = (xd[i] - m) * is;
                xhat[i] = h;
                yd[i] = g * h + bt;
            }
        }
    }
    (
        y,
        BnCache {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var_unbiased: var_unbiased,
        },
    )
}

pub fn forward_eval(x: &Tensor, gamma: &[f32], beta: &[f32], mean: &[f32], var: &[f32]) -> Tensor {
    let (b, c, hw) = layout(x);
    let mut y = Tensor::zeros(x.shape());
    let xd = x.data();
    let yd = y.data_mut();
    for s_i in 0..b {
        for ch in 0..c {
            let scale = gamma[ch] / (var[ch] + BN_EPS).sqrt();
            let shift = beta[ch] - mean[ch] * scale;
            let base = (s_i * c + ch) * hw;
            for i in base..base + hw {
                yd[i] = xd[i] * scale + shift;
            }
        }
    }
    y
}

/// Exponential moving update of running statistics.
pub fn update_running(cache: &BnCache, running_mean: &mut [f32], running_var: &mut [f32]) {
    for ch in 0..running_mean.len() {
        running_mean[ch] = (1.0 - BN_MOMENTUM) * running_mean[ch] + BN_MOMENTUM * cache.batch_mean[ch];
        running_var[ch] =
            (1.0 - BN_MOMENTUM) * running_var[ch] + BN_MOMENTUM * cache.batch_var_unbiased[ch];
    }
}

pub fn backward(
    dy: &Tensor,
    cache: &BnCache,
    gamma: &[f32],
    dgamma: &mut [f32],
    dbeta: &mut [f32],
) -> Tensor {
    let (b, c, hw) = layout(dy);
    let n = (b * hw) as f32;
    let dyd = dy.data();
    let mut sum_dy = vec![0.0f64; c];
    let mut sum_dy_xhat = vec![0.0f64; c];
    for s_i in 0..b {
        for ch in 0..c {
            let base = (s_i * c + ch) * hw;
            for i in base..base + hw {
                sum_dy[ch] += dyd[i] as f64;
                sum_dy_xhat[ch] += (dyd[i] * cache.xhat[i]) as f64;
            }
        }
    }
    for ch in 0..c {
        dgamma[ch] += sum_dy_xhat[ch] as f32;
        dbeta[ch] += sum_dy[ch] as f32;
    }
    let mut dx = Tensor::zeros(dy.shape());
    let dxd = dx.data_mut();
    for s_i in 0..b {
        for ch in 0..c {
            let k = gamma[ch] * cache.inv_std[ch] / n;
            let (sd, sdx) = (sum_dy[ch] as f32, sum_dy_xhat[ch] as f32);
            let base = (s_i * c + ch) * hw;
            for i in base..base + hw {
                dxd[i] = k * (n * dyd[i] - sd - cache.xhat[i] * sdx);
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss(y: &Tensor, w: &[f32]) -> f64 {
        y.data().iter().zip(w).map(|(a, b)| (a * b) as f64).sum()
    }

    #[test]
    fn normalized_output_has_zero_mean_unit_variance() {
        let x = Tensor::from_vec(&[4, 2, 3], (0..24).map(|i| (i as f32 * 0.7).sin() * 3.0 + 1.0).collect()).unwrap();
        let (y, _) = forward_train(&x, &[1.0, 1.0], &[0.0, 0.0]);
        for ch in 0..2 {
            let vals: Vec<f32> = (0..4).flat_map(|s| y.data()[(s * 2 + ch) * 3..(s * 2 + ch) * 3 + 3].to_vec()).collect();
            let m: f32 = vals.iter().sum::<f32>() / 12.0;
            let v: f32 = vals.iter().map(|a| (a - m) * (a - m)).sum::<f32>() / 12.0;
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let data: Vec<f32> = (0..24).map(|i| (i as f32 * 0.91).sin() * 2.0).collect();
        let x = Tensor::from_vec(&[3, 2, 4], data).unwrap();
        let gamma = [1.3f32, 0.7];
        let beta = [0.2f32, -0.4];
        let w: Vec<f32> = (0..24).map(|i| (i as f32 * 0.37).cos()).collect();
        let (_, cache) = forward_train(&x, &gamma, &beta);
        let dy = Tensor::from_vec(x.shape(), w.clone()).unwrap();
        let mut dg = [0.0; 2];
        let mut db = [0.0; 2];
        let dx = backward(&dy, &cache, &gamma, &mut dg, &mut db);
        let h = 1e-2f32;
        for i in [0usize, 5, 13, 22] {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&forward_train(&xp, &gamma, &beta).0, &w)
                - loss(&forward_train(&xm, &gamma, &beta).0, &w))
                / (2.0 * h as f64);
            assert!((fd - dx.data()[i] as f64).abs() < 2e-2, "{fd} vs {}", dx.data()[i]);
        }
    }
}

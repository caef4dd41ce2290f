use crate::tensor::Tensor;

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    y
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(out: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (g, o) in dx.data_mut().iter_mut().zip(out.data()) {
        if *o <= 0.0 {
            *g = 0.0;
        }
    }
    dx
}

/// (B, C, H, W) -> (B, C) spatial mean.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let (b, c) = (x.dim(0), x.dim(1));
    let hw = x.len() / (b * c);
    let mut y = Tensor::zeros(&[b, c]);
    for (dst, src) in y.data_mut().iter_mut().zip(x.data().chunks(hw)) {
        *dst = src.iter().sum::<f32>() / hw as f32;
    }
    y
}

pub fn global_avg_pool_backward(dy: &Tensor, shape: &[usize]) -> Tensor {
    let hw: usize = shape[2..].iter().product();
    let mut dx = Tensor::zeros(shape);
    let scale = 1.0 / hw as f32;
    for (dst, g) in dx.data_mut().chunks_mut(hw).zip(dy.data()) {
        dst.fill(g * scale);
    }
    dx
}

//! Fully connected layer `y = x W^T + b` with W stored (out, in).

use crate::tensor::{gemm, Tensor};

pub fn forward(x: &Tensor, weight: &[f32], bias: &[f32], out_dim: usize) -> Tensor {
    let (b, in_dim) = (x.dim(0), x.dim(1));
    let mut y = Tensor::zeros(&[b, out_dim]);
    {
        let yd = y.data_mut();
        for row in yd.chunks_mut(out_dim) {
            row.copy_from_slice(bias);
        }
    }
    gemm(b, in_dim, out_dim, 1.0, x.data(), false, weight, true, 1.0, y.data_mut());
    y
}

pub fn backward(
    x: &Tensor,
    weight: &[f32],
    dy: &Tensor,
    dweight: &mut [f32],
    dbias: &mut [f32],
) -> Tensor {
    let (b, in_dim) = (x.dim(0), x.dim(1));
    let out_dim = dy.dim(1);
    gemm(out_dim, b, in_dim, 1.0, dy.data(), true, x.data(), false, 1.0, dweight);
    for row in dy.data().chunks(out_dim) {
        for (g, v) in dbias.iter_mut().zip(row) {
            *g += *v;
        }
    }
    let mut dx = Tensor::zeros(&[b, in_dim]);
    gemm(b, out_dim, in_dim, 1.0, dy.data(), false, weight, false, 0.0, dx.data_mut());
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_and_backward_on_hand_example() {
        let x = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = [1.0, 0.0, 0.5, -1.0, 2.0, 3.0];
        let b = [0.1, 0.2, 0.3];
        let y = forward(&x, &w, &b, 3);
        assert_eq!(y.data(), &[1.1, -1.3, 8.3]);
        let dy = Tensor::from_vec(&[1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        let mut dw = [0.0; 6];
        let mut db = [0.0; 3];
        let dx = backward(&x, &w, &dy, &mut dw, &mut db);
        assert_eq!(dw, [1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(db, [1.0, 1.0, 1.0]);
        assert_eq!(dx.data(), &[3.5, 2.0]);
    }
}

//! 2-D convolution via im2col + GEMM, NCHW layout, no bias.

use crate::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        ConvGeom {
            c_in,
            c_out,
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    /// Elements per output filter.
    pub fn filter_len(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.filter_len()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(x: &[f32], h: usize, w: usize, g: &ConvGeom, ho: usize, wo: usize, cols: &mut [f32]) {
    let k = g.kernel;
    let plane = ho * wo;
    for c in 0..g.c_in {
        let xc = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let seg = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        seg.fill(0.0);
                        continue;
                    }
                    let xrow = &xc[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in seg.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            xrow[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f32], h: usize, w: usize, g: &ConvGeom, ho: usize, wo: usize, dx: &mut [f32]) {
    let k = g.kernel;
    let plane = ho * wo;
    for c in 0..g.c_in {
        let dxc = &mut dx[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut dxc[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in src[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            drow[ix as usize] += *v;
                        }
                    }
                }
            }
        }
    }
}

/// `x`: (B, c_in, H, W); `weight`: (c_out, c_in, k, k). Returns (B, c_out, Ho, Wo).
pub fn conv2d_forward(x: &Tensor, weight: &[f32], g: &ConvGeom) -> Tensor {
    let (b, h, w) = (x.dim(0), x.dim(2), x.dim(3));
    debug_assert_eq!(x.dim(1), g.c_in);
    let (ho, wo) = g.out_hw(h, w);
    let plane = ho * wo;
    let mut y = Tensor::zeros(&[b, g.c_out, ho, wo]);
    let kl = g.filter_len();
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; kl * plane]
    };
    let in_len = g.c_in * h * w;
    let out_len = g.c_out * plane;
    for s in 0..b {
        let xs = &x.data()[s * in_len..(s + 1) * in_len];
        let ys = &mut y.data_mut()[s * out_len..(s + 1) * out_len];
        if g.is_pointwise() {
            gemm(g.c_out, kl, plane, 1.0, weight, false, xs, false, 0.0, ys);
        } else {
            im2col(xs, h, w, g, ho, wo, &mut cols);
            gemm(g.c_out, kl, plane, 1.0, weight, false, &cols, false, 0.0, ys);
        }
    }
    y
}

/// Accumulates the weight gradient into `dweight` and returns the input
/// gradient when `need_dx`.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &[f32],
    dy: &Tensor,
    g: &ConvGeom,
    dweight: &mut [f32],
    need_dx: bool,
) -> Option<Tensor> {
    let (b, h, w) = (x.dim(0), x.dim(2), x.dim(3));
    let (ho, wo) = g.out_hw(h, w);
    let plane = ho * wo;
    let kl = g.filter_len();
    let in_len = g.c_in * h * w;
    let out_len = g.c_out * plane;
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise {
        Vec::new()
    } else {
        vec![0.0; kl * plane]
    };
    let mut dcols = vec![0.0; if pointwise { 0 } else { kl * plane }];
    for s in 0..b {
        let xs = &x.data()[s * in_len..(s + 1) * in_len];
        let dys = &dy.data()[s * out_len..(s + 1) * out_len];
        if pointwise {
            gemm(g.c_out, plane, kl, 1.0, dys, false, xs, true, 1.0, dweight);
            if let Some(dx) = dx.as_mut() {
                let dxs = &mut dx.data_mut()[s * in_len..(s + 1) * in_len];
                gemm(kl, g.c_out, plane, 1.0, weight, true, dys, false, 0.0, dxs);
            }
        } else {
            im2col(xs, h, w, g, ho, wo, &mut cols);
            gemm(g.c_out, plane, kl, 1.0, dys, false, &cols, true, 1.0, dweight);
            if let Some(dx) = dx.as_mut() {
                gemm(kl, g.c_out, plane, 1.0, weight, true, dys, false, 0.0, &mut dcols);
                let dxs = &mut dx.data_mut()[s * in_len..(s + 1) * in_len];
                col2im(&dcols, h, w, g, ho, wo, dxs);
            }
        }
    }
    dx
}

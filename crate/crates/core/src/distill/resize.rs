/// Bilinear interpolation between two grids using half-pixel centres
/// (source coordinate `(dst + 0.5) * in / out - 0.5`, clamped at the border).
/// The map is linear, so it is stored as sparse taps per output pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearResize {
    src: (usize, usize),
    dst: (usize, usize),
    taps: Vec<[(usize, f64); 4]>,
}

fn axis(in_len: usize, out_len: usize, o: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (s.floor() as usize).min(in_len - 1);
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, s - i0 as f64)
}

impl BilinearResize {
    pub fn new(src: (usize, usize), dst: (usize, usize)) -> Self {
        let mut taps = Vec::with_capacity(dst.0 * dst.1);
        for oy in 0..dst.0 {
            let (y0, y1, ly) = axis(src.0, dst.0, oy);
            for ox in 0..dst.1 {
                let (x0, x1, lx) = axis(src.1, dst.1, ox);
                taps.push([
                    (y0 * src.1 + x0, (1.0 - ly) * (1.0 - lx)),
                    (y0 * src.1 + x1, (1.0 - ly) * lx),
                    (y1 * src.1 + x0, ly * (1.0 - lx)),
                    (y1 * src.1 + x1, ly * lx),
                ]);
            }
        }
        BilinearResize { src, dst, taps }
    }

    pub fn src(&self) -> (usize, usize) {
        self.src
    }

    pub fn dst(&self) -> (usize, usize) {
        self.dst
    }

    pub fn apply(&self, plane: &[f64]) -> Vec<f64> {
        self.taps
            .iter()
            .map(|t| t.iter().map(|&(i, w)| plane[i] * w).sum())
            .collect()
    }

    /// Transpose of [`BilinearResize::apply`].
    pub fn adjoint(&self, grad: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.src.0 * self.src.1];
        for (t, g) in self.taps.iter().zip(grad) {
            for &(i, w) in t {
                out[i] += w * g;
            }
        }
        out
    }
}

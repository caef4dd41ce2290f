//! Spatial and channel pooling descriptors.

use crate::model::FeatureMap;

/// Per-sample, per-channel mean over height and width: (batch, channels).
/// A 2-axis map is treated as having a 1×1 spatial extent.
pub fn gap_hw(f: &FeatureMap) -> FeatureMap {
    let (b, c) = (f.batch(), f.channels());
    let (h, w) = f.spatial();
    let plane = h * w;
    let values = f
        .values()
        .chunks(plane)
        .map(|p| p.iter().sum::<f64>() / plane as f64)
        .collect();
    FeatureMap::new(vec![b, c], values).expect("pooled shape is consistent")
}

/// One unit-norm spatial descriptor per sample.
///
/// 4-axis maps are averaged over channels and flattened to H·W entries. For
/// 2-axis maps the unit vector itself is the descriptor. An all-zero
/// descriptor stays zero.
pub fn channel_pool_norm(f: &FeatureMap) -> Vec<Vec<f64>> {
    let raw = channel_mean(f);
    raw.into_iter().map(|v| normalize(&v).0).collect()
}

/// Channel mean per sample, before normalization.
pub(crate) fn channel_mean(f: &FeatureMap) -> Vec<Vec<f64>> {
    let b = f.batch();
    if !f.is_spatial() {
        return f.values().chunks(f.channels()).map(<[f64]>::to_vec).collect();
    }
    let c = f.channels();
    let (h, w) = f.spatial();
    let plane = h * w;
    (0..b)
        .map(|s| {
            let mut acc = vec![0.0; plane];
            for ch in 0..c {
                let base = (s * c + ch) * plane;
                for (a, v) in acc.iter_mut().zip(&f.values()[base..base + plane]) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|a| *a /= c as f64);
            acc
        })
        .collect()
}

/// Returns the normalized vector and the original norm.
pub(crate) fn normalize(v: &[f64]) -> (Vec<f64>, f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        (vec![0.0; v.len()], 0.0)
    } else {
        (v.iter().map(|x| x / norm).collect(), norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(shape: &[usize], seed: u64) -> FeatureMap {
        let n: usize = shape.iter().product();
        let vals = (0..n).map(|i| ((i as f64 + seed as f64) * 1.37).sin()).collect();
        FeatureMap::new(shape.to_vec(), vals).unwrap()
    }

    #[test]
    fn gap_of_constant_is_constant() {
        let f = FeatureMap::new(vec![2, 3, 4, 4], vec![2.5; 96]).unwrap();
        assert!(gap_hw(&f).values().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn gap_of_single_pixel_is_identity() {
        let f = map(&[2, 5, 1, 1], 3);
        assert_eq!(gap_hw(&f).values(), f.values());
    }

    #[test]
    fn gap_matches_nested_loops() {
        let f = map(&[2, 3, 2, 2], 1);
        let g = gap_hw(&f);
        for b in 0..2 {
            for c in 0..3 {
                let mut s = 0.0;
                for h in 0..2 {
                    for w in 0..2 {
                        s += f.values()[((b * 3 + c) * 2 + h) * 2 + w];
                    }
                }
                assert!((g.values()[b * 3 + c] - s / 4.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pooled_descriptor_has_unit_norm() {
        for d in channel_pool_norm(&map(&[3, 4, 3, 5], 7)) {
            let n: f64 = d.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_map_pools_to_zero() {
        let f = FeatureMap::zeros(&[2, 3, 2, 2]);
        for d in channel_pool_norm(&f) {
            assert!(d.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn channel_pool_matches_oracle() {
        let f = map(&[1, 4, 2, 2], 11);
        let v = f.values();
        let mut mean = [0.0f64; 4];
        for (p, m) in mean.iter_mut().enumerate() {
            *m = (0..4).map(|c| v[c * 4 + p]).sum::<f64>() / 4.0;
        }
        let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        let got = &channel_pool_norm(&f)[0];
        for p in 0..4 {
            assert!((got[p] - mean[p] / norm).abs() < 1e-12);
        }
    }
}

//! Deterministic weight initializers.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// He-normal with fan-out, as used for residual conv nets.
pub fn kaiming_normal_fan_out<R: Rng>(rng: &mut R, len: usize, fan_out: usize) -> Vec<f32> {
    let std = (2.0 / fan_out as f64).sqrt();
    normal(rng, len, std)
}

pub fn normal<R: Rng>(rng: &mut R, len: usize, std: f64) -> Vec<f32> {
    let dist = Normal::new(0.0, std).expect("std is finite and non-negative");
    (0..len).map(|_| dist.sample(rng) as f32).collect()
}

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub fn fan_in_uniform<R: Rng>(rng: &mut R, len: usize, fan_in: usize) -> Vec<f32> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("bound is finite");
    (0..len).map(|_| dist.sample(rng) as f32).collect()
}

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Real, Tensor};

/// Gain applied to every Dense and Conv1d weight.
pub const XAVIER_GAIN: f64 = 0.7;

/// Xavier (Glorot) normal: `std = gain * sqrt(2 / (fan_in + fan_out))`.
pub fn xavier_normal<T: Real>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    gain: f64,
    rng: &mut impl Rng,
) -> Tensor<T> {
    let std = gain * (2.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| T::lit(dist.sample(rng))).collect()).expect("init shape")
}

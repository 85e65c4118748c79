use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::nn::tensor::{Scalar, Tensor};

/// Glorot/Xavier uniform for a `[fan_in, fan_out]` weight matrix.
pub fn xavier_uniform<F: Scalar, R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    let data = (0..fan_in * fan_out)
        .map(|_| F::from_f64_lossy(dist.sample(rng)))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("non-zero fans")
}

pub fn normal<F: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<F> {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| F::from_f64_lossy(dist.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("non-zero shape")
}

//! Seeded parameter initializers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{cst, Element, Tensor};

/// Deterministic source of initial parameter values.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn normal<T: Element>(&mut self, shape: &[usize], mean: f64, std: f64) -> Tensor<T> {
        let dist = Normal::new(mean, std).expect("valid std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| cst::<T>(dist.sample(&mut self.rng))).collect();
        Tensor::new(shape, data).expect("valid shape").requires_grad()
    }

    pub fn uniform<T: Element>(&mut self, shape: &[usize], bound: f64) -> Tensor<T> {
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
        let n = shape.iter().product();
        let data = (0..n).map(|_| cst::<T>(dist.sample(&mut self.rng))).collect();
        Tensor::new(shape, data).expect("valid shape").requires_grad()
    }

    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    pub fn fan_in_uniform<T: Element>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        self.uniform(shape, 1.0 / (fan_in.max(1) as f64).sqrt())
    }

    pub fn constant<T: Element>(&mut self, shape: &[usize], v: f64) -> Tensor<T> {
        Tensor::full(shape, cst::<T>(v)).requires_grad()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random()
    }
}

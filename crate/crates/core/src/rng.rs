//! Seeded random streams. Every stochastic routine in the crate draws from
//! one of these so a run is a pure function of its seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::scalar::Real;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream derived from a parent seed and a label.
pub fn derived(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal<T: Real, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor<T> {
    let data = (0..rows * cols)
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::new(&[rows, cols], data).expect("normal tensor shape")
}

/// Uniform draws on the open box (−1, 1).
pub fn uniform_box<T: Real, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor<T> {
    let data = (0..rows * cols)
        .map(|_| {
            let u: f64 = rng.random_range(-1.0..1.0);
            // random_range is half-open; map the single excluded endpoint inward
            T::lit(if u == -1.0 { 0.0 } else { u })
        })
        .collect();
    Tensor::new(&[rows, cols], data).expect("uniform tensor shape")
}

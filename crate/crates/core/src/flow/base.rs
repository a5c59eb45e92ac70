use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::rng::{standard_normal, uniform_box};
use crate::scalar::Real;

/// Latent distribution of a flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKind {
    /// Uniform on the open box (−1, 1)ⁿ.
    Uniform,
    /// Spherical standard normal.
    Normal,
}

impl BaseKind {
    /// Row-wise log-density of latents `z: m×n`, as an `m×1` column.
    pub fn log_density<'t, T: Real>(&self, tape: &'t Tape<T>, z: Var<'t, T>) -> Var<'t, T> {
        let n = T::from_usize(z.cols()).expect("dim as scalar");
        match self {
            BaseKind::Uniform => tape.constant(Tensor::full(&[z.rows(), 1], -n * T::LN_2())),
            BaseKind::Normal => {
                let half_log_2pi = T::lit(0.5) * (T::lit(2.0) * T::PI()).ln();
                z.square().sum_cols().scale(T::lit(-0.5)).add_scalar(-n * half_log_2pi)
            }
        }
    }

    /// Closed-form log-density of one latent vector.
    pub fn log_density_point(&self, z: &[f64]) -> f64 {
        let n = z.len() as f64;
        match self {
            BaseKind::Uniform => {
                if z.iter().all(|v| v.abs() < 1.0) {
                    -n * std::f64::consts::LN_2
                } else {
                    f64::NEG_INFINITY
                }
            }
            BaseKind::Normal => {
                -0.5 * z.iter().map(|v| v * v).sum::<f64>()
                    - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
            }
        }
    }

    pub fn sample<T: Real, R: Rng + ?Sized>(&self, rng: &mut R, rows: usize, dim: usize) -> Tensor<T> {
        match self {
            BaseKind::Uniform => uniform_box(rng, rows, dim),
            BaseKind::Normal => standard_normal(rng, rows, dim),
        }
    }
}

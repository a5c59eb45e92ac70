use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Module, Parameter, Tape, Tensor, Var};
use crate::error::Result;
use crate::nn::{Activation, Mlp};
use crate::rng::standard_normal;
use crate::scalar::Real;

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 2.0;

/// Output squashing applied to the Gaussian pre-activation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Squash {
    /// `tanh(x)`, inside (−1, 1).
    Tanh,
    /// `a · tanh(x)`, inside (−a, a).
    Amplitude { a: f64 },
    /// Identity.
    None,
}

impl Squash {
    pub fn apply<'t, T: Real>(&self, x: Var<'t, T>) -> Var<'t, T> {
        match *self {
            Squash::Tanh => x.tanh(),
            Squash::Amplitude { a } => x.tanh().scale(T::lit(a)),
            Squash::None => x,
        }
    }

    /// Open bound on `|z|`, if any.
    pub fn bound(&self) -> Option<f64> {
        match *self {
            Squash::Tanh => Some(1.0),
            Squash::Amplitude { a } => Some(a),
            Squash::None => None,
        }
    }
}

/// Gaussian policy over latent actions: `z = squash(μ(s) + σ(s)·η)`.
#[derive(Clone, Debug)]
pub struct LatentPolicy<T> {
    pub net: Mlp<T>,
    pub squash: Squash,
    latent_dim: usize,
}

impl<T: Real> LatentPolicy<T> {
    /// The output layer starts at zero, giving μ = 0 and σ = 1.
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        latent_dim: usize,
        hidden: &[usize],
        activation: Activation,
        squash: Squash,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * latent_dim);
        let mut net = Mlp::new("policy", &sizes, activation, rng);
        net.zero_output();
        Self {
            net,
            squash,
            latent_dim,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// `(μ, log σ²)` with the log-variance clamped to `[LOGVAR_MIN, LOGVAR_MAX]`.
    pub fn heads_on<'t>(&self, tape: &'t Tape<T>, s: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let out = self.net.forward(tape, s)?;
        let l = self.latent_dim;
        let mu = out.col_range(0, l)?;
        let logvar = out.col_range(l, 2 * l)?.clamp(T::lit(LOGVAR_MIN), T::lit(LOGVAR_MAX));
        Ok((mu, logvar))
    }

    /// Reparametrized draw with caller-supplied standard normal noise `eta`.
    pub fn sample_on<'t>(&self, tape: &'t Tape<T>, s: Var<'t, T>, eta: &Tensor<T>) -> Result<Var<'t, T>> {
        let (mu, logvar) = self.heads_on(tape, s)?;
        let pre = mu.add(logvar.scale(T::lit(0.5)).exp().mul(tape.constant(eta.clone()))?)?;
        Ok(self.squash.apply(pre))
    }

    /// `squash(μ)`.
    pub fn mean_on<'t>(&self, tape: &'t Tape<T>, s: Var<'t, T>) -> Result<Var<'t, T>> {
        let (mu, _) = self.heads_on(tape, s)?;
        Ok(self.squash.apply(mu))
    }

    pub fn noise<R: Rng + ?Sized>(&self, rng: &mut R, rows: usize) -> Tensor<T> {
        standard_normal(rng, rows, self.latent_dim)
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: &Tensor<T>, rng: &mut R) -> Result<Tensor<T>> {
        let eta = self.noise(rng, s.rows());
        let tape = Tape::new();
        Ok(self.sample_on(&tape, tape.constant(s.clone()), &eta)?.value())
    }

    pub fn mean(&self, s: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        Ok(self.mean_on(&tape, tape.constant(s.clone()))?.value())
    }
}

impl<T: Real> Module<T> for LatentPolicy<T> {
    fn parameters(&self) -> Vec<&Parameter<T>> {
        self.net.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.net.parameters_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn policy(squash: Squash) -> LatentPolicy<f64> {
        LatentPolicy::new(3, 2, &[16], Activation::Relu, squash, &mut seeded(0))
    }

    #[test]
    fn zero_mean_and_tiny_sigma_give_origin() {
        let mut p = policy(Squash::Tanh);
        let out = p.net.layers.last_mut().unwrap();
        out.bias.value = Tensor::from_f64(1, 4, &[0.0, 0.0, -50.0, -50.0]).unwrap();
        let s = Tensor::from_f64(2, 3, &[0.1, 0.2, 0.3, -0.4, 0.5, 0.6]).unwrap();
        let z = p.sample(&s, &mut seeded(1)).unwrap();
        assert!(z.data().iter().all(|v| v.abs() < 1e-2), "{z:?}");
        assert_eq!(p.mean(&s).unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn tanh_samples_stay_strictly_inside() {
        let mut p = policy(Squash::Tanh);
        let out = p.net.layers.last_mut().unwrap();
        out.bias.value = Tensor::from_f64(1, 4, &[3.0, -2.0, 2.0, 2.0]).unwrap();
        let s = Tensor::zeros(&[100_000, 3]);
        let z = p.sample(&s, &mut seeded(2)).unwrap();
        assert!(z.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn amplitude_samples_respect_bound_and_exceed_one() {
        let mut p = policy(Squash::Amplitude { a: 2.0 });
        let out = p.net.layers.last_mut().unwrap();
        out.bias.value = Tensor::from_f64(1, 4, &[0.0, 0.0, 1.0, 1.0]).unwrap();
        let s = Tensor::zeros(&[20_000, 3]);
        let z = p.sample(&s, &mut seeded(3)).unwrap();
        assert!(z.data().iter().all(|v| v.abs() < 2.0));
        assert!(z.data().iter().any(|v| v.abs() > 1.0));
    }

    #[test]
    fn logvar_is_clamped() {
        let mut p = policy(Squash::None);
        let out = p.net.layers.last_mut().unwrap();
        out.bias.value = Tensor::from_f64(1, 4, &[0.0, 0.0, 40.0, -40.0]).unwrap();
        let tape = Tape::new();
        let (_, lv) = p.heads_on(&tape, tape.constant(Tensor::zeros(&[1, 3]))).unwrap();
        assert_eq!(lv.value().data(), &[LOGVAR_MAX, LOGVAR_MIN]);
    }
}

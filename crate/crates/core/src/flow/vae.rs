use serde::{Deserialize, Serialize};

use crate::autodiff::{concat_cols, Module, Parameter, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::rng::seeded;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeArch {
    pub action_dim: usize,
    pub state_dim: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// KL weight of the ELBO.
    pub beta: f64,
}

impl VaeArch {
    /// Latent dim `2·action_dim`, β = 0.5.
    pub fn new(action_dim: usize, state_dim: usize, hidden: Vec<usize>) -> Self {
        Self {
            action_dim,
            state_dim,
            latent_dim: 2 * action_dim,
            hidden,
            activation: Activation::Relu,
            beta: 0.5,
        }
    }
}

const LOGVAR_MIN: f64 = -10.0;
const LOGVAR_MAX: f64 = 4.0;

/// Conditional VAE action encoder with a tanh-bounded decoder.
#[derive(Clone, Debug)]
pub struct ConditionalVae<T> {
    arch: VaeArch,
    seed: u64,
    pub encoder: Mlp<T>,
    pub decoder: Mlp<T>,
}

impl<T: Real> ConditionalVae<T> {
    pub fn new(arch: VaeArch, seed: u64) -> Result<Self> {
        if arch.action_dim == 0 || arch.latent_dim == 0 || !(arch.beta >= 0.0) {
            return Err(Error::Config("vae needs positive dims and beta >= 0".into()));
        }
        let mut rng = seeded(seed);
        let mut enc = vec![arch.action_dim + arch.state_dim];
        enc.extend_from_slice(&arch.hidden);
        enc.push(2 * arch.latent_dim);
        let mut dec = vec![arch.latent_dim + arch.state_dim];
        dec.extend_from_slice(&arch.hidden);
        dec.push(arch.action_dim);
        let encoder = Mlp::new("encoder", &enc, arch.activation, &mut rng);
        let decoder = Mlp::new("decoder", &dec, arch.activation, &mut rng);
        Ok(Self {
            arch,
            seed,
            encoder,
            decoder,
        })
    }

    pub fn arch(&self) -> &VaeArch {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    fn with_state<'t>(&self, x: Var<'t, T>, s: Var<'t, T>) -> Result<Var<'t, T>> {
        if self.arch.state_dim == 0 {
            Ok(x)
        } else {
            concat_cols(&[x, s])
        }
    }

    /// `(μ, log σ²)` of q(z | a, s).
    pub fn encode_on<'t>(&self, tape: &'t Tape<T>, a: Var<'t, T>, s: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let out = self.encoder.forward(tape, self.with_state(a, s)?)?;
        let l = self.arch.latent_dim;
        let mu = out.col_range(0, l)?;
        let logvar = out
            .col_range(l, 2 * l)?
            .clamp(T::lit(LOGVAR_MIN), T::lit(LOGVAR_MAX));
        Ok((mu, logvar))
    }

    /// Reconstruction `tanh(decoder(z ⧺ s))`, inside (−1, 1)ⁿ.
    pub fn decode_on<'t>(&self, tape: &'t Tape<T>, z: Var<'t, T>, s: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.decoder.forward(tape, self.with_state(z, s)?)?.tanh())
    }

    /// Reconstruction MSE plus β · KL(q(z|a,s) ‖ N(0, I)), with the
    /// reparametrization noise `eps` supplied by the caller.
    pub fn elbo_loss_on<'t>(
        &self,
        tape: &'t Tape<T>,
        a: Var<'t, T>,
        s: Var<'t, T>,
        eps: &Tensor<T>,
        beta: T,
    ) -> Result<Var<'t, T>> {
        let (mu, logvar) = self.encode_on(tape, a, s)?;
        let std = logvar.scale(T::lit(0.5)).exp();
        let z = mu.add(std.mul(tape.constant(eps.clone()))?)?;
        let recon = self.decode_on(tape, z, s)?.sub(a)?.square().mean();
        let kl = kl_to_standard_normal(mu, logvar)?;
        Ok(recon.add(kl.scale(beta))?)
    }

    pub fn decode(&self, z: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        Ok(self
            .decode_on(&tape, tape.constant(z.clone()), tape.constant(s.clone()))?
            .value())
    }
}

/// Batch mean of `½ Σ (μ² + σ² − 1 − log σ²)`.
pub fn kl_to_standard_normal<'t, T: Real>(mu: Var<'t, T>, logvar: Var<'t, T>) -> Result<Var<'t, T>> {
    let rows = T::from_usize(mu.rows()).expect("rows as scalar");
    let per = mu.square().add(logvar.exp())?.sub(logvar)?.add_scalar(-T::one());
    Ok(per.sum().scale(T::lit(0.5) / rows))
}

impl<T: Real> Module<T> for ConditionalVae<T> {
    fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut p = self.encoder.parameters();
        p.extend(self.decoder.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut p = self.encoder.parameters_mut();
        p.extend(self.decoder.parameters_mut());
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_of_standard_normal_is_zero() {
        let tape = Tape::<f64>::new();
        let mu = tape.constant(Tensor::zeros(&[5, 4]));
        let lv = tape.constant(Tensor::zeros(&[5, 4]));
        assert_eq!(kl_to_standard_normal(mu, lv).unwrap().item(), 0.0);
    }

    #[test]
    fn kl_matches_closed_form() {
        let tape = Tape::<f64>::new();
        let mu = tape.constant(Tensor::from_f64(1, 2, &[0.5, -1.0]).unwrap());
        let lv = tape.constant(Tensor::from_f64(1, 2, &[0.2, -0.3]).unwrap());
        let kl = kl_to_standard_normal(mu, lv).unwrap().item();
        let expected = 0.5 * ((0.25 + 0.2f64.exp() - 1.0 - 0.2) + (1.0 + (-0.3f64).exp() - 1.0 + 0.3));
        assert!((kl - expected).abs() < 1e-14);
    }

    #[test]
    fn perfect_reconstruction_with_zero_beta_has_zero_loss() {
        // zero decoder output → reconstruction tanh(0) = 0, matching zero actions
        let mut vae = ConditionalVae::<f64>::new(VaeArch::new(2, 1, vec![8]), 3).unwrap();
        vae.decoder.zero_output();
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[3, 2]));
        let s = tape.constant(Tensor::from_f64(3, 1, &[0.1, 0.2, 0.3]).unwrap());
        let eps = Tensor::from_f64(3, 4, &[0.3; 12]).unwrap();
        let loss = vae.elbo_loss_on(&tape, a, s, &eps, 0.0).unwrap();
        assert_eq!(loss.item(), 0.0);
    }

    #[test]
    fn decoder_output_is_bounded() {
        let vae = ConditionalVae::<f64>::new(VaeArch::new(2, 0, vec![16]), 1).unwrap();
        let z = Tensor::from_f64(2, 4, &[50.0, -40.0, 30.0, 80.0, -90.0, 10.0, 0.0, 5.0]).unwrap();
        let out = vae.decode(&z, &Tensor::zeros(&[2, 0])).unwrap();
        assert!(out.data().iter().all(|v| v.abs() <= 1.0));
    }
}

use rand::Rng;

use crate::autodiff::{concat_cols, Module, Parameter, Tape, Tensor, Var};
use crate::error::Result;
use crate::nn::{Activation, Mlp};
use crate::scalar::Real;

/// Two independent Q-networks `Q_i(s ⧺ a)`.
#[derive(Clone, Debug)]
pub struct TwinCritic<T> {
    pub q1: Mlp<T>,
    pub q2: Mlp<T>,
}

impl<T: Real> TwinCritic<T> {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self {
            q1: Mlp::new("q1", &sizes, activation, rng),
            q2: Mlp::new("q2", &sizes, activation, rng),
        }
    }

    fn input<'t>(s: Var<'t, T>, a: Var<'t, T>) -> Result<Var<'t, T>> {
        if s.cols() == 0 {
            Ok(a)
        } else {
            concat_cols(&[s, a])
        }
    }

    pub fn q_on<'t>(&self, tape: &'t Tape<T>, s: Var<'t, T>, a: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let x = Self::input(s, a)?;
        Ok((self.q1.forward(tape, x)?, self.q2.forward(tape, x)?))
    }

    pub fn min_q_on<'t>(&self, tape: &'t Tape<T>, s: Var<'t, T>, a: Var<'t, T>) -> Result<Var<'t, T>> {
        let (q1, q2) = self.q_on(tape, s, a)?;
        q1.minimum(q2)
    }

    /// `min(Q₁, Q₂)` as an `m×1` tensor.
    pub fn min_q(&self, s: &Tensor<T>, a: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        Ok(self
            .min_q_on(&tape, tape.constant(s.clone()), tape.constant(a.clone()))?
            .value())
    }

    pub fn swapped(&self) -> Self {
        Self {
            q1: self.q2.clone(),
            q2: self.q1.clone(),
        }
    }

    /// Copy with fresh parameter identities, for use as a target network.
    pub fn detached_copy(&self) -> Self {
        Self {
            q1: self.q1.detached_copy(),
            q2: self.q2.detached_copy(),
        }
    }

    /// `θ' ← τ θ + (1 − τ) θ'`.
    pub fn polyak_from(&mut self, live: &Self, tau: T) {
        for (t, l) in self.parameters_mut().into_iter().zip(live.parameters()) {
            for (tv, lv) in t.value.data_mut().iter_mut().zip(l.value.data()) {
                *tv = tau * *lv + (T::one() - tau) * *tv;
            }
        }
    }
}

impl<T: Real> Module<T> for TwinCritic<T> {
    fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut p = self.q1.parameters();
        p.extend(self.q2.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut p = self.q1.parameters_mut();
        p.extend(self.q2.parameters_mut());
        p
    }
}

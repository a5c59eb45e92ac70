use rand::Rng;

use crate::autodiff::{concat_cols, Module, Parameter, Tape, Var};
use crate::error::Result;
use crate::nn::{Activation, Mlp};
use crate::scalar::Real;

/// Affine coupling: the first `n/2` coordinates pass through unchanged and
/// parametrize a scale-and-shift of the rest.
///
/// The conditioner sees the passive half concatenated with the state and
/// emits `[raw log-scale | shift]`; the log-scale is bounded as
/// `s_max · tanh(raw)`.
#[derive(Clone, Debug)]
pub struct CouplingLayer<T> {
    passive: Vec<usize>,
    active: Vec<usize>,
    pub conditioner: Mlp<T>,
    pub s_max: T,
}

impl<T: Real> CouplingLayer<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        dim: usize,
        state_dim: usize,
        hidden: &[usize],
        activation: Activation,
        s_max: T,
        rng: &mut R,
    ) -> Self {
        assert!(dim >= 2, "coupling needs at least two dimensions");
        let split = dim / 2;
        let passive: Vec<usize> = (0..split).collect();
        let active: Vec<usize> = (split..dim).collect();
        let mut sizes = vec![passive.len() + state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * active.len());
        let mut conditioner = Mlp::new(name, &sizes, activation, rng);
        conditioner.zero_output();
        Self {
            passive,
            active,
            conditioner,
            s_max,
        }
    }

    pub fn passive(&self) -> &[usize] {
        &self.passive
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    fn scale_shift<'t>(
        &self,
        tape: &'t Tape<T>,
        passive: Var<'t, T>,
        state: Option<Var<'t, T>>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let input = match state {
            Some(s) => concat_cols(&[passive, s])?,
            None => passive,
        };
        let out = self.conditioner.forward(tape, input)?;
        let na = self.active.len();
        let log_scale = out.col_range(0, na)?.tanh().scale(self.s_max);
        let shift = out.col_range(na, 2 * na)?;
        Ok((log_scale, shift))
    }

    /// `(y, log|det ∂y/∂x|)` with the log-determinant as an `m×1` column.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape<T>,
        x: Var<'t, T>,
        state: Option<Var<'t, T>>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let xp = x.cols_at(&self.passive)?;
        let xa = x.cols_at(&self.active)?;
        let (log_scale, shift) = self.scale_shift(tape, xp, state)?;
        let ya = xa.mul(log_scale.exp())?.add(shift)?;
        Ok((concat_cols(&[xp, ya])?, log_scale.sum_cols()))
    }

    pub fn inverse<'t>(
        &self,
        tape: &'t Tape<T>,
        y: Var<'t, T>,
        state: Option<Var<'t, T>>,
    ) -> Result<Var<'t, T>> {
        let yp = y.cols_at(&self.passive)?;
        let ya = y.cols_at(&self.active)?;
        let (log_scale, shift) = self.scale_shift(tape, yp, state)?;
        let xa = ya.sub(shift)?.mul(log_scale.neg().exp())?;
        concat_cols(&[yp, xa])
    }
}

impl<T: Real> Module<T> for CouplingLayer<T> {
    fn parameters(&self) -> Vec<&Parameter<T>> {
        self.conditioner.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.conditioner.parameters_mut()
    }
}

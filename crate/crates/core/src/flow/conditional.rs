use rand::Rng;
use serde::{Deserialize, Serialize};

use super::base::BaseKind;
use super::coupling::CouplingLayer;
use crate::autodiff::{Module, Parameter, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::rng::seeded;
use crate::scalar::Real;

/// Default bound on coupling log-scales.
pub const DEFAULT_S_MAX: f64 = 5.0;
/// Default clamp margin applied before arc-tanh in the inverse.
pub const DEFAULT_TANH_EPS: f64 = 1e-6;

/// Static description of a flow; this is what checkpoints record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowArch {
    pub action_dim: usize,
    pub state_dim: usize,
    /// Number of coupling layers.
    pub layers: usize,
    /// Hidden widths of every conditioner.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub s_max: f64,
    pub base: BaseKind,
    /// Bounded-output flows end in `tanh` and pair with the uniform base.
    pub tanh_output: bool,
    /// Toy-density flows start with `atanh`, so data must lie in (−1, 1)ⁿ.
    pub atanh_input: bool,
    /// Reverse coordinates after every coupling layer.
    pub permute: bool,
    pub tanh_eps: f64,
}

impl FlowArch {
    /// Bounded-latent flow: tanh output, uniform base.
    pub fn cnf(action_dim: usize, state_dim: usize, layers: usize, hidden: Vec<usize>) -> Self {
        Self {
            action_dim,
            state_dim,
            layers,
            hidden,
            activation: Activation::Relu,
            s_max: DEFAULT_S_MAX,
            base: BaseKind::Uniform,
            tanh_output: true,
            atanh_input: false,
            permute: true,
            tanh_eps: DEFAULT_TANH_EPS,
        }
    }

    /// Conventional flow: no output squashing, normal base.
    pub fn nf_normal(action_dim: usize, state_dim: usize, layers: usize, hidden: Vec<usize>) -> Self {
        Self {
            base: BaseKind::Normal,
            tanh_output: false,
            ..Self::cnf(action_dim, state_dim, layers, hidden)
        }
    }

    pub fn for_base(base: BaseKind, action_dim: usize, state_dim: usize, layers: usize, hidden: Vec<usize>) -> Self {
        match base {
            BaseKind::Uniform => Self::cnf(action_dim, state_dim, layers, hidden),
            BaseKind::Normal => Self::nf_normal(action_dim, state_dim, layers, hidden),
        }
    }

    pub fn with_atanh_input(mut self) -> Self {
        self.atanh_input = true;
        self
    }

    pub fn kind_name(&self) -> &'static str {
        if self.tanh_output {
            "cnf"
        } else {
            "nf-normal"
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.action_dim < 2 {
            return Err(Error::Config(format!(
                "coupling flows need action_dim >= 2 (got {}); pad a one-dimensional action with an auxiliary coordinate",
                self.action_dim
            )));
        }
        if self.layers == 0 {
            return Err(Error::Config("flow needs at least one coupling layer".into()));
        }
        match (self.tanh_output, self.base) {
            (true, BaseKind::Uniform) | (false, BaseKind::Normal) => {}
            (tanh, base) => {
                return Err(Error::Config(format!(
                    "illegal flow configuration: tanh_output={tanh} with {base:?} base; \
                     use tanh+uniform or no-tanh+normal"
                )))
            }
        }
        if !(self.s_max > 0.0) || !(self.tanh_eps > 0.0 && self.tanh_eps < 0.5) {
            return Err(Error::Config("s_max must be positive and tanh_eps in (0, 0.5)".into()));
        }
        Ok(())
    }
}

/// Conditional normalizing flow `z = f(a | s)` built from affine couplings.
#[derive(Clone, Debug)]
pub struct ConditionalFlow<T> {
    arch: FlowArch,
    seed: u64,
    couplings: Vec<CouplingLayer<T>>,
    reversal: Vec<usize>,
}

impl<T: Real> ConditionalFlow<T> {
    /// Builds a flow whose conditioner output layers are zero, so it starts
    /// as the composition of its fixed permutations and squashing layers.
    pub fn new(arch: FlowArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = seeded(seed);
        let couplings = (0..arch.layers)
            .map(|k| {
                CouplingLayer::new(
                    &format!("coupling{k}"),
                    arch.action_dim,
                    arch.state_dim,
                    &arch.hidden,
                    arch.activation,
                    T::lit(arch.s_max),
                    &mut rng,
                )
            })
            .collect();
        let reversal = (0..arch.action_dim).rev().collect();
        Ok(Self {
            arch,
            seed,
            couplings,
            reversal,
        })
    }

    pub fn arch(&self) -> &FlowArch {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn base(&self) -> BaseKind {
        self.arch.base
    }

    pub fn action_dim(&self) -> usize {
        self.arch.action_dim
    }

    pub fn state_dim(&self) -> usize {
        self.arch.state_dim
    }

    pub fn couplings(&self) -> &[CouplingLayer<T>] {
        &self.couplings
    }

    pub fn couplings_mut(&mut self) -> &mut [CouplingLayer<T>] {
        &mut self.couplings
    }

    fn state_var<'t>(&self, state: Var<'t, T>) -> Result<Option<Var<'t, T>>> {
        if state.cols() != self.arch.state_dim {
            return Err(Error::Shape {
                op: "flow state",
                left: vec![state.rows(), self.arch.state_dim],
                right: state.shape(),
            });
        }
        Ok((self.arch.state_dim > 0).then_some(state))
    }

    fn check_batch(&self, op: &'static str, x: &Tensor<T>, dim: usize, s: &Tensor<T>) -> Result<()> {
        if x.cols() != dim || x.shape().len() != 2 {
            return Err(Error::Shape {
                op,
                left: vec![x.rows(), dim],
                right: x.shape().to_vec(),
            });
        }
        if s.rows() != x.rows() && !(self.arch.state_dim == 0 && s.is_empty()) {
            return Err(Error::Shape {
                op,
                left: x.shape().to_vec(),
                right: s.shape().to_vec(),
            });
        }
        if !x.all_finite() || !s.all_finite() {
            return Err(Error::NonFinite(format!("{op} input")));
        }
        Ok(())
    }

    /// `z = f(a|s)` and the total log|det| over all layers (`m×1`).
    pub fn forward_on<'t>(
        &self,
        tape: &'t Tape<T>,
        actions: Var<'t, T>,
        states: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let s = self.state_var(states)?;
        let mut h = actions;
        let mut logdet = tape.constant(Tensor::zeros(&[actions.rows(), 1]));
        if self.arch.atanh_input {
            h = h.atanh()?;
            logdet = logdet.sub(h.log_sech2().sum_cols())?;
        }
        for layer in &self.couplings {
            let (y, ld) = layer.forward(tape, h, s)?;
            logdet = logdet.add(ld)?;
            h = if self.arch.permute { y.cols_at(&self.reversal)? } else { y };
        }
        if self.arch.tanh_output {
            logdet = logdet.add(h.log_sech2().sum_cols())?;
            h = h.tanh();
        }
        Ok((h, logdet))
    }

    /// `a = f⁻¹(z|s)`. Bounded latents are clamped to ±(1 − ε) first.
    pub fn inverse_on<'t>(&self, tape: &'t Tape<T>, latents: Var<'t, T>, states: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = self.state_var(states)?;
        let mut h = latents;
        if self.arch.tanh_output {
            let edge = T::one() - T::lit(self.arch.tanh_eps);
            h = h.clamp(-edge, edge).atanh()?;
        }
        for layer in self.couplings.iter().rev() {
            // reversal is its own inverse
            if self.arch.permute {
                h = h.cols_at(&self.reversal)?;
            }
            h = layer.inverse(tape, h, s)?;
        }
        if self.arch.atanh_input {
            h = h.tanh();
        }
        Ok(h)
    }

    /// `log p(a|s) = log p_Z(f(a|s)) + log|det|`, as an `m×1` column.
    pub fn log_prob_on<'t>(&self, tape: &'t Tape<T>, actions: Var<'t, T>, states: Var<'t, T>) -> Result<Var<'t, T>> {
        let (z, logdet) = self.forward_on(tape, actions, states)?;
        self.arch.base.log_density(tape, z).add(logdet)
    }

    /// Mean negative log-likelihood of a batch.
    pub fn nll_on<'t>(&self, tape: &'t Tape<T>, actions: Var<'t, T>, states: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.log_prob_on(tape, actions, states)?.mean().neg())
    }

    fn states_or_empty(&self, rows: usize, states: &Tensor<T>) -> Tensor<T> {
        if self.arch.state_dim == 0 && states.is_empty() {
            Tensor::zeros(&[rows, 0])
        } else {
            states.clone()
        }
    }

    /// Batched forward pass outside of any training graph.
    pub fn forward(&self, actions: &Tensor<T>, states: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check_batch("flow forward", actions, self.arch.action_dim, states)?;
        let tape = Tape::new();
        let s = self.states_or_empty(actions.rows(), states);
        let (z, ld) = self.forward_on(&tape, tape.constant(actions.clone()), tape.constant(s))?;
        Ok((z.value(), ld.value()))
    }

    pub fn inverse(&self, latents: &Tensor<T>, states: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_batch("flow inverse", latents, self.arch.action_dim, states)?;
        let tape = Tape::new();
        let s = self.states_or_empty(latents.rows(), states);
        Ok(self
            .inverse_on(&tape, tape.constant(latents.clone()), tape.constant(s))?
            .value())
    }

    pub fn log_prob(&self, actions: &Tensor<T>, states: &Tensor<T>) -> Result<Vec<T>> {
        self.check_batch("flow log_prob", actions, self.arch.action_dim, states)?;
        let tape = Tape::new();
        let s = self.states_or_empty(actions.rows(), states);
        Ok(self
            .log_prob_on(&tape, tape.constant(actions.clone()), tape.constant(s))?
            .value()
            .into_data())
    }

    pub fn nll(&self, actions: &Tensor<T>, states: &Tensor<T>) -> Result<T> {
        let lp = self.log_prob(actions, states)?;
        let n = T::from_usize(lp.len()).expect("len as scalar");
        Ok(-lp.into_iter().sum::<T>() / n)
    }

    /// Draws `rows` actions per the base distribution, one per state row.
    pub fn sample<R: Rng + ?Sized>(&self, states: &Tensor<T>, rows: usize, rng: &mut R) -> Result<Tensor<T>> {
        let z = self.arch.base.sample(rng, rows, self.arch.action_dim);
        self.inverse(&z, states)
    }
}

impl<T: Real> Module<T> for ConditionalFlow<T> {
    fn parameters(&self) -> Vec<&Parameter<T>> {
        self.couplings.iter().flat_map(|c| c.parameters()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.couplings.iter_mut().flat_map(|c| c.parameters_mut()).collect()
    }
}

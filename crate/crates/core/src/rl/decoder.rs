use crate::autodiff::{Module, ParamId, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::flow::{ActionEncoder, ConditionalFlow, ConditionalVae};
use crate::scalar::Real;

/// Frozen map from latent actions to environment actions.
pub trait ActionDecoder<T: Real> {
    fn latent_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn decode_on<'t>(&self, tape: &'t Tape<T>, z: Var<'t, T>, s: Var<'t, T>) -> Result<Var<'t, T>>;
    /// Parameters that must not receive gradients.
    fn frozen_ids(&self) -> Vec<ParamId>;

    fn decode(&self, z: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        Ok(self
            .decode_on(&tape, tape.constant(z.clone()), tape.constant(s.clone()))?
            .value())
    }
}

/// Decoder that can also map actions into its latent space.
pub trait ActionCodec<T: Real>: ActionDecoder<T> {
    fn encode(&self, a: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>>;
}

impl<T: Real> ActionDecoder<T> for ConditionalFlow<T> {
    fn latent_dim(&self) -> usize {
        self.action_dim()
    }

    fn action_dim(&self) -> usize {
        ConditionalFlow::action_dim(self)
    }

    fn decode_on<'t>(&self, tape: &'t Tape<T>, z: Var<'t, T>, s: Var<'t, T>) -> Result<Var<'t, T>> {
        self.inverse_on(tape, z, s)
    }

    fn frozen_ids(&self) -> Vec<ParamId> {
        self.param_ids()
    }
}

impl<T: Real> ActionCodec<T> for ConditionalFlow<T> {
    fn encode(&self, a: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(a, s)?.0)
    }
}

impl<T: Real> ActionDecoder<T> for ConditionalVae<T> {
    fn latent_dim(&self) -> usize {
        ConditionalVae::latent_dim(self)
    }

    fn action_dim(&self) -> usize {
        self.arch().action_dim
    }

    fn decode_on<'t>(&self, tape: &'t Tape<T>, z: Var<'t, T>, s: Var<'t, T>) -> Result<Var<'t, T>> {
        ConditionalVae::decode_on(self, tape, z, s)
    }

    fn frozen_ids(&self) -> Vec<ParamId> {
        self.param_ids()
    }
}

impl<T: Real> ActionDecoder<T> for ActionEncoder<T> {
    fn latent_dim(&self) -> usize {
        match self {
            ActionEncoder::Flow(f) => ActionDecoder::latent_dim(f),
            ActionEncoder::Vae(v) => ActionDecoder::latent_dim(v),
        }
    }

    fn action_dim(&self) -> usize {
        match self {
            ActionEncoder::Flow(f) => ActionDecoder::action_dim(f),
            ActionEncoder::Vae(v) => ActionDecoder::action_dim(v),
        }
    }

    fn decode_on<'t>(&self, tape: &'t Tape<T>, z: Var<'t, T>, s: Var<'t, T>) -> Result<Var<'t, T>> {
        match self {
            ActionEncoder::Flow(f) => ActionDecoder::decode_on(f, tape, z, s),
            ActionEncoder::Vae(v) => ActionDecoder::decode_on(v, tape, z, s),
        }
    }

    fn frozen_ids(&self) -> Vec<ParamId> {
        match self {
            ActionEncoder::Flow(f) => f.param_ids(),
            ActionEncoder::Vae(v) => v.param_ids(),
        }
    }
}

impl<T: Real> ActionCodec<T> for ActionEncoder<T> {
    fn encode(&self, a: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            ActionEncoder::Flow(f) => f.encode(a, s),
            ActionEncoder::Vae(_) => Err(Error::Config(
                "latent-direct training needs an invertible flow encoder, not a vae".into(),
            )),
        }
    }
}

/// `a = z`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IdentityDecoder {
    pub dim: usize,
}

impl<T: Real> ActionDecoder<T> for IdentityDecoder {
    fn latent_dim(&self) -> usize {
        self.dim
    }

    fn action_dim(&self) -> usize {
        self.dim
    }

    fn decode_on<'t>(&self, _tape: &'t Tape<T>, z: Var<'t, T>, _s: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(z)
    }

    fn frozen_ids(&self) -> Vec<ParamId> {
        Vec::new()
    }
}

impl<T: Real> ActionCodec<T> for IdentityDecoder {
    fn encode(&self, a: &Tensor<T>, _s: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(a.clone())
    }
}

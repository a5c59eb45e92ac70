use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::Tensor;
use crate::scalar::Real;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Identity of a trainable tensor; gradients are routed by it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

impl ParamId {
    pub fn fresh() -> Self {
        ParamId(NEXT_ID.fetch_add(1, Ordering::Relaxed))
    }
}

/// Trainable tensor with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    id: ParamId,
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            id: ParamId::fresh(),
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    /// Copy of this parameter with a new identity, so that both copies can
    /// live on one tape without their gradients merging.
    pub fn detached_copy(&self) -> Self {
        let mut p = self.clone();
        p.id = ParamId::fresh();
        p.zero_grad();
        p
    }
}

/// Anything that owns parameters in a fixed declaration order.
pub trait Module<T: Real> {
    fn parameters(&self) -> Vec<&Parameter<T>>;
    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>>;

    fn param_ids(&self) -> Vec<ParamId> {
        self.parameters().iter().map(|p| p.id()).collect()
    }

    fn num_values(&self) -> usize {
        self.parameters().iter().map(|p| p.value.len()).sum()
    }

    /// All parameter values concatenated in declaration order.
    fn flat_values(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_values());
        for p in self.parameters() {
            out.extend_from_slice(p.value.data());
        }
        out
    }

    /// Overwrites parameter values from a flat vector in declaration order.
    fn load_flat(&mut self, values: &[T]) -> crate::Result<()> {
        let total = self.num_values();
        if values.len() != total {
            return Err(crate::Error::Length {
                expected: total,
                actual: values.len(),
            });
        }
        let mut off = 0;
        for p in self.parameters_mut() {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        }
        Ok(())
    }

    fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }
}

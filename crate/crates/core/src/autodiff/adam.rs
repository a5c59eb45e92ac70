use super::param::Parameter;
use super::tensor::Tensor;
use crate::scalar::Real;

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub weight_decay: T,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: T) -> Self {
        Self::with_weight_decay(lr, T::zero())
    }

    pub fn with_weight_decay(lr: T, weight_decay: T) -> Self {
        Self {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients and zeroes them.
    ///
    /// Returns `false` (leaving values and moments untouched) when any
    /// gradient is non-finite.
    pub fn step(&mut self, mut params: Vec<&mut Parameter<T>>) -> bool {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            self.second = self.first.clone();
        }
        assert_eq!(self.first.len(), params.len(), "parameter list changed between Adam steps");

        if let Some(bad) = params.iter().find(|p| !p.grad.all_finite()) {
            log::warn!("skipping optimizer step: non-finite gradient in `{}`", bad.name);
            for p in params.iter_mut() {
                p.zero_grad();
            }
            return false;
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let (b1, b2, lr, eps, wd) = (self.beta1, self.beta2, self.lr, self.eps, self.weight_decay);

        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let grad = p.grad.data().to_vec();
            let vals = p.value.data_mut();
            for (i, g) in grad.into_iter().enumerate() {
                let mi = &mut m.data_mut()[i];
                *mi = b1 * *mi + (T::one() - b1) * g;
                let vi = &mut v.data_mut()[i];
                *vi = b2 * *vi + (T::one() - b2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                vals[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * vals[i]);
            }
            p.zero_grad();
        }
        true
    }
}

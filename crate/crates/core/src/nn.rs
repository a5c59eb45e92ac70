//! Dense layers and multilayer perceptrons on the tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Module, Parameter, Tape, Tensor, Var};
use crate::error::Result;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

impl<T: Real> Linear<T> {
    /// Uniform init on ±1/√fan_in for weights and bias.
    pub fn new<R: Rng + ?Sized>(name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut draw = |n: usize| -> Vec<T> {
            (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect()
        };
        let w = Tensor::new(&[fan_in, fan_out], draw(fan_in * fan_out)).expect("weight shape");
        let b = Tensor::new(&[1, fan_out], draw(fan_out)).expect("bias shape");
        Self {
            weight: Parameter::new(format!("{name}.weight"), w),
            bias: Parameter::new(format!("{name}.bias"), b),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.matmul(tape.param(&self.weight))?.add_row(tape.param(&self.bias))
    }

    pub fn zero(&mut self) {
        self.weight.value.fill(T::zero());
        self.bias.value.fill(T::zero());
    }
}

/// Fully connected network; the activation is applied between layers, not
/// after the last one.
#[derive(Clone, Debug)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
    pub activation: Activation,
}

impl<T: Real> Mlp<T> {
    /// `sizes` lists input, hidden and output widths.
    pub fn new<R: Rng + ?Sized>(name: &str, sizes: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers, activation }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].fan_in()];
        s.extend(self.layers.iter().map(Linear::fan_out));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty mlp").fan_out()
    }

    /// Zeroes the output layer so the network starts as the constant 0.
    pub fn zero_output(&mut self) {
        self.layers.last_mut().expect("non-empty mlp").zero();
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h)?;
            if i < last {
                h = match self.activation {
                    Activation::Relu => h.relu(),
                    Activation::Tanh => h.tanh(),
                };
            }
        }
        Ok(h)
    }

    /// Evaluates without keeping a graph around.
    pub fn eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let input = tape.constant(x.clone());
        Ok(self.forward(&tape, input)?.value())
    }

    /// Copy with fresh parameter identities (for target networks).
    pub fn detached_copy(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    weight: l.weight.detached_copy(),
                    bias: l.bias.detached_copy(),
                })
                .collect(),
            activation: self.activation,
        }
    }
}

impl<T: Real> Module<T> for Mlp<T> {
    fn parameters(&self) -> Vec<&Parameter<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckConfig};
    use crate::rng::{seeded, standard_normal};

    #[test]
    fn zero_output_gives_zero() {
        let mut rng = seeded(1);
        let mut mlp = Mlp::<f64>::new("m", &[3, 8, 2], Activation::Relu, &mut rng);
        mlp.zero_output();
        let x = standard_normal(&mut rng, 4, 3);
        assert!(mlp.eval(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_layer_mse_gradient_matches_central_differences() {
        let mut rng = seeded(7);
        let mut mlp = Mlp::<f64>::new("m", &[10, 16, 1], Activation::Tanh, &mut rng);
        let x = standard_normal::<f64, _>(&mut rng, 10, 10);
        let y = standard_normal::<f64, _>(&mut rng, 10, 1);
        let report = grad_check(
            &mut mlp,
            |m, tape| {
                let out = m.forward(tape, tape.constant(x.clone()))?;
                Ok(out.sub(tape.constant(y.clone()))?.square().mean())
            },
            GradCheckConfig {
                tolerance: 1e-6,
                ..Default::default()
            },
        );
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn loss_without_parameter_dependence_has_zero_gradients() {
        let mut rng = seeded(3);
        let mut mlp = Mlp::<f64>::new("m", &[2, 4, 1], Activation::Relu, &mut rng);
        let report = grad_check(
            &mut mlp,
            |_, tape| Ok(tape.constant(Tensor::from_f64(1, 2, &[1.0, 2.0])?).sum()),
            GradCheckConfig::default(),
        );
        assert!(report.passed);
        assert!(report.params.iter().all(|p| p.max_abs_analytic == 0.0 && p.max_abs_numeric == 0.0));
    }
}

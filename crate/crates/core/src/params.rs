//! Binding of named parameter tensors to graph leaves.

use std::collections::HashMap;

use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Graph leaves created for named parameters during one forward pass.
#[derive(Debug, Default)]
pub struct Bindings {
    vars: HashMap<String, Var>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind<T: Scalar>(&mut self, g: &mut Graph<T>, name: String, t: &Tensor<T>) -> Var {
        let v = g.leaf(t);
        self.vars.insert(name, v);
        v
    }

    /// Returns the existing leaf for `name`, binding it first if needed.
    pub fn fetch<T: Scalar>(&mut self, g: &mut Graph<T>, name: String, t: &Tensor<T>) -> Var {
        match self.vars.get(&name) {
            Some(&v) => v,
            None => self.bind(g, name, t),
        }
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Accumulates each bound parameter's gradient into its tensor.
    pub fn write_grads<'a, T: Scalar>(
        &self,
        g: &Graph<T>,
        params: impl IntoIterator<Item = (String, &'a mut Tensor<T>)>,
    ) -> Result<()> {
        for (name, p) in params {
            let v = self
                .get(&name)
                .ok_or_else(|| Error::invalid("write_grads", format!("parameter {name} was not bound")))?;
            g.write_grad(v, p)?;
        }
        Ok(())
    }
}

pub(crate) fn uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-bound..=bound))).into_param()
}

pub(crate) fn param_zeros<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    Tensor::zeros(shape).into_param()
}

/// Shared affine map applied over the last axis: `x @ W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    /// Uniform(-1/√in, 1/√in) initialization for weight and bias.
    pub fn new<R: Rng + ?Sized>(rng: &mut R, input: usize, output: usize) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            weight: uniform(rng, &[input, output], bound),
            bias: uniform(rng, &[output], bound),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: param_zeros(&[input, output]),
            bias: param_zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, g: &mut Graph<T>, b: &mut Bindings, prefix: &str, x: Var) -> Result<Var> {
        let w = b.bind(g, format!("{prefix}.weight"), &self.weight);
        let bias = b.bind(g, format!("{prefix}.bias"), &self.bias);
        let y = g.matmul(x, w)?;
        g.add(y, bias)
    }

    pub fn params(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        vec![
            (format!("{prefix}.weight"), &self.weight),
            (format!("{prefix}.bias"), &self.bias),
        ]
    }

    pub fn params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor<T>)> {
        vec![
            (format!("{prefix}.weight"), &mut self.weight),
            (format!("{prefix}.bias"), &mut self.bias),
        ]
    }
}

//! Parameter containers for the convolution and fully connected layers.

use rand::Rng;

use crate::autodiff::{PadMode, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const KERNEL: usize = 3;

/// Square convolution with "same" zero padding and stride 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    pub fn zeros(cin: usize, cout: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[cout, cin, KERNEL, KERNEL]).expect("positive extents"),
            bias: Tensor::zeros(&[cout]).expect("positive extents"),
        }
    }

    /// Uniform in `±sqrt(6 / fan_in)`, zero bias.
    pub fn he_uniform(cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (cin * KERNEL * KERNEL) as f64).sqrt() as f32;
        let mut layer = Self::zeros(cin, cout);
        layer
            .weight
            .data_mut()
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-bound..=bound));
        layer
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels() * KERNEL * KERNEL
    }

    pub fn tensors(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }

    /// Multiply-accumulates for one output of `h x w` pixels.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        (self.weight.len() * h * w) as u64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[outputs, inputs]).expect("positive extents"),
            bias: Tensor::zeros(&[outputs]).expect("positive extents"),
        }
    }

    pub fn he_uniform(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / inputs as f64).sqrt() as f32;
        let mut layer = Self::zeros(inputs, outputs);
        layer
            .weight
            .data_mut()
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-bound..=bound));
        layer
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn tensors(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Tape handles for a weight/bias pair.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Var,
}

impl LayerVars {
    pub fn take(vars: &mut impl Iterator<Item = Var>) -> Result<Self> {
        let mut next = || {
            vars.next()
                .ok_or_else(|| Error::InvalidArgument("too few parameter variables".into()))
        };
        Ok(Self {
            weight: next()?,
            bias: next()?,
        })
    }

    pub fn conv<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.conv2d(x, self.weight, self.bias, 1, PadMode::Zero)
    }

    pub fn linear<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.linear(x, self.weight, self.bias)
    }
}

/// Record every tensor as a leaf, in order, converting to the tape's precision.
pub fn bind_all<'a, T: Real>(
    tape: &mut Tape<T>,
    tensors: impl IntoIterator<Item = &'a Tensor>,
) -> Vec<Var> {
    tensors.into_iter().map(|t| tape.leaf(t.cast())).collect()
}

/// Append a layer's weight and bias under `prefix`.
pub fn push_layer<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, layer: [&'a Tensor; 2]) {
    out.push((format!("{prefix}.weight"), layer[0]));
    out.push((format!("{prefix}.bias"), layer[1]));
}

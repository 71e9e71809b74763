//! Illumination correction of the low-frequency base.
//!
//! A global curve coefficient per channel is regressed from pooled
//! convolution features and applied with a second-order Taylor expansion of
//! the gamma curve `I^(1 + g) = I * exp(g * ln I)`, with `ln` replaced by
//! `tanh` for stability. A six-layer residual network then refines the base
//! and a per-pixel coefficient map applies a second, local correction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{bind_all, push_layer, ConvLayer, LayerVars, LinearLayer};
use crate::tensor::{Real, Tensor};

pub const IMAGE_CHANNELS: usize = 3;
pub const GLOBAL_FEATURES: usize = 24;
/// Channel widths of the residual enhancement chain.
pub const ENHANCE_CHANNELS: [usize; 7] = [3, 16, 32, 64, 32, 16, 3];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionOrder {
    #[default]
    GlobalToLocal,
    LocalToGlobal,
}

impl std::fmt::Display for CorrectionOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::GlobalToLocal => "global_to_local",
            Self::LocalToGlobal => "local_to_global",
        })
    }
}

impl std::str::FromStr for CorrectionOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global_to_local" => Ok(Self::GlobalToLocal),
            "local_to_global" => Ok(Self::LocalToGlobal),
            other => Err(Error::InvalidArgument(format!(
                "unknown correction order {other:?}"
            ))),
        }
    }
}

/// Log surrogate used inside the Taylor-expanded gamma curve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaylorVariant {
    /// `tanh`, used by the network.
    Tanh,
    /// Exact `ln`; only valid for strictly positive input.
    Ln,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DicWeights {
    pub global_conv: ConvLayer,
    pub global_linear: LinearLayer,
    pub enhance: Vec<ConvLayer>,
    pub local_conv: ConvLayer,
}

impl DicWeights {
    pub fn zeros() -> Self {
        Self {
            global_conv: ConvLayer::zeros(IMAGE_CHANNELS, GLOBAL_FEATURES),
            global_linear: LinearLayer::zeros(GLOBAL_FEATURES, IMAGE_CHANNELS),
            enhance: ENHANCE_CHANNELS
                .windows(2)
                .map(|c| ConvLayer::zeros(c[0], c[1]))
                .collect(),
            local_conv: ConvLayer::zeros(IMAGE_CHANNELS, IMAGE_CHANNELS),
        }
    }

    pub fn init(rng: &mut impl Rng) -> Self {
        Self {
            global_conv: ConvLayer::he_uniform(IMAGE_CHANNELS, GLOBAL_FEATURES, rng),
            global_linear: LinearLayer::he_uniform(GLOBAL_FEATURES, IMAGE_CHANNELS, rng),
            enhance: ENHANCE_CHANNELS
                .windows(2)
                .map(|c| ConvLayer::he_uniform(c[0], c[1], rng))
                .collect(),
            local_conv: ConvLayer::he_uniform(IMAGE_CHANNELS, IMAGE_CHANNELS, rng),
        }
    }

    /// Parameter tensors in serialization order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        push_layer(&mut out, "global_conv", self.global_conv.tensors());
        push_layer(&mut out, "global_linear", self.global_linear.tensors());
        for (i, layer) in self.enhance.iter().enumerate() {
            push_layer(&mut out, &format!("enhance.{i}"), layer.tensors());
        }
        push_layer(&mut out, "local_conv", self.local_conv.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.extend(self.global_conv.tensors_mut());
        out.extend(self.global_linear.tensors_mut());
        for layer in &mut self.enhance {
            out.extend(layer.tensors_mut());
        }
        out.extend(self.local_conv.tensors_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn bind<T: Real>(&self, tape: &mut Tape<T>) -> Result<DicParams> {
        let vars = bind_all(tape, self.named_tensors().into_iter().map(|(_, t)| t));
        DicParams::take(&mut vars.into_iter())
    }

    /// Multiply-accumulates for a base of `h x w` pixels.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let convs: u64 = std::iter::once(&self.global_conv)
            .chain(&self.enhance)
            .chain(std::iter::once(&self.local_conv))
            .map(|c| c.macs(h, w))
            .sum();
        convs + self.global_linear.weight.len() as u64
    }

    pub fn global_gamma(&self, lf: &Tensor) -> Result<Tensor> {
        self.eval(lf, estimate_global_gamma)
    }

    pub fn local_gamma(&self, img: &Tensor) -> Result<Tensor> {
        self.eval(img, estimate_local_gamma)
    }

    pub fn residual_enhance(&self, img: &Tensor) -> Result<Tensor> {
        self.eval(img, residual_enhance)
    }

    pub fn forward(&self, lf: &Tensor, order: CorrectionOrder) -> Result<Tensor> {
        self.eval(lf, |tape, x, p| forward(tape, x, p, order))
    }

    fn eval(
        &self,
        input: &Tensor,
        f: impl FnOnce(&mut Tape<f32>, Var, &DicParams) -> Result<Var>,
    ) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone());
        let p = self.bind(&mut tape)?;
        let y = f(&mut tape, x, &p)?;
        Ok(tape.value(y).clone())
    }
}

/// Tape handles for [`DicWeights`].
#[derive(Clone, Debug)]
pub struct DicParams {
    pub global_conv: LayerVars,
    pub global_linear: LayerVars,
    pub enhance: Vec<LayerVars>,
    pub local_conv: LayerVars,
}

impl DicParams {
    /// Consume handles in [`DicWeights::named_tensors`] order.
    pub fn take(vars: &mut impl Iterator<Item = Var>) -> Result<Self> {
        Ok(Self {
            global_conv: LayerVars::take(vars)?,
            global_linear: LayerVars::take(vars)?,
            enhance: (0..ENHANCE_CHANNELS.len() - 1)
                .map(|_| LayerVars::take(vars))
                .collect::<Result<_>>()?,
            local_conv: LayerVars::take(vars)?,
        })
    }
}

/// Per-channel global coefficients in `(0, 1)`: sigmoid(linear(pool(conv(x)))).
pub fn estimate_global_gamma<T: Real>(tape: &mut Tape<T>, lf: Var, p: &DicParams) -> Result<Var> {
    let feat = p.global_conv.conv(tape, lf)?;
    let pooled = tape.global_avg_pool(feat)?;
    let logits = p.global_linear.linear(tape, pooled)?;
    tape.sigmoid(logits)
}

/// Per-pixel coefficients in `(0, 1)` with the input's extents.
pub fn estimate_local_gamma<T: Real>(tape: &mut Tape<T>, img: Var, p: &DicParams) -> Result<Var> {
    let logits = p.local_conv.conv(tape, img)?;
    tape.sigmoid(logits)
}

/// `img * (1 + g * phi(img) + g^2 / 2 * phi(img)^2)`.
///
/// `gamma` is either per-channel `[C]` or the full image shape.
pub fn taylor_correct<T: Real>(
    tape: &mut Tape<T>,
    img: Var,
    gamma: Var,
    variant: TaylorVariant,
) -> Result<Var> {
    let phi = match variant {
        TaylorVariant::Tanh => tape.tanh(img)?,
        TaylorVariant::Ln => tape.ln(img)?,
    };
    let first = tape.mul(phi, gamma)?;
    let sq = tape.mul(first, first)?;
    let second = tape.scale(sq, T::lit(0.5))?;
    let poly = tape.add(first, second)?;
    let multiplier = tape.add_scalar(poly, T::one())?;
    tape.mul(img, multiplier)
}

/// Plain-tensor form of [`taylor_correct`].
pub fn taylor_correct_tensor<T: Real>(
    img: &Tensor<T>,
    gamma: &Tensor<T>,
    variant: TaylorVariant,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.leaf(img.clone());
    let g = tape.leaf(gamma.clone());
    let y = taylor_correct(&mut tape, x, g, variant)?;
    Ok(tape.value(y).clone())
}

/// `img + net(img)` with ReLU between the six convolutions.
pub fn residual_enhance<T: Real>(tape: &mut Tape<T>, img: Var, p: &DicParams) -> Result<Var> {
    let mut h = img;
    let last = p.enhance.len() - 1;
    for (i, layer) in p.enhance.iter().enumerate() {
        h = layer.conv(tape, h)?;
        if i < last {
            h = tape.relu(h)?;
        }
    }
    tape.add(img, h)
}

/// Full correction chain on the low-frequency base.
pub fn forward<T: Real>(
    tape: &mut Tape<T>,
    lf: Var,
    p: &DicParams,
    order: CorrectionOrder,
) -> Result<Var> {
    match order {
        CorrectionOrder::GlobalToLocal => {
            let g = estimate_global_gamma(tape, lf, p)?;
            let corrected = taylor_correct(tape, lf, g, TaylorVariant::Tanh)?;
            let enhanced = residual_enhance(tape, corrected, p)?;
            let l = estimate_local_gamma(tape, enhanced, p)?;
            taylor_correct(tape, enhanced, l, TaylorVariant::Tanh)
        }
        CorrectionOrder::LocalToGlobal => {
            let l = estimate_local_gamma(tape, lf, p)?;
            let corrected = taylor_correct(tape, lf, l, TaylorVariant::Tanh)?;
            let enhanced = residual_enhance(tape, corrected, p)?;
            let g = estimate_global_gamma(tape, enhanced, p)?;
            taylor_correct(tape, enhanced, g, TaylorVariant::Tanh)
        }
    }
}

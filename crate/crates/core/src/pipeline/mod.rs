//! End-to-end enhancer: decompose, correct the base, denoise the details,
//! reconstruct.

mod accounting;
mod weights_file;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use accounting::{count_params, estimate_flops, FlopReport, ParamCounts, FLOPS_PER_MAC};
pub use weights_file::{load_weights, save_weights, MAGIC, WEIGHTS_VERSION};

use crate::autodiff::{Tape, Var};
use crate::dic::{self, CorrectionOrder, DicParams, DicWeights};
use crate::error::{Error, Result};
use crate::mld::{self, MldParams, MldWeights};
use crate::pyramid::{self, LowpassKernel, TapePyramid};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_LEVELS: usize = 4;
pub const DEFAULT_RESOLUTION: (usize, usize) = (256, 192);
/// Pyramid depths accepted by the pipeline; 0 bypasses enhancement.
pub const LEGAL_LEVELS: [usize; 6] = [0, 2, 3, 4, 5, 6];

pub fn check_levels(levels: usize) -> Result<()> {
    if LEGAL_LEVELS.contains(&levels) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "levels must be one of {LEGAL_LEVELS:?}, got {levels}"
        )))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub levels: usize,
    pub order: CorrectionOrder,
    /// `(height, width)` used for FLOP reports.
    pub resolution: (usize, usize),
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            levels: DEFAULT_LEVELS,
            order: CorrectionOrder::GlobalToLocal,
            resolution: DEFAULT_RESOLUTION,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        check_levels(self.levels)?;
        if self.resolution.0 == 0 || self.resolution.1 == 0 {
            return Err(Error::Config("resolution extents must be positive".into()));
        }
        Ok(())
    }
}

/// All learnable parameters plus the architecture they belong to.
///
/// Flat order: the correction module (when present), then the denoising
/// levels finest first; layers in forward order; weight before bias;
/// row-major within each tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhancerWeights {
    pub levels: usize,
    pub order: CorrectionOrder,
    pub dic: Option<DicWeights>,
    pub mld: MldWeights,
}

impl EnhancerWeights {
    /// Weights with every value zero, or the empty bypass set for `levels == 0`.
    pub fn zeros(levels: usize, order: CorrectionOrder) -> Result<Self> {
        check_levels(levels)?;
        Ok(Self {
            levels,
            order,
            dic: (levels > 0).then(DicWeights::zeros),
            mld: MldWeights::zeros(levels.saturating_sub(1)),
        })
    }

    pub fn is_bypass(&self) -> bool {
        self.levels == 0
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(d) = &self.dic {
            out.extend(
                d.named_tensors()
                    .into_iter()
                    .map(|(n, t)| (format!("dic.{n}"), t)),
            );
        }
        out.extend(
            self.mld
                .named_tensors()
                .into_iter()
                .map(|(n, t)| (format!("mld.{n}"), t)),
        );
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        if let Some(d) = &mut self.dic {
            out.extend(d.tensors_mut());
        }
        out.extend(self.mld.tensors_mut());
        out
    }

    pub fn flat_values(&self) -> Vec<f32> {
        self.named_tensors()
            .iter()
            .flat_map(|(_, t)| t.data().iter().copied())
            .collect()
    }

    pub fn param_len(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Overwrite every parameter from a flat slice in canonical order.
    pub fn set_flat(&mut self, values: &[f32]) -> Result<()> {
        if values.len() != self.param_len() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.param_len()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn bind<T: Real>(&self, tape: &mut Tape<T>) -> Result<EnhancerParams> {
        let vars: Vec<Var> = self
            .named_tensors()
            .into_iter()
            .map(|(_, t)| tape.leaf(t.cast()))
            .collect();
        EnhancerParams::take(&mut vars.into_iter(), self.levels)
    }
}

/// Tape handles for [`EnhancerWeights`], in the same flat order.
#[derive(Clone, Debug)]
pub struct EnhancerParams {
    pub dic: Option<DicParams>,
    pub mld: MldParams,
}

impl EnhancerParams {
    pub fn take(vars: &mut impl Iterator<Item = Var>, levels: usize) -> Result<Self> {
        let dic = if levels > 0 {
            Some(DicParams::take(vars)?)
        } else {
            None
        };
        let mld = MldParams::take(vars, levels.saturating_sub(1))?;
        Ok(Self { dic, mld })
    }

    /// Every parameter handle in flat order.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        if let Some(d) = &self.dic {
            for l in std::iter::once(&d.global_conv)
                .chain(std::iter::once(&d.global_linear))
                .chain(&d.enhance)
                .chain(std::iter::once(&d.local_conv))
            {
                out.extend([l.weight, l.bias]);
            }
        }
        for l in &self.mld.levels {
            for layer in [&l.lift, &l.u_conv, &l.f_conv, &l.out_conv, &l.fuse] {
                out.extend([layer.weight, layer.bias]);
            }
        }
        out
    }
}

/// He-uniform weights, zero biases; deterministic for a seed.
pub fn init_weights(seed: u64, cfg: &RunConfig) -> Result<EnhancerWeights> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dic = (cfg.levels > 0).then(|| DicWeights::init(&mut rng));
    let mld = MldWeights::init(cfg.levels.saturating_sub(1), &mut rng);
    Ok(EnhancerWeights {
        levels: cfg.levels,
        order: cfg.order,
        dic,
        mld,
    })
}

/// Record the enhancement of `img` on a tape. With `levels == 0` the input
/// handle is returned untouched.
pub fn enhance_on<T: Real>(
    tape: &mut Tape<T>,
    img: Var,
    params: &EnhancerParams,
    levels: usize,
    order: CorrectionOrder,
    kernel: &LowpassKernel,
) -> Result<Var> {
    if levels == 0 {
        return Ok(img);
    }
    let dic_params = params.dic.as_ref().ok_or_else(|| {
        Error::IncompatibleWeights("missing illumination-correction weights".into())
    })?;
    let pyr = pyramid::decompose_on(tape, img, levels, kernel)?;
    let lf = dic::forward(tape, pyr.lf_base, dic_params, order)?;
    let hf = mld::forward(tape, &pyr.hf_levels, &params.mld, kernel)?;
    pyramid::reconstruct_on(
        tape,
        &TapePyramid {
            hf_levels: hf,
            lf_base: lf,
        },
        kernel,
    )
}

/// Enhance a `[3, H, W]` image.
pub fn enhance(img: &Tensor, weights: &EnhancerWeights) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    if c != dic::IMAGE_CHANNELS {
        return Err(Error::Shape(format!("expected a 3-channel image, got {c}")));
    }
    if weights.is_bypass() {
        return Ok(img.clone());
    }
    pyramid::check_levels(h, w, weights.levels)?;
    let mut tape = Tape::new();
    let x = tape.leaf(img.clone());
    let params = weights.bind(&mut tape)?;
    let y = enhance_on(
        &mut tape,
        x,
        &params,
        weights.levels,
        weights.order,
        &LowpassKernel::default(),
    )?;
    Ok(tape.value(y).clone())
}

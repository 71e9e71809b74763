//! Low-rank denoising of the high-frequency levels.
//!
//! Each detail level is lifted to `C = 24` feature channels. Two parallel
//! branches produce a rank-3 basis `U` (`hw x 3`) and a feature matrix `F`
//! (`hw x 24`); their product `V = F^T U` (`24 x 3`) gives the coefficients
//! of the projection `U V^T`, which is mapped back to three channels. The
//! denoised levels are then fused across neighbouring scales.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::dic::IMAGE_CHANNELS;
use crate::error::{Error, Result};
use crate::nn::{bind_all, push_layer, ConvLayer, LayerVars};
use crate::pyramid::{down_on, up_on, LowpassKernel};
use crate::tensor::{Real, Tensor};

/// Width of the lifted feature space.
pub const FEATURE_CHANNELS: usize = 24;
/// Inner rank of the factorization.
pub const RANK: usize = 3;
/// Channels seen by the fusion convolution: finer, own and coarser level.
pub const FUSE_CHANNELS: usize = 3 * IMAGE_CHANNELS;

#[derive(Clone, Debug, PartialEq)]
pub struct MldLevelWeights {
    pub lift: ConvLayer,
    pub u_conv: ConvLayer,
    pub f_conv: ConvLayer,
    pub out_conv: ConvLayer,
    pub fuse: ConvLayer,
}

impl MldLevelWeights {
    pub fn zeros() -> Self {
        Self {
            lift: ConvLayer::zeros(IMAGE_CHANNELS, FEATURE_CHANNELS),
            u_conv: ConvLayer::zeros(FEATURE_CHANNELS, RANK),
            f_conv: ConvLayer::zeros(FEATURE_CHANNELS, FEATURE_CHANNELS),
            out_conv: ConvLayer::zeros(FEATURE_CHANNELS, IMAGE_CHANNELS),
            fuse: ConvLayer::zeros(FUSE_CHANNELS, IMAGE_CHANNELS),
        }
    }

    pub fn init(rng: &mut impl Rng) -> Self {
        Self {
            lift: ConvLayer::he_uniform(IMAGE_CHANNELS, FEATURE_CHANNELS, rng),
            u_conv: ConvLayer::he_uniform(FEATURE_CHANNELS, RANK, rng),
            f_conv: ConvLayer::he_uniform(FEATURE_CHANNELS, FEATURE_CHANNELS, rng),
            out_conv: ConvLayer::he_uniform(FEATURE_CHANNELS, IMAGE_CHANNELS, rng),
            fuse: ConvLayer::he_uniform(FUSE_CHANNELS, IMAGE_CHANNELS, rng),
        }
    }

    fn layers(&self) -> [(&'static str, &ConvLayer); 5] {
        [
            ("lift", &self.lift),
            ("u_conv", &self.u_conv),
            ("f_conv", &self.f_conv),
            ("out_conv", &self.out_conv),
            ("fuse", &self.fuse),
        ]
    }

    /// Multiply-accumulates for a level of `h x w` pixels, including the two
    /// factor products.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let convs: u64 = self.layers().iter().map(|(_, l)| l.macs(h, w)).sum();
        convs + 2 * (h * w * FEATURE_CHANNELS * RANK) as u64
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct MldWeights {
    pub levels: Vec<MldLevelWeights>,
}

impl MldWeights {
    pub fn zeros(hf_levels: usize) -> Self {
        Self {
            levels: (0..hf_levels).map(|_| MldLevelWeights::zeros()).collect(),
        }
    }

    pub fn init(hf_levels: usize, rng: &mut impl Rng) -> Self {
        Self {
            levels: (0..hf_levels).map(|_| MldLevelWeights::init(rng)).collect(),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (n, level) in self.levels.iter().enumerate() {
            for (name, layer) in level.layers() {
                push_layer(&mut out, &format!("level{n}.{name}"), layer.tensors());
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for level in &mut self.levels {
            out.extend(level.lift.tensors_mut());
            out.extend(level.u_conv.tensors_mut());
            out.extend(level.f_conv.tensors_mut());
            out.extend(level.out_conv.tensors_mut());
            out.extend(level.fuse.tensors_mut());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn bind<T: Real>(&self, tape: &mut Tape<T>) -> Result<MldParams> {
        let vars = bind_all(tape, self.named_tensors().into_iter().map(|(_, t)| t));
        MldParams::take(&mut vars.into_iter(), self.levels.len())
    }

    /// Denoise and fuse plain tensors (finest level first).
    pub fn forward(&self, hf_levels: &[Tensor]) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let xs: Vec<Var> = hf_levels.iter().map(|t| tape.leaf(t.clone())).collect();
        let p = self.bind(&mut tape)?;
        let ys = forward(&mut tape, &xs, &p, &LowpassKernel::default())?;
        Ok(ys.into_iter().map(|v| tape.value(v).clone()).collect())
    }
}

#[derive(Clone, Debug)]
pub struct MldLevelParams {
    pub lift: LayerVars,
    pub u_conv: LayerVars,
    pub f_conv: LayerVars,
    pub out_conv: LayerVars,
    pub fuse: LayerVars,
}

#[derive(Clone, Debug)]
pub struct MldParams {
    pub levels: Vec<MldLevelParams>,
}

impl MldParams {
    pub fn take(vars: &mut impl Iterator<Item = Var>, hf_levels: usize) -> Result<Self> {
        let levels = (0..hf_levels)
            .map(|_| {
                Ok(MldLevelParams {
                    lift: LayerVars::take(vars)?,
                    u_conv: LayerVars::take(vars)?,
                    f_conv: LayerVars::take(vars)?,
                    out_conv: LayerVars::take(vars)?,
                    fuse: LayerVars::take(vars)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { levels })
    }
}

/// `ReLU(conv(hf))`: `[3, h, w] -> [24, h, w]`.
pub fn lift_features<T: Real>(tape: &mut Tape<T>, hf: Var, p: &MldLevelParams) -> Result<Var> {
    let f = p.lift.conv(tape, hf)?;
    tape.relu(f)
}

/// Rank basis `U = flatten(ReLU(conv(feat)))`, `[h * w, 3]`.
pub fn compute_u<T: Real>(tape: &mut Tape<T>, feat: Var, p: &MldLevelParams) -> Result<Var> {
    let c = p.u_conv.conv(tape, feat)?;
    let r = tape.relu(c)?;
    tape.flatten_spatial(r)
}

/// Feature matrix `F = flatten(ReLU(conv(feat)))`, `[h * w, 24]`.
pub fn compute_f<T: Real>(tape: &mut Tape<T>, feat: Var, p: &MldLevelParams) -> Result<Var> {
    let c = p.f_conv.conv(tape, feat)?;
    let r = tape.relu(c)?;
    tape.flatten_spatial(r)
}

/// Coefficients `V = F^T U`, `[24, 3]`.
pub fn compute_v<T: Real>(tape: &mut Tape<T>, f: Var, u: Var) -> Result<Var> {
    let (fr, _) = tape.value(f).dims2()?;
    let (ur, _) = tape.value(u).dims2()?;
    if fr != ur {
        return Err(Error::Shape(format!("F has {fr} rows but U has {ur}")));
    }
    let ft = tape.transpose(f)?;
    tape.matmul(ft, u)
}

/// `conv(reshape(U V^T))`: rank-limited features mapped back to `[3, h, w]`.
pub fn lowrank_reconstruct<T: Real>(
    tape: &mut Tape<T>,
    u: Var,
    v: Var,
    p: &MldLevelParams,
    (h, w): (usize, usize),
) -> Result<Var> {
    let (rows, ur) = tape.value(u).dims2()?;
    let (_, vr) = tape.value(v).dims2()?;
    if rows != h * w || ur != vr {
        return Err(Error::Shape(format!(
            "U {:?} and V {:?} do not fit a {h}x{w} level",
            tape.value(u).shape(),
            tape.value(v).shape()
        )));
    }
    let vt = tape.transpose(v)?;
    let product = tape.matmul(u, vt)?;
    let feat = tape.unflatten_spatial(product, h, w)?;
    p.out_conv.conv(tape, feat)
}

/// Full low-rank path for one level. `V` is averaged over the `h * w` rows
/// so the projection strength does not grow with level resolution.
pub fn denoise_level<T: Real>(tape: &mut Tape<T>, hf: Var, p: &MldLevelParams) -> Result<Var> {
    let (_, h, w) = tape.value(hf).dims3()?;
    let feat = lift_features(tape, hf, p)?;
    let u = compute_u(tape, feat, p)?;
    let f = compute_f(tape, feat, p)?;
    let v = compute_v(tape, f, u)?;
    let v_mean = tape.scale(v, T::one() / T::from_usize(h * w).unwrap())?;
    lowrank_reconstruct(tape, u, v_mean, p, (h, w))
}

/// Residual fusion of every level with its resized neighbours.
///
/// Level `k` sees `[down(level k-1), level k, up(level k+1)]`; missing
/// neighbours are zero planes.
pub fn cross_scale_fuse<T: Real>(
    tape: &mut Tape<T>,
    denoised: &[Var],
    fuse: &[LayerVars],
    kernel: &LowpassKernel,
) -> Result<Vec<Var>> {
    if denoised.len() != fuse.len() {
        return Err(Error::InvalidArgument(format!(
            "{} levels but {} fusion layers",
            denoised.len(),
            fuse.len()
        )));
    }
    let dims = denoised
        .iter()
        .map(|&v| tape.value(v).dims3())
        .collect::<Result<Vec<_>>>()?;
    for pair in dims.windows(2) {
        let ((c0, h0, w0), (c1, h1, w1)) = (pair[0], pair[1]);
        if c0 != c1 || h0.div_ceil(2) != h1 || w0.div_ceil(2) != w1 {
            return Err(Error::Shape(format!(
                "levels {h0}x{w0} and {h1}x{w1} are not a dyadic chain"
            )));
        }
    }

    let mut out = Vec::with_capacity(denoised.len());
    for (k, (&level, layer)) in denoised.iter().zip(fuse).enumerate() {
        let (c, h, w) = dims[k];
        let zero = || Tensor::<T>::zeros(&[c, h, w]);
        let finer = match k.checked_sub(1) {
            Some(j) => down_on(tape, denoised[j], kernel)?,
            None => tape.leaf(zero()?),
        };
        let coarser = match denoised.get(k + 1) {
            Some(&next) => up_on(tape, next, (h, w), kernel)?,
            None => tape.leaf(zero()?),
        };
        let stacked = tape.concat_channels(&[finer, level, coarser])?;
        let delta = layer.conv(tape, stacked)?;
        out.push(tape.add(level, delta)?);
    }
    Ok(out)
}

/// Denoise every level then fuse across scales.
pub fn forward<T: Real>(
    tape: &mut Tape<T>,
    hf_levels: &[Var],
    p: &MldParams,
    kernel: &LowpassKernel,
) -> Result<Vec<Var>> {
    if hf_levels.len() != p.levels.len() {
        return Err(Error::IncompatibleWeights(format!(
            "{} detail levels but weights for {}",
            hf_levels.len(),
            p.levels.len()
        )));
    }
    let denoised = hf_levels
        .iter()
        .zip(&p.levels)
        .map(|(&hf, lp)| denoise_level(tape, hf, lp))
        .collect::<Result<Vec<_>>>()?;
    let fuse: Vec<LayerVars> = p.levels.iter().map(|l| l.fuse).collect();
    cross_scale_fuse(tape, &denoised, &fuse, kernel)
}

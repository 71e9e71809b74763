//! Finite-difference checks of every tape operator and of the composed
//! correction, denoising and end-to-end graphs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{grad_check, GradCheckOptions, PadMode, Tape, Var};
use crate::dic::{self, CorrectionOrder, DicParams, DicWeights, TaylorVariant};
use crate::error::Result;
use crate::mld::{self, MldParams, MldWeights};
use crate::nn::LayerVars;
use crate::pipeline::{self, EnhancerParams, RunConfig};
use crate::pyramid::{self, LowpassKernel};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckClass {
    /// A single tape operator.
    Atomic,
    /// A graph built from several operators.
    Composed,
}

impl CheckClass {
    pub fn threshold(self) -> f64 {
        match self {
            Self::Atomic => 1e-4,
            Self::Composed => 1e-3,
        }
    }
}

/// Largest share of probed coordinates allowed to sit on a branch boundary.
pub const MAX_SKIPPED_FRACTION: f64 = 0.01;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub class: CheckClass,
    pub threshold: f64,
    pub max_rel_error: f64,
    /// Index of the point that produced `max_rel_error`.
    pub worst_point: usize,
    pub points: usize,
    pub coords_checked: usize,
    pub coords_skipped: usize,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        let probed = self.coords_checked + self.coords_skipped;
        self.coords_checked > 0
            && self.max_rel_error < self.threshold
            && (self.coords_skipped as f64) <= MAX_SKIPPED_FRACTION * probed as f64
    }
}

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub points: usize,
    pub seed: u64,
    pub epsilon: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            points: 10,
            seed: 0,
            epsilon: 1e-3,
        }
    }
}

type Graph = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;
type Point = fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>;

struct Case {
    name: &'static str,
    class: CheckClass,
    point: Point,
    graph: Graph,
    max_coords: Option<usize>,
}

const fn atomic(name: &'static str, point: Point, graph: Graph) -> Case {
    Case {
        name,
        class: CheckClass::Atomic,
        point,
        graph,
        max_coords: None,
    }
}

const fn composed(
    name: &'static str,
    point: Point,
    graph: Graph,
    max_coords: Option<usize>,
) -> Case {
    Case {
        name,
        class: CheckClass::Composed,
        point,
        graph,
        max_coords,
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi)).expect("valid shape")
}

fn signed(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    uniform(rng, shape, -1.0, 1.0)
}

fn conv_point(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    vec![
        signed(rng, &[2, 5, 4]),
        signed(rng, &[3, 2, 3, 3]),
        signed(rng, &[3]),
    ]
}

fn image_and_dic(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let mut out = vec![uniform(rng, &[3, 8, 8], 0.05, 1.0)];
    let w = DicWeights::init(rng);
    out.extend(w.named_tensors().into_iter().map(|(_, t)| t.cast()));
    out
}

fn dic_params(v: &[Var]) -> Result<DicParams> {
    DicParams::take(&mut v[1..].iter().copied())
}

fn levels_and_mld(rng: &mut ChaCha8Rng, extents: &[(usize, usize)]) -> Vec<Tensor<f64>> {
    let mut out: Vec<Tensor<f64>> = extents
        .iter()
        .map(|&(h, w)| uniform(rng, &[3, h, w], -0.5, 0.5))
        .collect();
    let w = MldWeights::init(extents.len(), rng);
    out.extend(w.named_tensors().into_iter().map(|(_, t)| t.cast()));
    out
}

fn mld_params(v: &[Var], levels: usize) -> Result<MldParams> {
    MldParams::take(&mut v[levels..].iter().copied(), levels)
}

/// Stack tensors of any shape into one `[n, 1, 1]` output.
fn concat_levels(t: &mut Tape<f64>, parts: &[Var]) -> Result<Var> {
    let columns: Vec<Var> = parts
        .iter()
        .map(|&p| {
            let n = t.value(p).len();
            t.reshape(p, &[n, 1, 1])
        })
        .collect::<Result<_>>()?;
    t.concat_channels(&columns)
}

const MLD_EXTENTS: [(usize, usize); 3] = [(8, 8), (4, 4), (2, 2)];
const PIPELINE_LEVELS: usize = 3;

fn cases() -> Vec<Case> {
    vec![
        atomic("conv2d_zero_pad", conv_point, |t, v| {
            t.conv2d(v[0], v[1], v[2], 1, PadMode::Zero)
        }),
        atomic("conv2d_reflect_pad", conv_point, |t, v| {
            t.conv2d(v[0], v[1], v[2], 1, PadMode::Reflect)
        }),
        atomic(
            "conv2d_stride2",
            |r| {
                vec![
                    signed(r, &[2, 6, 5]),
                    signed(r, &[2, 2, 3, 3]),
                    signed(r, &[2]),
                ]
            },
            |t, v| t.conv2d(v[0], v[1], v[2], 2, PadMode::Zero),
        ),
        atomic(
            "linear",
            |r| vec![signed(r, &[5]), signed(r, &[4, 5]), signed(r, &[4])],
            |t, v| t.linear(v[0], v[1], v[2]),
        ),
        atomic(
            "global_avg_pool",
            |r| vec![signed(r, &[3, 4, 5])],
            |t, v| t.global_avg_pool(v[0]),
        ),
        atomic(
            "sigmoid",
            |r| vec![uniform(r, &[2, 3, 4], -4.0, 4.0)],
            |t, v| t.sigmoid(v[0]),
        ),
        atomic(
            "tanh",
            |r| vec![uniform(r, &[2, 3, 4], -3.0, 3.0)],
            |t, v| t.tanh(v[0]),
        ),
        atomic("relu", |r| vec![signed(r, &[2, 3, 4])], |t, v| t.relu(v[0])),
        atomic(
            "ln",
            |r| vec![uniform(r, &[2, 3, 4], 0.1, 2.0)],
            |t, v| t.ln(v[0]),
        ),
        atomic(
            "matmul",
            |r| vec![signed(r, &[4, 3]), signed(r, &[3, 5])],
            |t, v| t.matmul(v[0], v[1]),
        ),
        atomic(
            "transpose",
            |r| vec![signed(r, &[3, 4])],
            |t, v| t.transpose(v[0]),
        ),
        atomic(
            "reshape",
            |r| vec![signed(r, &[2, 3, 4])],
            |t, v| t.reshape(v[0], &[6, 4]),
        ),
        atomic(
            "flatten_spatial",
            |r| vec![signed(r, &[3, 2, 4])],
            |t, v| t.flatten_spatial(v[0]),
        ),
        atomic(
            "unflatten_spatial",
            |r| vec![signed(r, &[8, 3])],
            |t, v| t.unflatten_spatial(v[0], 2, 4),
        ),
        atomic(
            "add",
            |r| vec![signed(r, &[2, 3, 4]), signed(r, &[2, 3, 4])],
            |t, v| t.add(v[0], v[1]),
        ),
        atomic(
            "add_per_channel",
            |r| vec![signed(r, &[2, 3, 4]), signed(r, &[2])],
            |t, v| t.add(v[0], v[1]),
        ),
        atomic(
            "sub",
            |r| vec![signed(r, &[2, 3, 4]), signed(r, &[2, 3, 4])],
            |t, v| t.sub(v[0], v[1]),
        ),
        atomic(
            "mul",
            |r| vec![signed(r, &[2, 3, 4]), signed(r, &[2, 3, 4])],
            |t, v| t.mul(v[0], v[1]),
        ),
        atomic(
            "mul_per_channel",
            |r| vec![signed(r, &[2, 3, 4]), signed(r, &[2])],
            |t, v| t.mul(v[0], v[1]),
        ),
        atomic(
            "scale",
            |r| vec![signed(r, &[2, 3, 4])],
            |t, v| t.scale(v[0], -1.7),
        ),
        atomic(
            "add_scalar",
            |r| vec![signed(r, &[2, 3, 4])],
            |t, v| t.add_scalar(v[0], 0.3),
        ),
        atomic(
            "concat_channels",
            |r| {
                vec![
                    signed(r, &[1, 3, 2]),
                    signed(r, &[2, 3, 2]),
                    signed(r, &[1, 3, 2]),
                ]
            },
            |t, v| t.concat_channels(v),
        ),
        atomic("sum", |r| vec![signed(r, &[2, 3, 4])], |t, v| t.sum(v[0])),
        atomic(
            "mean_abs_diff",
            |r| vec![signed(r, &[2, 3, 4]), signed(r, &[2, 3, 4])],
            |t, v| t.mean_abs_diff(v[0], v[1]),
        ),
        atomic(
            "gaussian_down",
            |r| vec![signed(r, &[2, 7, 6])],
            |t, v| pyramid::down_on(t, v[0], &LowpassKernel::default()),
        ),
        atomic(
            "gaussian_up",
            |r| vec![signed(r, &[2, 4, 3])],
            |t, v| pyramid::up_on(t, v[0], (7, 6), &LowpassKernel::default()),
        ),
        composed(
            "taylor_correct_tanh",
            |r| vec![uniform(r, &[3, 4, 5], 0.0, 1.0), uniform(r, &[3], 0.0, 1.0)],
            |t, v| dic::taylor_correct(t, v[0], v[1], TaylorVariant::Tanh),
            None,
        ),
        composed(
            "taylor_correct_tanh_local",
            |r| {
                vec![
                    uniform(r, &[3, 4, 5], 0.0, 1.0),
                    uniform(r, &[3, 4, 5], 0.0, 1.0),
                ]
            },
            |t, v| dic::taylor_correct(t, v[0], v[1], TaylorVariant::Tanh),
            None,
        ),
        composed(
            "taylor_correct_ln",
            |r| {
                vec![
                    uniform(r, &[3, 4, 5], 0.05, 1.0),
                    uniform(r, &[3], 0.0, 1.0),
                ]
            },
            |t, v| dic::taylor_correct(t, v[0], v[1], TaylorVariant::Ln),
            None,
        ),
        composed(
            "dic_global_gamma",
            image_and_dic,
            |t, v| dic::estimate_global_gamma(t, v[0], &dic_params(v)?),
            Some(12),
        ),
        composed(
            "dic_local_gamma",
            image_and_dic,
            |t, v| dic::estimate_local_gamma(t, v[0], &dic_params(v)?),
            Some(12),
        ),
        composed(
            "dic_residual_enhance",
            image_and_dic,
            |t, v| dic::residual_enhance(t, v[0], &dic_params(v)?),
            Some(12),
        ),
        composed(
            "dic_forward_global_to_local",
            image_and_dic,
            |t, v| dic::forward(t, v[0], &dic_params(v)?, CorrectionOrder::GlobalToLocal),
            Some(12),
        ),
        composed(
            "dic_forward_local_to_global",
            image_and_dic,
            |t, v| dic::forward(t, v[0], &dic_params(v)?, CorrectionOrder::LocalToGlobal),
            Some(12),
        ),
        composed(
            "pyramid_round_trip",
            |r| vec![signed(r, &[3, 9, 8])],
            |t, v| {
                let k = LowpassKernel::default();
                let pyr = pyramid::decompose_on(t, v[0], 3, &k)?;
                pyramid::reconstruct_on(t, &pyr, &k)
            },
            None,
        ),
        composed(
            "pyramid_levels",
            |r| vec![signed(r, &[3, 9, 8])],
            |t, v| {
                let pyr = pyramid::decompose_on(t, v[0], 3, &LowpassKernel::default())?;
                let mut parts = pyr.hf_levels.clone();
                parts.push(pyr.lf_base);
                concat_levels(t, &parts)
            },
            None,
        ),
        composed(
            "mld_denoise_level",
            |r| levels_and_mld(r, &MLD_EXTENTS[..1]),
            |t, v| mld::denoise_level(t, v[0], &mld_params(v, 1)?.levels[0]),
            Some(12),
        ),
        composed(
            "mld_cross_scale_fuse",
            |r| levels_and_mld(r, &MLD_EXTENTS),
            |t, v| {
                let p = mld_params(v, 3)?;
                let fuse: Vec<LayerVars> = p.levels.iter().map(|l| l.fuse).collect();
                let out = mld::cross_scale_fuse(t, &v[..3], &fuse, &LowpassKernel::default())?;
                concat_levels(t, &out)
            },
            Some(12),
        ),
        composed(
            "mld_forward",
            |r| levels_and_mld(r, &MLD_EXTENTS),
            |t, v| {
                let out = mld::forward(t, &v[..3], &mld_params(v, 3)?, &LowpassKernel::default())?;
                concat_levels(t, &out)
            },
            Some(8),
        ),
        composed(
            "pipeline",
            |r| {
                let mut out = vec![uniform(r, &[3, 32, 32], 0.0, 1.0)];
                let cfg = RunConfig {
                    levels: PIPELINE_LEVELS,
                    ..RunConfig::default()
                };
                let w = pipeline::init_weights(r.random(), &cfg).expect("legal config");
                out.extend(w.named_tensors().into_iter().map(|(_, t)| t.cast()));
                out
            },
            |t, v| {
                let p = EnhancerParams::take(&mut v[1..].iter().copied(), PIPELINE_LEVELS)?;
                pipeline::enhance_on(
                    t,
                    v[0],
                    &p,
                    PIPELINE_LEVELS,
                    CorrectionOrder::GlobalToLocal,
                    &LowpassKernel::default(),
                )
            },
            Some(4),
        ),
    ]
}

/// Names of every check, in run order.
pub fn case_names() -> Vec<&'static str> {
    cases().iter().map(|c| c.name).collect()
}

/// Run every check whose name contains `filter` (all when `None`) at
/// `opts.points` seeded points. `on_entry` sees each result as it finishes.
pub fn run_suite(
    opts: &SuiteOptions,
    filter: Option<&str>,
    mut on_entry: impl FnMut(&SuiteEntry),
) -> Result<Vec<SuiteEntry>> {
    let mut out = Vec::new();
    for (ci, case) in cases().into_iter().enumerate() {
        if filter.is_some_and(|f| !case.name.contains(f)) {
            continue;
        }
        let mut entry = SuiteEntry {
            name: case.name,
            class: case.class,
            threshold: case.class.threshold(),
            max_rel_error: 0.0,
            worst_point: 0,
            points: opts.points,
            coords_checked: 0,
            coords_skipped: 0,
        };
        for p in 0..opts.points {
            let seed = opts.seed ^ ((ci as u64) << 32) ^ p as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let point = (case.point)(&mut rng);
            let check = GradCheckOptions {
                epsilon: opts.epsilon,
                max_coords_per_input: case.max_coords,
                seed,
            };
            let r = grad_check(case.graph, &point, &check)?;
            if r.max_rel_error > entry.max_rel_error {
                entry.max_rel_error = r.max_rel_error;
                entry.worst_point = p;
            }
            entry.coords_checked += r.coords_checked;
            entry.coords_skipped += r.coords_skipped;
        }
        on_entry(&entry);
        out.push(entry);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut names = case_names();
        let n = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), n);
    }

    #[test]
    fn filter_selects_cases() {
        let opts = SuiteOptions {
            points: 1,
            ..SuiteOptions::default()
        };
        let r = run_suite(&opts, Some("linear"), |_| {}).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].name, "linear");
        assert!(r[0].passed(), "{:?}", r[0]);
    }
}

//! Central-difference verification of tape gradients.
//!
//! The graph under test is rebuilt in `f64` for every probe, so the
//! finite-difference side is not limited by single-precision rounding.
//! Vector-valued outputs are reduced to a scalar with a fixed random
//! projection before differentiating.
//!
//! A probe whose perturbation flips a non-smooth branch (a ReLU gate, the
//! sign in an absolute difference) does not measure the derivative. Such
//! probes are retried with a step ten times smaller, up to
//! [`MAX_REFINEMENTS`] times; coordinates that still straddle a branch are
//! counted as skipped rather than compared.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAX_REFINEMENTS: usize = 3;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Probe at most this many coordinates per input tensor (all when `None`).
    pub max_coords_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            max_coords_per_input: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coords_checked: usize,
    /// Coordinates compared with a reduced step.
    pub coords_refined: usize,
    /// Coordinates sitting on a branch boundary at every step size.
    pub coords_skipped: usize,
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn evaluate<F>(
    f: &F,
    point: &[Tensor<f64>],
    projection: &mut Option<Tensor<f64>>,
    seed: u64,
) -> Result<(Tape<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let out_value = tape.value(out);
    if !out_value.is_finite() {
        return Err(Error::NonFinite("gradient-check forward".into()));
    }
    let weights = match projection {
        Some(p) => p.clone(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_face);
            let p = Tensor::from_fn(out_value.shape(), |_| rng.random_range(-1.0..1.0))?;
            *projection = Some(p.clone());
            p
        }
    };
    let loss = tape.weighted_sum(out, weights)?;
    Ok((tape, vars, loss))
}

/// Compare tape gradients of `f` at `point` with central differences.
///
/// Returns the maximum over probed coordinates of
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(
    f: F,
    point: &[Tensor<f64>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if opts.epsilon.is_nan() || opts.epsilon <= 0.0 {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    if point.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("gradient-check point".into()));
    }
    let mut projection = None;
    let (tape, vars, loss) = evaluate(&f, point, &mut projection, opts.seed)?;
    let pattern = tape.branch_pattern();
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.wrt(v)).collect::<Result<_>>()?;
    if analytic.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("analytic gradient".into()));
    }
    drop(tape);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
        coords_refined: 0,
        coords_skipped: 0,
    };
    let mut probe = point.to_vec();
    for (input, tensor) in point.iter().enumerate() {
        let n = tensor.len();
        let coords: Vec<usize> = match opts.max_coords_per_input {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for j in coords {
            let x0 = tensor.data()[j];
            let mut step = opts.epsilon;
            let mut numeric = None;
            for attempt in 0..=MAX_REFINEMENTS {
                probe[input].data_mut()[j] = x0 + step;
                let (tp, _, lp) = evaluate(&f, &probe, &mut projection, opts.seed)?;
                probe[input].data_mut()[j] = x0 - step;
                let (tm, _, lm) = evaluate(&f, &probe, &mut projection, opts.seed)?;
                probe[input].data_mut()[j] = x0;
                if tp.branch_pattern() == pattern && tm.branch_pattern() == pattern {
                    if attempt > 0 {
                        report.coords_refined += 1;
                    }
                    let (fp, fm) = (tp.value(lp).data()[0], tm.value(lm).data()[0]);
                    numeric = Some((fp - fm) / (2.0 * step));
                    break;
                }
                step /= 10.0;
            }
            let Some(numeric) = numeric else {
                report.coords_skipped += 1;
                continue;
            };
            if !numeric.is_finite() {
                return Err(Error::NonFinite("finite difference".into()));
            }
            let err = relative_error(analytic[input].data()[j], numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((input, j));
            }
        }
    }
    Ok(report)
}

//! Reverse-mode differentiation over a linear tape.
//!
//! Every operator evaluates eagerly, pushes its result onto the tape and
//! remembers how to pull gradients back to its inputs. [`Tape::backward`]
//! replays the tape in reverse from a scalar loss.

pub mod gradcheck;
pub mod kernels;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use kernels::PadMode;
use kernels::{ConvGeom, Resample1d};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(0);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

/// 2-D resampling along height and width, shared between a forward op and
/// its adjoint.
#[derive(Clone, Debug)]
pub struct Resample2d<T> {
    pub rows: Resample1d<T>,
    pub cols: Resample1d<T>,
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        padded: Vec<T>,
        geom: ConvGeom,
        pad: usize,
        mode: PadMode,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    GlobalAvgPool(Var),
    Activation(Var, Activation),
    Ln(Var),
    Matmul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    FlattenSpatial(Var),
    UnflattenSpatial(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    ConcatChannels(Vec<Var>),
    Sum(Var),
    WeightedSum(Var, Tensor<T>),
    MeanAbsDiff(Var, Var),
    Resample(Var, Arc<Resample2d<T>>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

pub struct Tape<T: Real = f32> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    /// Gradient of `v`; exactly zero when the loss does not reach it.
    pub fn wrt(&self, v: Var) -> Result<Tensor<T>> {
        if v.tape != self.tape || v.index >= self.shapes.len() {
            return Err(Error::ForeignVar);
        }
        match self.get(v) {
            Some(g) => Ok(g.clone()),
            None => Tensor::zeros(&self.shapes[v.index]),
        }
    }
}

/// Broadcast relation between the two operands of a binary elementwise op.
#[derive(Clone, Copy)]
enum Broadcast {
    Same,
    /// Right operand is `[C]` spread over a `[C, H, W]` left operand.
    PerChannel {
        c: usize,
        plane: usize,
    },
}

fn broadcast_kind(a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a == b {
        return Ok(Broadcast::Same);
    }
    if let ([c, h, w], [cb]) = (a, b) {
        if c == cb {
            return Ok(Broadcast::PerChannel {
                c: *c,
                plane: h * w,
            });
        }
    }
    Err(Error::Shape(format!("cannot broadcast {b:?} onto {a:?}")))
}

fn reduce_per_channel<T: Real>(g: &[T], c: usize, plane: usize) -> Vec<T> {
    (0..c)
        .map(|ch| g[ch * plane..(ch + 1) * plane].iter().copied().sum())
        .collect()
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(())
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Record an input or parameter.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.index].value
    }

    /// Branch taken by every non-smooth operation recorded so far: ReLU
    /// gates and the sign inside mean absolute differences. Equal patterns
    /// mean two evaluations of one graph lie on the same smooth piece.
    pub fn branch_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Activation(x, Activation::Relu) => {
                    out.extend(
                        self.nodes[x.index]
                            .value
                            .data()
                            .iter()
                            .map(|&v| v > T::zero()),
                    );
                }
                Op::MeanAbsDiff(a, b) => {
                    let (a, b) = (&self.nodes[a.index].value, &self.nodes[b.index].value);
                    out.extend(a.data().iter().zip(b.data()).map(|(&x, &y)| x > y));
                }
                _ => {}
            }
        }
        out
    }

    /// 2-D convolution of a `[Cin, H, W]` input with a `[Cout, Cin, kh, kw]`
    /// kernel, padding `kh / 2` on each side.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        mode: PadMode,
    ) -> Result<Var> {
        self.check(input)?;
        self.check(kernel)?;
        self.check(bias)?;
        let (cin, h, w) = self.value(input).dims3()?;
        let (cout, kcin, kh, kw) = match self.value(kernel).shape()[..] {
            [a, b, c, d] => (a, b, c, d),
            ref s => {
                return Err(Error::Shape(format!(
                    "kernel must be [Cout, Cin, kh, kw], got {s:?}"
                )))
            }
        };
        if kcin != cin {
            return Err(Error::Shape(format!(
                "kernel expects {kcin} input channels, input has {cin}"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 || kh != kw {
            return Err(Error::InvalidArgument(format!(
                "kernel must be square and odd, got {kh}x{kw}"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be >= 1".into()));
        }
        if self.value(bias).shape() != [cout] {
            return Err(Error::Shape(format!(
                "bias must be [{cout}], got {:?}",
                self.value(bias).shape()
            )));
        }
        let p = kh / 2;
        if mode == PadMode::Reflect && (h <= p || w <= p) {
            return Err(Error::InvalidArgument(format!(
                "reflect padding of {p} needs extents > {p}, got {h}x{w}"
            )));
        }
        let padded = kernels::pad(self.value(input).data(), cin, h, w, p, mode);
        let geom = ConvGeom::new(cin, cout, h + 2 * p, w + 2 * p, kh, kw, stride);
        let out = kernels::conv2d_forward(
            &padded,
            self.value(kernel).data(),
            self.value(bias).data(),
            &geom,
        );
        let value = Tensor::new(&[cout, geom.ho, geom.wo], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                padded,
                geom,
                pad: p,
                mode,
            },
        ))
    }

    /// `weight [m, k] * input [k] + bias [m]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        self.check(input)?;
        self.check(weight)?;
        self.check(bias)?;
        let (m, k) = self.value(weight).dims2()?;
        let x = self.value(input);
        if x.shape() != [k] {
            return Err(Error::Shape(format!(
                "linear expects input [{k}], got {:?}",
                x.shape()
            )));
        }
        if self.value(bias).shape() != [m] {
            return Err(Error::Shape(format!(
                "linear expects bias [{m}], got {:?}",
                self.value(bias).shape()
            )));
        }
        let wd = self.value(weight).data();
        let bd = self.value(bias).data();
        let out: Vec<T> = (0..m)
            .map(|i| kernels::dot(&wd[i * k..(i + 1) * k], x.data()) + bd[i])
            .collect();
        let value = Tensor::new(&[m], out)?;
        Ok(self.push(
            value,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let (c, h, w) = self.value(input).dims3()?;
        let n = T::from_usize(h * w).unwrap();
        let d = self.value(input).data();
        let out: Vec<T> = (0..c)
            .map(|ch| d[ch * h * w..(ch + 1) * h * w].iter().copied().sum::<T>() / n)
            .collect();
        let value = Tensor::new(&[c], out)?;
        Ok(self.push(value, Op::GlobalAvgPool(input)))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Result<Var> {
        self.check(input)?;
        // Saturated values are pulled to the nearest representable interior
        // point so the open output ranges hold in finite precision.
        let f: fn(T) -> T = match kind {
            Activation::Sigmoid => |x| {
                let s = T::one() / (T::one() + (-x).exp());
                s.max(T::min_positive_value())
                    .min(T::one() - T::epsilon() / T::lit(2.0))
            },
            Activation::Tanh => |x| {
                let edge = T::one() - T::epsilon() / T::lit(2.0);
                x.tanh().max(-edge).min(edge)
            },
            Activation::Relu => |x| if x > T::zero() { x } else { T::zero() },
        };
        let value = self.value(input).map(f);
        Ok(self.push(value, Op::Activation(input, kind)))
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        self.activation(input, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, input: Var) -> Result<Var> {
        self.activation(input, Activation::Tanh)
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.activation(input, Activation::Relu)
    }

    /// Natural logarithm; every input value must be strictly positive.
    pub fn ln(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        if self
            .value(input)
            .data()
            .iter()
            .any(|&v| v.is_nan() || v <= T::zero())
        {
            return Err(Error::InvalidArgument(
                "ln requires strictly positive input".into(),
            ));
        }
        let value = self.value(input).map(|x| x.ln());
        Ok(self.push(value, Op::Ln(input)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul [{m}, {k}] x [{k2}, {n}]")));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(&[m, n], out)?;
        Ok(self.push(value, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let (r, c) = self.value(a).dims2()?;
        let value = Tensor::new(&[c, r], kernels::transpose(self.value(a).data(), r, c))?;
        Ok(self.push(value, Op::Transpose(a)))
    }

    /// Row-major reinterpretation with the same element count.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a)?;
        let value = self.value(a).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// `[C, h, w] -> [h * w, C]`: spatial index major, channel minor, so
    /// element `(c, y, x)` lands at row `y * w + x`, column `c`.
    pub fn flatten_spatial(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let (c, h, w) = self.value(a).dims3()?;
        let value = Tensor::new(
            &[h * w, c],
            kernels::transpose(self.value(a).data(), c, h * w),
        )?;
        Ok(self.push(value, Op::FlattenSpatial(a)))
    }

    /// Inverse of [`Tape::flatten_spatial`]: `[h * w, C] -> [C, h, w]`.
    pub fn unflatten_spatial(&mut self, a: Var, h: usize, w: usize) -> Result<Var> {
        self.check(a)?;
        let (rows, c) = self.value(a).dims2()?;
        if rows != h * w {
            return Err(Error::Shape(format!(
                "{rows} rows cannot unflatten to {h}x{w}"
            )));
        }
        let value = Tensor::new(
            &[c, h, w],
            kernels::transpose(self.value(a).data(), rows, c),
        )?;
        Ok(self.push(value, Op::UnflattenSpatial(a)))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = match broadcast_kind(ta.shape(), tb.shape())? {
            Broadcast::Same => ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| f(x, y))
                .collect(),
            Broadcast::PerChannel { plane, .. } => ta
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, tb.data()[i / plane]))
                .collect(),
        };
        Tensor::new(ta.shape(), data)
    }

    /// Elementwise sum; `b` may be a per-channel `[C]` vector over `[C, H, W]`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Elementwise product; `b` may be a per-channel `[C]` vector over `[C, H, W]`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        self.check(a)?;
        let value = self.value(a).map(|x| x * s);
        Ok(self.push(value, Op::Scale(a, s)))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Result<Var> {
        self.check(a)?;
        let value = self.value(a).map(|x| x + s);
        Ok(self.push(value, Op::AddScalar(a)))
    }

    /// Stack `[C_i, H, W]` inputs along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("nothing to concatenate".into()));
        }
        let mut data = Vec::new();
        let mut channels = 0;
        let mut hw = None;
        for &p in parts {
            self.check(p)?;
            let (c, h, w) = self.value(p).dims3()?;
            match hw {
                None => hw = Some((h, w)),
                Some(e) if e != (h, w) => {
                    return Err(Error::Shape(format!(
                        "concat of {e:?} and {:?} planes",
                        (h, w)
                    )))
                }
                _ => {}
            }
            channels += c;
            data.extend_from_slice(self.value(p).data());
        }
        let (h, w) = hw.unwrap();
        let value = Tensor::new(&[channels, h, w], data)?;
        Ok(self.push(value, Op::ConcatChannels(parts.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let value = Tensor::scalar(self.value(a).sum());
        Ok(self.push(value, Op::Sum(a)))
    }

    /// `sum(a * weights)` against a constant weight tensor.
    pub fn weighted_sum(&mut self, a: Var, weights: Tensor<T>) -> Result<Var> {
        self.check(a)?;
        if self.value(a).shape() != weights.shape() {
            return Err(Error::Shape(format!(
                "weighted_sum of {:?} with {:?}",
                self.value(a).shape(),
                weights.shape()
            )));
        }
        let s = kernels::dot(self.value(a).data(), weights.data());
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum(a, weights)))
    }

    /// Mean absolute difference (L1 loss).
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "l1 between {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let n = T::from_usize(ta.len()).unwrap();
        let s: T = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| (x - y).abs())
            .sum();
        Ok(self.push(Tensor::scalar(s / n), Op::MeanAbsDiff(a, b)))
    }

    /// Separable linear resampling of a `[C, H, W]` input.
    pub fn resample(&mut self, a: Var, map: Arc<Resample2d<T>>) -> Result<Var> {
        self.check(a)?;
        let (c, h, w) = self.value(a).dims3()?;
        if (h, w) != (map.rows.in_len, map.cols.in_len) {
            return Err(Error::Shape(format!(
                "resampler expects {}x{}, got {h}x{w}",
                map.rows.in_len, map.cols.in_len
            )));
        }
        let out = kernels::resample2d(self.value(a).data(), c, &map.rows, &map.cols);
        let value = Tensor::new(&[c, map.rows.out_len, map.cols.out_len], out)?;
        Ok(self.push(value, Op::Resample(a, map)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss)?;
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.index] = Some(Tensor::full(lv.shape(), T::one())?);

        for i in (0..=loss.index).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.pullback(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn pullback(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let gd = g.data();
        let mut acc = |v: Var, data: Vec<T>| -> Result<()> {
            let shape = self.nodes[v.index].value.shape();
            let t = Tensor::new(shape, data)?;
            match &mut grads[v.index] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => {
                    *slot = Some(t);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                padded,
                geom,
                pad,
                mode,
            } => {
                let (g_pad, g_k, g_b) =
                    kernels::conv2d_backward(padded, self.value(*kernel).data(), gd, geom);
                let (cin, h, w) = self.value(*input).dims3()?;
                acc(*input, kernels::unpad(&g_pad, cin, h, w, *pad, *mode))?;
                acc(*kernel, g_k)?;
                acc(*bias, g_b)?;
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let (m, k) = self.value(*weight).dims2()?;
                let x = self.value(*input).data();
                let wd = self.value(*weight).data();
                let mut gx = vec![T::zero(); k];
                let mut gw = vec![T::zero(); m * k];
                for r in 0..m {
                    kernels::axpy(gd[r], &wd[r * k..(r + 1) * k], &mut gx);
                    kernels::axpy(gd[r], x, &mut gw[r * k..(r + 1) * k]);
                }
                acc(*input, gx)?;
                acc(*weight, gw)?;
                acc(*bias, gd.to_vec())?;
            }
            Op::GlobalAvgPool(input) => {
                let (c, h, w) = self.value(*input).dims3()?;
                let n = T::from_usize(h * w).unwrap();
                let gx = (0..c * h * w).map(|j| gd[j / (h * w)] / n).collect();
                acc(*input, gx)?;
            }
            Op::Activation(input, kind) => {
                let y = node.value.data();
                let gx = match kind {
                    Activation::Sigmoid => y
                        .iter()
                        .zip(gd)
                        .map(|(&s, &g)| g * s * (T::one() - s))
                        .collect(),
                    Activation::Tanh => y
                        .iter()
                        .zip(gd)
                        .map(|(&t, &g)| g * (T::one() - t * t))
                        .collect(),
                    Activation::Relu => self
                        .value(*input)
                        .data()
                        .iter()
                        .zip(gd)
                        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
                        .collect(),
                };
                acc(*input, gx)?;
            }
            Op::Ln(input) => {
                let gx = self
                    .value(*input)
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&x, &g)| g / x)
                    .collect();
                acc(*input, gx)?;
            }
            Op::Matmul(a, b) => {
                let (m, k) = self.value(*a).dims2()?;
                let (_, n) = self.value(*b).dims2()?;
                let bt = kernels::transpose(self.value(*b).data(), k, n);
                let at = kernels::transpose(self.value(*a).data(), m, k);
                acc(*a, kernels::matmul(gd, &bt, m, n, k))?;
                acc(*b, kernels::matmul(&at, gd, k, m, n))?;
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims2()?;
                acc(*a, kernels::transpose(gd, c, r))?;
            }
            Op::Reshape(a) => acc(*a, gd.to_vec())?,
            Op::FlattenSpatial(a) => {
                let (c, h, w) = self.value(*a).dims3()?;
                acc(*a, kernels::transpose(gd, h * w, c))?;
            }
            Op::UnflattenSpatial(a) => {
                let (rows, c) = self.value(*a).dims2()?;
                acc(*a, kernels::transpose(gd, c, rows))?;
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let negate = matches!(node.op, Op::Sub(..));
                acc(*a, gd.to_vec())?;
                let gb: Vec<T> =
                    match broadcast_kind(self.value(*a).shape(), self.value(*b).shape())? {
                        Broadcast::Same => gd.to_vec(),
                        Broadcast::PerChannel { c, plane } => reduce_per_channel(gd, c, plane),
                    };
                acc(
                    *b,
                    if negate {
                        gb.into_iter().map(|v| -v).collect()
                    } else {
                        gb
                    },
                )?;
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                match broadcast_kind(self.value(*a).shape(), self.value(*b).shape())? {
                    Broadcast::Same => {
                        acc(*a, gd.iter().zip(bd).map(|(&g, &y)| g * y).collect())?;
                        acc(*b, gd.iter().zip(ad).map(|(&g, &x)| g * x).collect())?;
                    }
                    Broadcast::PerChannel { c, plane } => {
                        acc(
                            *a,
                            gd.iter()
                                .enumerate()
                                .map(|(j, &g)| g * bd[j / plane])
                                .collect(),
                        )?;
                        let prod: Vec<T> = gd.iter().zip(ad).map(|(&g, &x)| g * x).collect();
                        acc(*b, reduce_per_channel(&prod, c, plane))?;
                    }
                }
            }
            Op::Scale(a, s) => acc(*a, gd.iter().map(|&g| g * *s).collect())?,
            Op::AddScalar(a) => acc(*a, gd.to_vec())?,
            Op::ConcatChannels(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    acc(p, gd[offset..offset + n].to_vec())?;
                    offset += n;
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                acc(*a, vec![gd[0]; n])?;
            }
            Op::WeightedSum(a, weights) => {
                acc(*a, weights.data().iter().map(|&r| r * gd[0]).collect())?
            }
            Op::MeanAbsDiff(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let n = T::from_usize(ad.len()).unwrap();
                let ga: Vec<T> = ad
                    .iter()
                    .zip(bd)
                    .map(|(&x, &y)| {
                        let d = x - y;
                        let s = if d > T::zero() {
                            T::one()
                        } else if d < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        s * gd[0] / n
                    })
                    .collect();
                let gb = ga.iter().map(|&v| -v).collect();
                acc(*a, ga)?;
                acc(*b, gb)?;
            }
            Op::Resample(a, map) => {
                let (c, _, _) = self.value(*a).dims3()?;
                acc(*a, kernels::resample2d_adjoint(gd, c, &map.rows, &map.cols))?;
            }
        }
        Ok(())
    }
}

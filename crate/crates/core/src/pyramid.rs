//! Laplacian pyramid decomposition and reconstruction.
//!
//! Level `k` of the Gaussian stack is `g_{k+1} = down(g_k)`; each detail
//! level stores `g_k - up(down(g_k))` and the coarsest Gaussian level is kept
//! as the low-frequency base. Folding back from coarse to fine recovers the
//! source exactly (up to rounding) for any low-pass kernel, since the same
//! `up` is applied on both sides.

use std::sync::Arc;

use crate::autodiff::kernels::{self, Resample1d};
use crate::autodiff::{Resample2d, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const MIN_LEVELS: usize = 2;
pub const MAX_LEVELS: usize = 6;

/// Separable odd-length low-pass filter.
#[derive(Clone, Debug, PartialEq)]
pub struct LowpassKernel {
    taps: Vec<f64>,
}

impl Default for LowpassKernel {
    fn default() -> Self {
        Self::binomial5()
    }
}

impl LowpassKernel {
    /// The 5-tap binomial `[1, 4, 6, 4, 1] / 16`.
    pub fn binomial5() -> Self {
        Self {
            taps: [1.0, 4.0, 6.0, 4.0, 1.0].iter().map(|v| v / 16.0).collect(),
        }
    }

    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.len().is_multiple_of(2) || taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument(
                "low-pass kernel needs an odd number of finite taps".into(),
            ));
        }
        Ok(Self { taps })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    fn taps_as<T: Real>(&self) -> Vec<T> {
        self.taps.iter().map(|&v| T::lit(v)).collect()
    }

    /// Blur-and-decimate map for an `h x w` input.
    pub fn down_map<T: Real>(&self, h: usize, w: usize) -> Arc<Resample2d<T>> {
        let k = self.taps_as::<T>();
        Arc::new(Resample2d {
            rows: Resample1d::down(&k, h),
            cols: Resample1d::down(&k, w),
        })
    }

    /// Zero-insert-and-blur map from `h x w` to `target`, gain 2 per axis so
    /// constants survive.
    pub fn up_map<T: Real>(
        &self,
        h: usize,
        w: usize,
        target: (usize, usize),
    ) -> Arc<Resample2d<T>> {
        let k = self.taps_as::<T>();
        let two = T::lit(2.0);
        Arc::new(Resample2d {
            rows: Resample1d::up(&k, h, target.0, two),
            cols: Resample1d::up(&k, w, target.1, two),
        })
    }
}

fn halve(n: usize) -> usize {
    n.div_ceil(2)
}

fn check_up_target(h: usize, w: usize, target: (usize, usize)) -> Result<()> {
    if halve(target.0) != h || halve(target.1) != w {
        return Err(Error::Shape(format!(
            "cannot upsample {h}x{w} to {}x{}",
            target.0, target.1
        )));
    }
    Ok(())
}

fn check_down(h: usize, w: usize) -> Result<()> {
    if h < 2 || w < 2 {
        return Err(Error::Shape(format!("cannot downsample a {h}x{w} image")));
    }
    Ok(())
}

/// Blur and keep every other row and column: `[C, H, W] -> [C, ceil(H/2), ceil(W/2)]`.
pub fn gaussian_down<T: Real>(img: &Tensor<T>, kernel: &LowpassKernel) -> Result<Tensor<T>> {
    let (c, h, w) = img.dims3()?;
    check_down(h, w)?;
    let map = kernel.down_map::<T>(h, w);
    let out = kernels::resample2d(img.data(), c, &map.rows, &map.cols);
    Tensor::new(&[c, map.rows.out_len, map.cols.out_len], out)
}

/// Zero-insert to `target` and blur with the kernel scaled by 4.
pub fn gaussian_up<T: Real>(
    img: &Tensor<T>,
    target: (usize, usize),
    kernel: &LowpassKernel,
) -> Result<Tensor<T>> {
    let (c, h, w) = img.dims3()?;
    check_up_target(h, w, target)?;
    let map = kernel.up_map::<T>(h, w, target);
    let out = kernels::resample2d(img.data(), c, &map.rows, &map.cols);
    Tensor::new(&[c, target.0, target.1], out)
}

/// Detail levels (finest first) plus the low-frequency base.
#[derive(Clone, Debug, PartialEq)]
pub struct Pyramid<T = f32> {
    pub hf_levels: Vec<Tensor<T>>,
    pub lf_base: Tensor<T>,
    pub source_shape: (usize, usize),
}

impl<T: Real> Pyramid<T> {
    /// Total level count `L` (detail levels plus base).
    pub fn levels(&self) -> usize {
        self.hf_levels.len() + 1
    }
}

/// Check that an image of `h x w` supports an `levels`-level pyramid.
pub fn check_levels(h: usize, w: usize, levels: usize) -> Result<()> {
    if !(MIN_LEVELS..=MAX_LEVELS).contains(&levels) {
        return Err(Error::InvalidArgument(format!(
            "pyramid levels must be in {MIN_LEVELS}..={MAX_LEVELS}, got {levels}"
        )));
    }
    if h.min(w) < 1 << (levels - 1) {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            levels,
        });
    }
    Ok(())
}

/// Extents of every Gaussian level, finest first (`levels` entries).
pub fn level_extents(h: usize, w: usize, levels: usize) -> Vec<(usize, usize)> {
    std::iter::successors(Some((h, w)), |&(a, b)| Some((halve(a), halve(b))))
        .take(levels)
        .collect()
}

pub fn decompose<T: Real>(img: &Tensor<T>, levels: usize) -> Result<Pyramid<T>> {
    decompose_with(img, levels, &LowpassKernel::default())
}

pub fn decompose_with<T: Real>(
    img: &Tensor<T>,
    levels: usize,
    kernel: &LowpassKernel,
) -> Result<Pyramid<T>> {
    let (_, h, w) = img.dims3()?;
    check_levels(h, w, levels)?;
    let mut hf_levels = Vec::with_capacity(levels - 1);
    let mut g = img.clone();
    for _ in 0..levels - 1 {
        let (_, gh, gw) = g.dims3()?;
        let next = gaussian_down(&g, kernel)?;
        let up = gaussian_up(&next, (gh, gw), kernel)?;
        let hf: Vec<T> = g
            .data()
            .iter()
            .zip(up.data())
            .map(|(&a, &b)| a - b)
            .collect();
        hf_levels.push(Tensor::new(g.shape(), hf)?);
        g = next;
    }
    Ok(Pyramid {
        hf_levels,
        lf_base: g,
        source_shape: (h, w),
    })
}

fn check_chain(shapes: &[(usize, usize)], lf: (usize, usize)) -> Result<()> {
    let mut expect = lf;
    for &(h, w) in shapes.iter().rev() {
        if (halve(h), halve(w)) != expect {
            return Err(Error::Shape(format!(
                "broken pyramid chain: level {h}x{w} above {}x{}",
                expect.0, expect.1
            )));
        }
        expect = (h, w);
    }
    Ok(())
}

pub fn reconstruct<T: Real>(pyr: &Pyramid<T>) -> Result<Tensor<T>> {
    reconstruct_with(pyr, &LowpassKernel::default())
}

pub fn reconstruct_with<T: Real>(pyr: &Pyramid<T>, kernel: &LowpassKernel) -> Result<Tensor<T>> {
    let (lc, lh, lw) = pyr.lf_base.dims3()?;
    let shapes = pyr
        .hf_levels
        .iter()
        .map(|t| {
            let (c, h, w) = t.dims3()?;
            if c != lc {
                return Err(Error::Shape(format!("channel count {c} != {lc}")));
            }
            Ok((h, w))
        })
        .collect::<Result<Vec<_>>>()?;
    check_chain(&shapes, (lh, lw))?;
    let mut r = pyr.lf_base.clone();
    for hf in pyr.hf_levels.iter().rev() {
        let (_, h, w) = hf.dims3()?;
        let up = gaussian_up(&r, (h, w), kernel)?;
        let sum: Vec<T> = hf
            .data()
            .iter()
            .zip(up.data())
            .map(|(&a, &b)| a + b)
            .collect();
        r = Tensor::new(hf.shape(), sum)?;
    }
    Ok(r)
}

/// Pyramid whose components live on a tape.
#[derive(Clone, Debug)]
pub struct TapePyramid {
    pub hf_levels: Vec<Var>,
    pub lf_base: Var,
}

pub fn down_on<T: Real>(tape: &mut Tape<T>, x: Var, kernel: &LowpassKernel) -> Result<Var> {
    let (_, h, w) = tape.value(x).dims3()?;
    check_down(h, w)?;
    tape.resample(x, kernel.down_map(h, w))
}

pub fn up_on<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    target: (usize, usize),
    kernel: &LowpassKernel,
) -> Result<Var> {
    let (_, h, w) = tape.value(x).dims3()?;
    check_up_target(h, w, target)?;
    tape.resample(x, kernel.up_map(h, w, target))
}

pub fn decompose_on<T: Real>(
    tape: &mut Tape<T>,
    img: Var,
    levels: usize,
    kernel: &LowpassKernel,
) -> Result<TapePyramid> {
    let (_, h, w) = tape.value(img).dims3()?;
    check_levels(h, w, levels)?;
    let mut hf_levels = Vec::with_capacity(levels - 1);
    let mut g = img;
    for _ in 0..levels - 1 {
        let (_, gh, gw) = tape.value(g).dims3()?;
        let next = down_on(tape, g, kernel)?;
        let up = up_on(tape, next, (gh, gw), kernel)?;
        hf_levels.push(tape.sub(g, up)?);
        g = next;
    }
    Ok(TapePyramid {
        hf_levels,
        lf_base: g,
    })
}

pub fn reconstruct_on<T: Real>(
    tape: &mut Tape<T>,
    pyr: &TapePyramid,
    kernel: &LowpassKernel,
) -> Result<Var> {
    let (_, lh, lw) = tape.value(pyr.lf_base).dims3()?;
    let shapes = pyr
        .hf_levels
        .iter()
        .map(|&v| tape.value(v).dims3().map(|(_, h, w)| (h, w)))
        .collect::<Result<Vec<_>>>()?;
    check_chain(&shapes, (lh, lw))?;
    let mut r = pyr.lf_base;
    for (&hf, &target) in pyr.hf_levels.iter().zip(&shapes).rev() {
        let up = up_on(tape, r, target, kernel)?;
        r = tape.add(hf, up)?;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_survives_down_and_up() {
        let img = Tensor::full(&[3, 7, 6], 0.3f64).unwrap();
        let k = LowpassKernel::binomial5();
        let d = gaussian_down(&img, &k).unwrap();
        assert_eq!(d.shape(), &[3, 4, 3]);
        assert!(d.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        let u = gaussian_up(&d, (7, 6), &k).unwrap();
        assert_eq!(u.shape(), &[3, 7, 6]);
        assert!(u.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn two_by_two_downsamples_to_one_pixel() {
        let img = Tensor::full(&[3, 2, 2], 1.0f32).unwrap();
        let d = gaussian_down(&img, &LowpassKernel::default()).unwrap();
        assert_eq!(d.shape(), &[3, 1, 1]);
        assert!(gaussian_down(
            &Tensor::full(&[3, 1, 4], 1.0f32).unwrap(),
            &LowpassKernel::default()
        )
        .is_err());
    }

    #[test]
    fn impulse_blur_centre_is_36_over_256() {
        // the centre of a 5x5 image is an even index, so it survives decimation
        let mut img = Tensor::<f64>::zeros(&[1, 5, 5]).unwrap();
        img.data_mut()[12] = 1.0;
        let d = gaussian_down(&img, &LowpassKernel::default()).unwrap();
        assert_eq!(d.shape(), &[1, 3, 3]);
        assert!((d.at3(0, 1, 1) - 36.0 / 256.0).abs() < 1e-15);
    }

    #[test]
    fn up_rejects_incompatible_target() {
        let img = Tensor::full(&[3, 3, 3], 1.0f32).unwrap();
        assert!(gaussian_up(&img, (7, 6), &LowpassKernel::default()).is_err());
        assert!(gaussian_up(&img, (5, 6), &LowpassKernel::default()).is_ok());
    }

    #[test]
    fn decompose_extents_for_four_levels() {
        let img = Tensor::full(&[3, 256, 192], 0.5f32).unwrap();
        let p = decompose(&img, 4).unwrap();
        let shapes: Vec<_> = p.hf_levels.iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(
            shapes,
            vec![vec![3, 256, 192], vec![3, 128, 96], vec![3, 64, 48]]
        );
        assert_eq!(p.lf_base.shape(), &[3, 32, 24]);
        assert!(p
            .hf_levels
            .iter()
            .all(|t| t.data().iter().all(|v| v.abs() < 1e-6)));
        assert!(p.lf_base.data().iter().all(|v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn decompose_rejects_small_images_and_bad_levels() {
        let img = Tensor::full(&[3, 8, 40], 0.5f32).unwrap();
        assert!(decompose(&img, 4).is_ok());
        assert!(matches!(
            decompose(&img, 5),
            Err(Error::ImageTooSmall { .. })
        ));
        assert!(matches!(decompose(&img, 1), Err(Error::InvalidArgument(_))));
        assert!(matches!(decompose(&img, 7), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn reconstruct_folds() {
        let lf = Tensor::full(&[3, 2, 2], 0.25f32).unwrap();
        let zeros = Pyramid {
            hf_levels: vec![
                Tensor::zeros(&[3, 7, 8]).unwrap(),
                Tensor::zeros(&[3, 4, 4]).unwrap(),
            ],
            lf_base: lf.clone(),
            source_shape: (7, 8),
        };
        let r = reconstruct(&zeros).unwrap();
        let k = LowpassKernel::default();
        let expect = gaussian_up(&gaussian_up(&lf, (4, 4), &k).unwrap(), (7, 8), &k).unwrap();
        assert_eq!(r, expect);

        let all_zero = Pyramid {
            lf_base: lf.zeros_like(),
            ..zeros.clone()
        };
        assert!(reconstruct(&all_zero)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));

        let broken = Pyramid {
            hf_levels: vec![
                Tensor::zeros(&[3, 9, 8]).unwrap(),
                Tensor::zeros(&[3, 4, 4]).unwrap(),
            ],
            ..zeros
        };
        assert!(matches!(reconstruct(&broken), Err(Error::Shape(_))));
    }

    #[test]
    fn tape_and_plain_paths_agree() {
        let img = Tensor::from_fn(&[3, 13, 10], |i| ((i * 37) % 101) as f64 / 101.0).unwrap();
        let plain = decompose(&img, 3).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(img.clone());
        let k = LowpassKernel::default();
        let tp = decompose_on(&mut tape, x, 3, &k).unwrap();
        for (a, &b) in plain.hf_levels.iter().zip(&tp.hf_levels) {
            assert!(a.max_abs_diff(tape.value(b)).unwrap() < 1e-15);
        }
        let r = reconstruct_on(&mut tape, &tp, &k).unwrap();
        assert!(tape.value(r).max_abs_diff(&img).unwrap() < 1e-12);
    }
}

//! Slice-level numeric kernels shared by the tape operators.

use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    Zero,
    Reflect,
}

/// Mirror an out-of-range index back into `0..n` without repeating the edge
/// sample (`-1 -> 1`, `n -> n - 2`). Periodic, so any offset is legal.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
/// The summation order is fixed, so results are reproducible.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let mut acc = [T::zero(); 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let a8 = &a[c * 8..c * 8 + 8];
        let b8 = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] += a8[l] * b8[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    let pairs = [
        acc[0] + acc[4],
        acc[1] + acc[5],
        acc[2] + acc[6],
        acc[3] + acc[7],
    ];
    (pairs[0] + pairs[2]) + (pairs[1] + pairs[3]) + tail
}

/// Pad every plane of a `[C, H, W]` buffer by `p` on all sides.
pub fn pad<T: Real>(x: &[T], c: usize, h: usize, w: usize, p: usize, mode: PadMode) -> Vec<T> {
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = vec![T::zero(); c * hp * wp];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * hp * wp..(ch + 1) * hp * wp];
        for yp in 0..hp {
            let y = yp as isize - p as isize;
            let sy = match mode {
                PadMode::Zero if y < 0 || y >= h as isize => continue,
                PadMode::Zero => y as usize,
                PadMode::Reflect => reflect_index(y, h),
            };
            let row = &src[sy * w..(sy + 1) * w];
            let drow = &mut dst[yp * wp..(yp + 1) * wp];
            drow[p..p + w].copy_from_slice(row);
            if mode == PadMode::Reflect {
                for xp in (0..p).chain(p + w..wp) {
                    drow[xp] = row[reflect_index(xp as isize - p as isize, w)];
                }
            }
        }
    }
    out
}

/// Adjoint of [`pad`]: fold a padded gradient back onto the source extents.
pub fn unpad<T: Real>(g: &[T], c: usize, h: usize, w: usize, p: usize, mode: PadMode) -> Vec<T> {
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let src = &g[ch * hp * wp..(ch + 1) * hp * wp];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for yp in 0..hp {
            let y = yp as isize - p as isize;
            let sy = match mode {
                PadMode::Zero if y < 0 || y >= h as isize => continue,
                PadMode::Zero => y as usize,
                PadMode::Reflect => reflect_index(y, h),
            };
            let srow = &src[yp * wp..(yp + 1) * wp];
            let drow = &mut dst[sy * w..(sy + 1) * w];
            for (d, &s) in drow.iter_mut().zip(&srow[p..p + w]) {
                *d += s;
            }
            if mode == PadMode::Reflect {
                for xp in (0..p).chain(p + w..wp) {
                    drow[reflect_index(xp as isize - p as isize, w)] += srow[xp];
                }
            }
        }
    }
    out
}

/// Geometry of a valid (already padded) 2-D convolution.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub hp: usize,
    pub wp: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(
        cin: usize,
        cout: usize,
        hp: usize,
        wp: usize,
        kh: usize,
        kw: usize,
        stride: usize,
    ) -> Self {
        Self {
            cin,
            cout,
            hp,
            wp,
            kh,
            kw,
            stride,
            ho: (hp - kh) / stride + 1,
            wo: (wp - kw) / stride + 1,
        }
    }
}

pub fn conv2d_forward<T: Real>(padded: &[T], kernel: &[T], bias: &[T], g: &ConvGeom) -> Vec<T> {
    let plane_out = g.ho * g.wo;
    let plane_in = g.hp * g.wp;
    let ksz = g.kh * g.kw;
    let mut out = vec![T::zero(); g.cout * plane_out];
    for co in 0..g.cout {
        let oplane = &mut out[co * plane_out..(co + 1) * plane_out];
        oplane.iter_mut().for_each(|v| *v = bias[co]);
        for oy in 0..g.ho {
            let orow = &mut oplane[oy * g.wo..(oy + 1) * g.wo];
            for ci in 0..g.cin {
                let iplane = &padded[ci * plane_in..(ci + 1) * plane_in];
                let kbase = (co * g.cin + ci) * ksz;
                for ky in 0..g.kh {
                    let iy = oy * g.stride + ky;
                    let irow = &iplane[iy * g.wp..(iy + 1) * g.wp];
                    for kx in 0..g.kw {
                        let wv = kernel[kbase + ky * g.kw + kx];
                        if g.stride == 1 {
                            axpy(wv, &irow[kx..kx + g.wo], orow);
                        } else {
                            for (ox, o) in orow.iter_mut().enumerate() {
                                *o += wv * irow[ox * g.stride + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(grad_padded_input, grad_kernel, grad_bias)`.
pub fn conv2d_backward<T: Real>(
    padded: &[T],
    kernel: &[T],
    grad_out: &[T],
    g: &ConvGeom,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let plane_out = g.ho * g.wo;
    let plane_in = g.hp * g.wp;
    let ksz = g.kh * g.kw;
    let mut g_in = vec![T::zero(); g.cin * plane_in];
    let mut g_k = vec![T::zero(); kernel.len()];
    let mut g_b = vec![T::zero(); g.cout];

    for co in 0..g.cout {
        let gplane = &grad_out[co * plane_out..(co + 1) * plane_out];
        g_b[co] = gplane.iter().copied().sum();
    }

    for ci in 0..g.cin {
        let iplane = &padded[ci * plane_in..(ci + 1) * plane_in];
        let giplane = &mut g_in[ci * plane_in..(ci + 1) * plane_in];
        for co in 0..g.cout {
            let gplane = &grad_out[co * plane_out..(co + 1) * plane_out];
            let kbase = (co * g.cin + ci) * ksz;
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wv = kernel[kbase + ky * g.kw + kx];
                    let mut acc = T::zero();
                    for oy in 0..g.ho {
                        let iy = oy * g.stride + ky;
                        let grow = &gplane[oy * g.wo..(oy + 1) * g.wo];
                        if g.stride == 1 {
                            let irow = &iplane[iy * g.wp + kx..iy * g.wp + kx + g.wo];
                            acc += dot(grow, irow);
                            axpy(
                                wv,
                                grow,
                                &mut giplane[iy * g.wp + kx..iy * g.wp + kx + g.wo],
                            );
                        } else {
                            for (ox, &gv) in grow.iter().enumerate() {
                                let idx = iy * g.wp + ox * g.stride + kx;
                                acc += gv * iplane[idx];
                                giplane[idx] += wv * gv;
                            }
                        }
                    }
                    g_k[kbase + ky * g.kw + kx] = acc;
                }
            }
        }
    }
    (g_in, g_k, g_b)
}

/// `[m, k] x [k, n] -> [m, n]`.
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(a[i * k + p], &b[p * n..(p + 1) * n], orow);
        }
    }
    out
}

pub fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// A sparse linear map between 1-D signals, applied along one image axis.
/// Output sample `j` is `sum(weight * input[index])` over `taps[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Resample1d<T> {
    pub in_len: usize,
    pub out_len: usize,
    pub taps: Vec<Vec<(usize, T)>>,
}

impl<T: Real> Resample1d<T> {
    /// Blur with `kernel` (reflect borders) and keep even samples.
    pub fn down(kernel: &[T], n: usize) -> Self {
        let r = (kernel.len() / 2) as isize;
        let out_len = n.div_ceil(2);
        let taps = (0..out_len)
            .map(|j| {
                let centre = 2 * j as isize;
                kernel
                    .iter()
                    .enumerate()
                    .map(|(t, &k)| (reflect_index(centre + t as isize - r, n), k))
                    .collect()
            })
            .collect();
        Self {
            in_len: n,
            out_len,
            taps,
        }
    }

    /// Zero-insert into `target` samples, then blur with `gain * kernel`
    /// (reflect borders in the upsampled domain).
    pub fn up(kernel: &[T], n: usize, target: usize, gain: T) -> Self {
        let r = (kernel.len() / 2) as isize;
        let taps = (0..target)
            .map(|j| {
                kernel
                    .iter()
                    .enumerate()
                    .filter_map(|(t, &k)| {
                        let p = reflect_index(j as isize + t as isize - r, target);
                        p.is_multiple_of(2).then(|| (p / 2, gain * k))
                    })
                    .collect()
            })
            .collect();
        Self {
            in_len: n,
            out_len: target,
            taps,
        }
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        self.taps
            .iter()
            .map(|taps| taps.iter().fold(T::zero(), |acc, &(i, w)| acc + w * x[i]))
            .collect()
    }
}

/// Apply `rows` along the height axis and `cols` along the width axis of
/// a `[C, H, W]` buffer.
pub fn resample2d<T: Real>(
    x: &[T],
    c: usize,
    rows: &Resample1d<T>,
    cols: &Resample1d<T>,
) -> Vec<T> {
    let (h, w) = (rows.in_len, cols.in_len);
    let (ho, wo) = (rows.out_len, cols.out_len);
    // width pass
    let mut tmp = vec![T::zero(); c * h * wo];
    for r in 0..c * h {
        let src = &x[r * w..(r + 1) * w];
        let dst = &mut tmp[r * wo..(r + 1) * wo];
        for (d, taps) in dst.iter_mut().zip(&cols.taps) {
            *d = taps
                .iter()
                .fold(T::zero(), |acc, &(i, wt)| acc + wt * src[i]);
        }
    }
    // height pass
    let mut out = vec![T::zero(); c * ho * wo];
    for ch in 0..c {
        let src = &tmp[ch * h * wo..(ch + 1) * h * wo];
        let dst = &mut out[ch * ho * wo..(ch + 1) * ho * wo];
        for (j, taps) in rows.taps.iter().enumerate() {
            let drow = &mut dst[j * wo..(j + 1) * wo];
            for &(i, wt) in taps {
                axpy(wt, &src[i * wo..(i + 1) * wo], drow);
            }
        }
    }
    out
}

/// Adjoint of [`resample2d`].
pub fn resample2d_adjoint<T: Real>(
    g: &[T],
    c: usize,
    rows: &Resample1d<T>,
    cols: &Resample1d<T>,
) -> Vec<T> {
    let (h, w) = (rows.in_len, cols.in_len);
    let (ho, wo) = (rows.out_len, cols.out_len);
    let mut tmp = vec![T::zero(); c * h * wo];
    for ch in 0..c {
        let src = &g[ch * ho * wo..(ch + 1) * ho * wo];
        let dst = &mut tmp[ch * h * wo..(ch + 1) * h * wo];
        for (j, taps) in rows.taps.iter().enumerate() {
            let srow = &src[j * wo..(j + 1) * wo];
            for &(i, wt) in taps {
                axpy(wt, srow, &mut dst[i * wo..(i + 1) * wo]);
            }
        }
    }
    let mut out = vec![T::zero(); c * h * w];
    for r in 0..c * h {
        let src = &tmp[r * wo..(r + 1) * wo];
        let dst = &mut out[r * w..(r + 1) * w];
        for (&gv, taps) in src.iter().zip(&cols.taps) {
            for &(i, wt) in taps {
                dst[i] += wt * gv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_matches_mirror_without_edge_repeat() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-2, 5), 2);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(6, 5), 2);
        assert_eq!(reflect_index(-3, 2), 1);
        assert_eq!(reflect_index(7, 1), 0);
    }

    #[test]
    fn unpad_is_adjoint_of_pad() {
        // <pad(x), y> == <x, unpad(y)> for both modes
        let (c, h, w, p) = (2, 3, 4, 2);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..c * (h + 2 * p) * (w + 2 * p))
            .map(|i| (i as f64 * 0.11).cos())
            .collect();
        for mode in [PadMode::Zero, PadMode::Reflect] {
            let lhs = dot(&pad(&x, c, h, w, p, mode), &y);
            let rhs = dot(&x, &unpad(&y, c, h, w, p, mode));
            assert!((lhs - rhs).abs() < 1e-12, "{mode:?}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn resample_adjoint_identity() {
        let k = [1.0, 4.0, 6.0, 4.0, 1.0].map(|v: f64| v / 16.0);
        let (c, h, w) = (2, 7, 6);
        let rows = Resample1d::down(&k, h);
        let cols = Resample1d::down(&k, w);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = (0..c * rows.out_len * cols.out_len)
            .map(|i| (i as f64 * 0.3).cos())
            .collect();
        let lhs = dot(&resample2d(&x, c, &rows, &cols), &y);
        let rhs = dot(&x, &resample2d_adjoint(&y, c, &rows, &cols));
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..29).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..29).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }
}

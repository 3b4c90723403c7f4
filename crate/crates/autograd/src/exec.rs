//! Execution kernels with twin implementations.
//!
//! Every kernel here exists in [`sequential`] form and, when the `parallel`
//! feature is enabled (the default), in rayon-parallel form under
//! [`parallel`]. The top-level functions dispatch to whichever is compiled
//! in, with small-input cutoffs so tiny tensors skip scheduling overhead.
//!
//! Parallel kernels only ever split work across rows, batch entries, or
//! output positions — never across a reduction axis — so for every output
//! element the floating-point accumulation order is identical on both paths
//! and results match bit for bit. The benches in
//! `benches/parallel_vs_sequential.rs` compare the two directly.

use crate::scalar::Scalar;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};

/// Inputs smaller than this (in elements) always take the sequential path.
const PAR_MIN_ELEMS: usize = 1 << 14;

// ---------------------------------------------------------------------------
// Sequential implementations
// ---------------------------------------------------------------------------

pub mod sequential {
    use super::*;

    /// `[m,k] @ [k,n] -> [m,n]`.
    pub fn matmul<F: Scalar>(a: ArrayView2<F>, b: ArrayView2<F>) -> Array2<F> {
        let (m, ka) = a.dim();
        let (kb, n) = b.dim();
        assert_eq!(ka, kb, "matmul inner dims: {ka} vs {kb}");
        let mut out = Array2::zeros((m, n));
        ndarray::linalg::general_mat_mul(F::one(), &a, &b, F::zero(), &mut out.view_mut());
        out
    }

    /// Batched matmul over equal-length slices of 2-D views.
    pub fn bmm<F: Scalar>(a: &[ArrayView2<F>], b: &[ArrayView2<F>]) -> Vec<Array2<F>> {
        assert_eq!(a.len(), b.len(), "bmm batch sizes differ");
        a.iter().zip(b).map(|(ai, bi)| matmul(ai.view(), bi.view())).collect()
    }

    /// Elementwise map over a contiguous slice.
    pub fn map_slice<F: Scalar>(x: &[F], f: impl Fn(F) -> F + Sync) -> Vec<F> {
        x.iter().map(|&v| f(v)).collect()
    }

    /// Elementwise zip over two equal-length contiguous slices.
    pub fn zip_slices<F: Scalar>(a: &[F], b: &[F], f: impl Fn(F, F) -> F + Sync) -> Vec<F> {
        assert_eq!(a.len(), b.len());
        a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
    }

    /// Row-wise numerically stable softmax over a `[rows, cols]` slice.
    pub fn softmax_rows<F: Scalar>(x: &[F], rows: usize, cols: usize) -> Vec<F> {
        let mut out = vec![F::zero(); rows * cols];
        for r in 0..rows {
            softmax_row(&x[r * cols..(r + 1) * cols], &mut out[r * cols..(r + 1) * cols]);
        }
        out
    }

    pub(super) fn softmax_row<F: Scalar>(x: &[F], out: &mut [F]) {
        let mut m = F::neg_infinity();
        for &v in x {
            if v > m {
                m = v;
            }
        }
        // A row that is entirely -inf would divide by zero; callers guarantee
        // at least one unmasked entry per row.
        let mut s = F::zero();
        for (o, &v) in out.iter_mut().zip(x) {
            let e = (v - m).exp();
            *o = e;
            s += e;
        }
        let inv = F::one() / s;
        for o in out.iter_mut() {
            *o = *o * inv;
        }
    }

    /// Fused layer norm over the last axis of a `[rows, cols]` slice.
    /// Returns `(y, mean, inv_std)` with the per-row statistics kept for the
    /// backward pass.
    pub fn layer_norm_rows<F: Scalar>(
        x: &[F],
        rows: usize,
        cols: usize,
        gamma: &[F],
        beta: &[F],
        eps: F,
    ) -> (Vec<F>, Vec<F>, Vec<F>) {
        let mut y = vec![F::zero(); rows * cols];
        let mut mean = vec![F::zero(); rows];
        let mut inv_std = vec![F::zero(); rows];
        for r in 0..rows {
            let (m, s) = layer_norm_row(
                &x[r * cols..(r + 1) * cols],
                &mut y[r * cols..(r + 1) * cols],
                gamma,
                beta,
                eps,
            );
            mean[r] = m;
            inv_std[r] = s;
        }
        (y, mean, inv_std)
    }

    pub(super) fn layer_norm_row<F: Scalar>(
        x: &[F],
        y: &mut [F],
        gamma: &[F],
        beta: &[F],
        eps: F,
    ) -> (F, F) {
        let n = F::cast_usize(x.len());
        let mut m = F::zero();
        for &v in x {
            m += v;
        }
        m = m / n;
        let mut var = F::zero();
        for &v in x {
            let d = v - m;
            var += d * d;
        }
        var = var / n;
        let inv_std = F::one() / (var + eps).sqrt();
        for i in 0..x.len() {
            y[i] = (x[i] - m) * inv_std * gamma[i] + beta[i];
        }
        (m, inv_std)
    }

    /// im2col for NCHW conv2d: output `[b*oh*ow, c*kh*kw]`.
    #[allow(clippy::too_many_arguments)]
    pub fn im2col2d<F: Scalar>(
        x: &[F],
        (b, c, h, w): (usize, usize, usize, usize),
        (kh, kw): (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Array2<F> {
        let (oh, ow) = super::conv_out_hw((h, w), (kh, kw), stride, pad);
        let mut cols = Array2::zeros((b * oh * ow, c * kh * kw));
        {
            let slice = cols.as_slice_mut().expect("fresh array is contiguous");
            for bi in 0..b {
                let row0 = bi * oh * ow;
                super::im2col2d_batch(x, slice, (bi, row0), (c, h, w), (kh, kw), (oh, ow), stride, pad);
            }
        }
        cols

    }

    /// Scatter-add counterpart of [`im2col2d`]: accumulates `dcols` back into
    /// an input-shaped gradient.
    #[allow(clippy::too_many_arguments)]
    pub fn col2im2d<F: Scalar>(
        dcols: &Array2<F>,
        (b, c, h, w): (usize, usize, usize, usize),
        (kh, kw): (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Vec<F> {
        let (oh, ow) = super::conv_out_hw((h, w), (kh, kw), stride, pad);
        let mut dx = vec![F::zero(); b * c * h * w];
        let src = dcols.as_slice().expect("standard layout");
        for bi in 0..b {
            let dst = &mut dx[bi * c * h * w..(bi + 1) * c * h * w];
            super::col2im2d_batch(src, dst, bi, (c, h, w), (kh, kw), (oh, ow), stride, pad);
        }
        dx
    }

    /// im2col for NCDHW conv3d: output `[b*ot*oh*ow, c*kt*kh*kw]`.
    #[allow(clippy::too_many_arguments)]
    pub fn im2col3d<F: Scalar>(
        x: &[F],
        (b, c, t, h, w): (usize, usize, usize, usize, usize),
        k: (usize, usize, usize),
        stride: (usize, usize, usize),
        pad: (usize, usize, usize),
    ) -> Array2<F> {
        let (ot, oh, ow) = super::conv_out_thw((t, h, w), k, stride, pad);
        let mut cols = Array2::zeros((b * ot * oh * ow, c * k.0 * k.1 * k.2));
        {
            let slice = cols.as_slice_mut().expect("fresh array is contiguous");
            for bi in 0..b {
                let row0 = bi * ot * oh * ow;
                super::im2col3d_batch(x, slice, (bi, row0), (c, t, h, w), k, (ot, oh, ow), stride, pad);
            }
        }
        cols
    }

    /// Scatter-add counterpart of [`im2col3d`].
    #[allow(clippy::too_many_arguments)]
    pub fn col2im3d<F: Scalar>(
        dcols: &Array2<F>,
        (b, c, t, h, w): (usize, usize, usize, usize, usize),
        k: (usize, usize, usize),
        stride: (usize, usize, usize),
        pad: (usize, usize, usize),
    ) -> Vec<F> {
        let (ot, oh, ow) = super::conv_out_thw((t, h, w), k, stride, pad);
        let mut dx = vec![F::zero(); b * c * t * h * w];
        let src = dcols.as_slice().expect("standard layout");
        for bi in 0..b {
            let dst = &mut dx[bi * c * t * h * w..(bi + 1) * c * t * h * w];
            super::col2im3d_batch(src, dst, bi, (c, t, h, w), k, (ot, oh, ow), stride, pad);
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Parallel implementations
// ---------------------------------------------------------------------------

#[cfg(feature = "parallel")]
pub mod parallel {
    use super::*;
    use rayon::prelude::*;

    fn row_chunk(rows: usize) -> usize {
        rows.div_ceil(rayon::current_num_threads().max(1)).max(1)
    }

    /// `[m,k] @ [k,n] -> [m,n]`, split across row blocks of `a`.
    pub fn matmul<F: Scalar>(a: ArrayView2<F>, b: ArrayView2<F>) -> Array2<F> {
        let (m, ka) = a.dim();
        let (kb, n) = b.dim();
        assert_eq!(ka, kb, "matmul inner dims: {ka} vs {kb}");
        let mut out = Array2::zeros((m, n));
        let chunk = row_chunk(m);
        let jobs: Vec<(ArrayViewMut2<F>, ArrayView2<F>)> = out
            .axis_chunks_iter_mut(Axis(0), chunk)
            .zip(a.axis_chunks_iter(Axis(0), chunk))
            .collect();
        jobs.into_par_iter().for_each(|(mut oc, ac)| {
            ndarray::linalg::general_mat_mul(F::one(), &ac, &b, F::zero(), &mut oc);
        });
        out
    }

    /// Batched matmul, one rayon task per batch entry.
    pub fn bmm<F: Scalar>(a: &[ArrayView2<F>], b: &[ArrayView2<F>]) -> Vec<Array2<F>> {
        assert_eq!(a.len(), b.len(), "bmm batch sizes differ");
        a.par_iter()
            .zip(b.par_iter())
            .map(|(ai, bi)| sequential::matmul(ai.view(), bi.view()))
            .collect()
    }

    pub fn map_slice<F: Scalar>(x: &[F], f: impl Fn(F) -> F + Sync) -> Vec<F> {
        let mut out = vec![F::zero(); x.len()];
        out.par_chunks_mut(PAR_MIN_ELEMS)
            .zip(x.par_chunks(PAR_MIN_ELEMS))
            .for_each(|(oc, xc)| {
                for (o, &v) in oc.iter_mut().zip(xc) {
                    *o = f(v);
                }
            });
        out
    }

    pub fn zip_slices<F: Scalar>(a: &[F], b: &[F], f: impl Fn(F, F) -> F + Sync) -> Vec<F> {
        assert_eq!(a.len(), b.len());
        let mut out = vec![F::zero(); a.len()];
        out.par_chunks_mut(PAR_MIN_ELEMS)
            .zip(a.par_chunks(PAR_MIN_ELEMS).zip(b.par_chunks(PAR_MIN_ELEMS)))
            .for_each(|(oc, (ac, bc))| {
                for i in 0..oc.len() {
                    oc[i] = f(ac[i], bc[i]);
                }
            });
        out
    }

    pub fn softmax_rows<F: Scalar>(x: &[F], rows: usize, cols: usize) -> Vec<F> {
        let mut out = vec![F::zero(); rows * cols];
        out.par_chunks_mut(cols)
            .zip(x.par_chunks(cols))
            .for_each(|(oc, xc)| sequential::softmax_row(xc, oc));
        out
    }

    pub fn layer_norm_rows<F: Scalar>(
        x: &[F],
        rows: usize,
        cols: usize,
        gamma: &[F],
        beta: &[F],
        eps: F,
    ) -> (Vec<F>, Vec<F>, Vec<F>) {
        let mut y = vec![F::zero(); rows * cols];
        let mut mean = vec![F::zero(); rows];
        let mut inv_std = vec![F::zero(); rows];
        y.par_chunks_mut(cols)
            .zip(x.par_chunks(cols))
            .zip(mean.par_iter_mut().zip(inv_std.par_iter_mut()))
            .for_each(|((yc, xc), (m, s))| {
                let (mm, ss) = sequential::layer_norm_row(xc, yc, gamma, beta, eps);
                *m = mm;
                *s = ss;
            });
        (y, mean, inv_std)
    }

    /// im2col with one rayon task per batch entry; each task fills a disjoint
    /// row block.
    #[allow(clippy::too_many_arguments)]
    pub fn im2col2d<F: Scalar>(
        x: &[F],
        (b, c, h, w): (usize, usize, usize, usize),
        (kh, kw): (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Array2<F> {
        let (oh, ow) = super::conv_out_hw((h, w), (kh, kw), stride, pad);
        let ckk = c * kh * kw;
        let mut cols = Array2::zeros((b * oh * ow, ckk));
        {
            let slice = cols.as_slice_mut().expect("fresh array is contiguous");
            slice
                .par_chunks_mut(oh * ow * ckk)
                .enumerate()
                .for_each(|(bi, chunk)| {
                    super::im2col2d_batch(x, chunk, (bi, 0), (c, h, w), (kh, kw), (oh, ow), stride, pad);
                });
        }
        cols
    }

    #[allow(clippy::too_many_arguments)]
    pub fn col2im2d<F: Scalar>(
        dcols: &Array2<F>,
        (b, c, h, w): (usize, usize, usize, usize),
        (kh, kw): (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Vec<F> {
        let (oh, ow) = super::conv_out_hw((h, w), (kh, kw), stride, pad);
        let mut dx = vec![F::zero(); b * c * h * w];
        let src = dcols.as_slice().expect("standard layout");
        dx.par_chunks_mut(c * h * w).enumerate().for_each(|(bi, dst)| {
            super::col2im2d_batch(src, dst, bi, (c, h, w), (kh, kw), (oh, ow), stride, pad);
        });
        dx
    }

    #[allow(clippy::too_many_arguments)]
    pub fn im2col3d<F: Scalar>(
        x: &[F],
        (b, c, t, h, w): (usize, usize, usize, usize, usize),
        k: (usize, usize, usize),
        stride: (usize, usize, usize),
        pad: (usize, usize, usize),
    ) -> Array2<F> {
        let (ot, oh, ow) = super::conv_out_thw((t, h, w), k, stride, pad);
        let ckk = c * k.0 * k.1 * k.2;
        let mut cols = Array2::zeros((b * ot * oh * ow, ckk));
        {
            let slice = cols.as_slice_mut().expect("fresh array is contiguous");
            slice
                .par_chunks_mut(ot * oh * ow * ckk)
                .enumerate()
                .for_each(|(bi, chunk)| {
                    super::im2col3d_batch(x, chunk, (bi, 0), (c, t, h, w), k, (ot, oh, ow), stride, pad);
                });
        }
        cols
    }

    #[allow(clippy::too_many_arguments)]
    pub fn col2im3d<F: Scalar>(
        dcols: &Array2<F>,
        (b, c, t, h, w): (usize, usize, usize, usize, usize),
        k: (usize, usize, usize),
        stride: (usize, usize, usize),
        pad: (usize, usize, usize),
    ) -> Vec<F> {
        let (ot, oh, ow) = super::conv_out_thw((t, h, w), k, stride, pad);
        let mut dx = vec![F::zero(); b * c * t * h * w];
        let src = dcols.as_slice().expect("standard layout");
        dx.par_chunks_mut(c * t * h * w).enumerate().for_each(|(bi, dst)| {
            super::col2im3d_batch(src, dst, bi, (c, t, h, w), k, (ot, oh, ow), stride, pad);
        });
        dx
    }
}

// ---------------------------------------------------------------------------
// Shared inner loops (used by both paths so the arithmetic is identical)
// ---------------------------------------------------------------------------

pub(crate) fn conv_out_hw(
    (h, w): (usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
) -> (usize, usize) {
    assert!(h + 2 * pad >= kh && w + 2 * pad >= kw, "kernel larger than padded input");
    ((h + 2 * pad - kh) / stride + 1, (w + 2 * pad - kw) / stride + 1)
}

pub(crate) fn conv_out_thw(
    (t, h, w): (usize, usize, usize),
    (kt, kh, kw): (usize, usize, usize),
    (st, sh, sw): (usize, usize, usize),
    (pt, ph, pw): (usize, usize, usize),
) -> (usize, usize, usize) {
    assert!(
        t + 2 * pt >= kt && h + 2 * ph >= kh && w + 2 * pw >= kw,
        "kernel larger than padded input"
    );
    (
        (t + 2 * pt - kt) / st + 1,
        (h + 2 * ph - kh) / sh + 1,
        (w + 2 * pw - kw) / sw + 1,
    )
}

/// Fill im2col rows for one batch entry. `rows` starts at row index
/// `row0 * (c*kh*kw)` within the destination slice.
#[allow(clippy::too_many_arguments)]
fn im2col2d_batch<F: Scalar>(
    x: &[F],
    dst: &mut [F],
    (bi, row0): (usize, usize),
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    (oh, ow): (usize, usize),
    stride: usize,
    pad: usize,
) {
    let ckk = c * kh * kw;
    let xb = &x[bi * c * h * w..(bi + 1) * c * h * w];
    for oy in 0..oh {
        for ox in 0..ow {
            let row = row0 + oy * ow + ox;
            let out = &mut dst[row * ckk..(row + 1) * ckk];
            let iy0 = (oy * stride) as isize - pad as isize;
            let ix0 = (ox * stride) as isize - pad as isize;
            let mut col = 0;
            for ci in 0..c {
                for ky in 0..kh {
                    let iy = iy0 + ky as isize;
                    for kx in 0..kw {
                        let ix = ix0 + kx as isize;
                        out[col] = if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                            xb[(ci * h + iy as usize) * w + ix as usize]
                        } else {
                            F::zero()
                        };
                        col += 1;
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im2d_batch<F: Scalar>(
    dcols: &[F],
    dst: &mut [F],
    bi: usize,
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    (oh, ow): (usize, usize),
    stride: usize,
    pad: usize,
) {
    let ckk = c * kh * kw;
    for oy in 0..oh {
        for ox in 0..ow {
            let row = (bi * oh + oy) * ow + ox;
            let src = &dcols[row * ckk..(row + 1) * ckk];
            let iy0 = (oy * stride) as isize - pad as isize;
            let ix0 = (ox * stride) as isize - pad as isize;
            let mut col = 0;
            for ci in 0..c {
                for ky in 0..kh {
                    let iy = iy0 + ky as isize;
                    for kx in 0..kw {
                        let ix = ix0 + kx as isize;
                        if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                            dst[(ci * h + iy as usize) * w + ix as usize] += src[col];
                        }
                        col += 1;
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col3d_batch<F: Scalar>(
    x: &[F],
    dst: &mut [F],
    (bi, row0): (usize, usize),
    (c, t, h, w): (usize, usize, usize, usize),
    (kt, kh, kw): (usize, usize, usize),
    (ot, oh, ow): (usize, usize, usize),
    (st, sh, sw): (usize, usize, usize),
    (pt, ph, pw): (usize, usize, usize),
) {
    let ckk = c * kt * kh * kw;
    let xb = &x[bi * c * t * h * w..(bi + 1) * c * t * h * w];
    for oz in 0..ot {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = row0 + (oz * oh + oy) * ow + ox;
                let out = &mut dst[row * ckk..(row + 1) * ckk];
                let iz0 = (oz * st) as isize - pt as isize;
                let iy0 = (oy * sh) as isize - ph as isize;
                let ix0 = (ox * sw) as isize - pw as isize;
                let mut col = 0;
                for ci in 0..c {
                    for kz in 0..kt {
                        let iz = iz0 + kz as isize;
                        for ky in 0..kh {
                            let iy = iy0 + ky as isize;
                            for kx in 0..kw {
                                let ix = ix0 + kx as isize;
                                let inside = iz >= 0
                                    && iz < t as isize
                                    && iy >= 0
                                    && iy < h as isize
                                    && ix >= 0
                                    && ix < w as isize;
                                out[col] = if inside {
                                    xb[((ci * t + iz as usize) * h + iy as usize) * w + ix as usize]
                                } else {
                                    F::zero()
                                };
                                col += 1;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im3d_batch<F: Scalar>(
    dcols: &[F],
    dst: &mut [F],
    bi: usize,
    (c, t, h, w): (usize, usize, usize, usize),
    (kt, kh, kw): (usize, usize, usize),
    (ot, oh, ow): (usize, usize, usize),
    (st, sh, sw): (usize, usize, usize),
    (pt, ph, pw): (usize, usize, usize),
) {
    let ckk = c * kt * kh * kw;
    for oz in 0..ot {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((bi * ot + oz) * oh + oy) * ow + ox;
                let src = &dcols[row * ckk..(row + 1) * ckk];
                let iz0 = (oz * st) as isize - pt as isize;
                let iy0 = (oy * sh) as isize - ph as isize;
                let ix0 = (ox * sw) as isize - pw as isize;
                let mut col = 0;
                for ci in 0..c {
                    for kz in 0..kt {
                        let iz = iz0 + kz as isize;
                        for ky in 0..kh {
                            let iy = iy0 + ky as isize;
                            for kx in 0..kw {
                                let ix = ix0 + kx as isize;
                                let inside = iz >= 0
                                    && iz < t as isize
                                    && iy >= 0
                                    && iy < h as isize
                                    && ix >= 0
                                    && ix < w as isize;
                                if inside {
                                    dst[((ci * t + iz as usize) * h + iy as usize) * w + ix as usize] +=
                                        src[col];
                                }
                                col += 1;
                            }
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Dispatchers
// ---------------------------------------------------------------------------

macro_rules! dispatch {
    ($cond:expr, $par:expr, $seq:expr) => {{
        #[cfg(feature = "parallel")]
        {
            if $cond {
                return $par;
            }
            return $seq;
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = $cond;
            $seq
        }
    }};
}

pub fn matmul<F: Scalar>(a: ArrayView2<F>, b: ArrayView2<F>) -> Array2<F> {
    let work = a.nrows() * a.ncols() * b.ncols();
    dispatch!(
        work >= PAR_MIN_ELEMS && a.nrows() > 1,
        parallel::matmul(a, b),
        sequential::matmul(a, b)
    )
}

pub fn bmm<F: Scalar>(a: &[ArrayView2<F>], b: &[ArrayView2<F>]) -> Vec<Array2<F>> {
    dispatch!(a.len() > 1, parallel::bmm(a, b), sequential::bmm(a, b))
}

pub fn map_slice<F: Scalar>(x: &[F], f: impl Fn(F) -> F + Sync) -> Vec<F> {
    dispatch!(
        x.len() >= PAR_MIN_ELEMS,
        parallel::map_slice(x, &f),
        sequential::map_slice(x, &f)
    )
}

pub fn zip_slices<F: Scalar>(a: &[F], b: &[F], f: impl Fn(F, F) -> F + Sync) -> Vec<F> {
    dispatch!(
        a.len() >= PAR_MIN_ELEMS,
        parallel::zip_slices(a, b, &f),
        sequential::zip_slices(a, b, &f)
    )
}

pub fn softmax_rows<F: Scalar>(x: &[F], rows: usize, cols: usize) -> Vec<F> {
    dispatch!(
        rows * cols >= PAR_MIN_ELEMS && rows > 1,
        parallel::softmax_rows(x, rows, cols),
        sequential::softmax_rows(x, rows, cols)
    )
}

pub fn layer_norm_rows<F: Scalar>(
    x: &[F],
    rows: usize,
    cols: usize,
    gamma: &[F],
    beta: &[F],
    eps: F,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    dispatch!(
        rows * cols >= PAR_MIN_ELEMS && rows > 1,
        parallel::layer_norm_rows(x, rows, cols, gamma, beta, eps),
        sequential::layer_norm_rows(x, rows, cols, gamma, beta, eps)
    )
}

pub fn im2col2d<F: Scalar>(
    x: &[F],
    dims: (usize, usize, usize, usize),
    k: (usize, usize),
    stride: usize,
    pad: usize,
) -> Array2<F> {
    dispatch!(
        dims.0 > 1,
        parallel::im2col2d(x, dims, k, stride, pad),
        sequential::im2col2d(x, dims, k, stride, pad)
    )
}

pub fn col2im2d<F: Scalar>(
    dcols: &Array2<F>,
    dims: (usize, usize, usize, usize),
    k: (usize, usize),
    stride: usize,
    pad: usize,
) -> Vec<F> {
    dispatch!(
        dims.0 > 1,
        parallel::col2im2d(dcols, dims, k, stride, pad),
        sequential::col2im2d(dcols, dims, k, stride, pad)
    )
}

pub fn im2col3d<F: Scalar>(
    x: &[F],
    dims: (usize, usize, usize, usize, usize),
    k: (usize, usize, usize),
    stride: (usize, usize, usize),
    pad: (usize, usize, usize),
) -> Array2<F> {
    dispatch!(
        dims.0 > 1,
        parallel::im2col3d(x, dims, k, stride, pad),
        sequential::im2col3d(x, dims, k, stride, pad)
    )
}

pub fn col2im3d<F: Scalar>(
    dcols: &Array2<F>,
    dims: (usize, usize, usize, usize, usize),
    k: (usize, usize, usize),
    stride: (usize, usize, usize),
    pad: (usize, usize, usize),
) -> Vec<F> {
    dispatch!(
        dims.0 > 1,
        parallel::col2im3d(dcols, dims, k, stride, pad),
        sequential::col2im3d(dcols, dims, k, stride, pad)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn2(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Array2<f32> {
        Array::from_shape_fn((m, n), |_| rng.gen_range(-1.0f32..1.0))
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_matmul_matches_sequential_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(m, k, n) in &[(1usize, 1usize, 1usize), (5, 17, 3), (64, 64, 64), (200, 33, 151)] {
            let a = randn2(&mut rng, m, k);
            let b = randn2(&mut rng, k, n);
            let p = parallel::matmul(a.view(), b.view());
            let s = sequential::matmul(a.view(), b.view());
            assert_eq!(p, s, "bitwise mismatch at {m}x{k}x{n}");
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_softmax_and_layer_norm_match_sequential_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows = 37;
        let cols = 129;
        let x: Vec<f32> = (0..rows * cols).map(|_| rng.gen_range(-4.0..4.0)).collect();
        assert_eq!(
            parallel::softmax_rows(&x, rows, cols),
            sequential::softmax_rows(&x, rows, cols)
        );
        let gamma: Vec<f32> = (0..cols).map(|_| rng.gen_range(0.5..1.5)).collect();
        let beta: Vec<f32> = (0..cols).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let p = parallel::layer_norm_rows(&x, rows, cols, &gamma, &beta, 1e-5);
        let s = sequential::layer_norm_rows(&x, rows, cols, &gamma, &beta, 1e-5);
        assert_eq!(p, s);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_im2col_matches_sequential_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dims = (3usize, 2usize, 9usize, 7usize);
        let x: Vec<f32> = (0..dims.0 * dims.1 * dims.2 * dims.3)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        for &(k, s, p) in &[((3usize, 3usize), 1usize, 1usize), ((4, 4), 2, 1), ((1, 1), 1, 0)] {
            let a = parallel::im2col2d(&x, dims, k, s, p);
            let b = sequential::im2col2d(&x, dims, k, s, p);
            assert_eq!(a, b);
            let dc = randn2(&mut rng, a.nrows(), a.ncols());
            assert_eq!(
                parallel::col2im2d(&dc, dims, k, s, p),
                sequential::col2im2d(&dc, dims, k, s, p)
            );
        }
    }

    #[test]
    fn im2col_identity_kernel_reproduces_input_columns() {
        // 1x1 kernel, stride 1, no pad: cols row (b,y,x) holds the C channel
        // values at that pixel.
        let dims = (1usize, 3usize, 2usize, 2usize);
        let x: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let cols = sequential::im2col2d(&x, dims, (1, 1), 1, 0);
        assert_eq!(cols.dim(), (4, 3));
        // pixel (0,0): channels at flat offsets 0, 4, 8
        assert_eq!(cols.row(0).to_vec(), vec![0.0, 4.0, 8.0]);
        // pixel (1,1): offsets 3, 7, 11
        assert_eq!(cols.row(3).to_vec(), vec![3.0, 7.0, 11.0]);
    }

    #[test]
    fn conv_output_shapes() {
        assert_eq!(conv_out_hw((64, 64), (4, 4), 2, 1), (32, 32));
        assert_eq!(conv_out_hw((16, 16), (3, 3), 1, 1), (16, 16));
        assert_eq!(conv_out_thw((10, 16, 16), (3, 3, 3), (1, 2, 2), (1, 1, 1)), (10, 8, 8));
    }
}

//! Slice-level compute kernels behind the graph operators.
//!
//! Convolutions go through im2col/col2im and a dense gemm; the column
//! buffers are rebuilt in the backward pass instead of being cached, which
//! keeps the tape small for batch-32 training on 24×168 maps.

use alloc::vec;
use alloc::vec::Vec;

use super::Real;

/// Geometry of a 2-D convolution from an "image" `(c, h, w)` to the output
/// grid `(out_h, out_w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.ph - self.kh) / self.sh + 1
    }
    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pw - self.kw) / self.sw + 1
    }
    pub fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }
    pub fn col_cols(&self) -> usize {
        self.out_h() * self.out_w()
    }
    pub fn image_len(&self) -> usize {
        self.c * self.h * self.w
    }
    pub fn fits(&self) -> bool {
        self.sh > 0
            && self.sw > 0
            && self.kh > 0
            && self.kw > 0
            && self.kh <= self.h + 2 * self.ph
            && self.kw <= self.w + 2 * self.pw
    }

    /// Output positions `ow` whose tap `k` lands inside `0..extent`.
    #[inline]
    fn valid(out: usize, k: usize, stride: usize, pad: usize, extent: usize) -> (usize, usize) {
        // ow*stride + k - pad in [0, extent)
        let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
        let hi = if extent + pad > k { (extent + pad - k - 1) / stride + 1 } else { 0 };
        (lo.min(out), hi.min(out).max(lo.min(out)))
    }
}

/// Unfolds one image into a `(c·kh·kw) × (out_h·out_w)` column matrix.
pub fn im2col<T: Real>(img: &[T], g: &ConvGeom, col: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ncols = oh * ow;
    debug_assert_eq!(col.len(), g.col_rows() * ncols);
    for c in 0..g.c {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (y_lo, y_hi) = ConvGeom::valid(oh, ki, g.sh, g.ph, g.h);
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * ncols..(row + 1) * ncols];
                let (x_lo, x_hi) = ConvGeom::valid(ow, kj, g.sw, g.pw, g.w);
                for y in 0..oh {
                    let line = &mut dst[y * ow..(y + 1) * ow];
                    if y < y_lo || y >= y_hi {
                        line.fill(T::zero());
                        continue;
                    }
                    let iy = y * g.sh + ki - g.ph;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    line[..x_lo].fill(T::zero());
                    line[x_hi..].fill(T::zero());
                    if g.sw == 1 {
                        let ix0 = x_lo + kj - g.pw;
                        line[x_lo..x_hi].copy_from_slice(&src[ix0..ix0 + (x_hi - x_lo)]);
                    } else {
                        for x in x_lo..x_hi {
                            line[x] = src[x * g.sw + kj - g.pw];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into an image.
pub fn col2im<T: Real>(col: &[T], g: &ConvGeom, img: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ncols = oh * ow;
    for c in 0..g.c {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (y_lo, y_hi) = ConvGeom::valid(oh, ki, g.sh, g.ph, g.h);
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * ncols..(row + 1) * ncols];
                let (x_lo, x_hi) = ConvGeom::valid(ow, kj, g.sw, g.pw, g.w);
                for y in y_lo..y_hi {
                    let iy = y * g.sh + ki - g.ph;
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let line = &src[y * ow..(y + 1) * ow];
                    for x in x_lo..x_hi {
                        dst[x * g.sw + kj - g.pw] += line[x];
                    }
                }
            }
        }
    }
}

/// `out[n] = W · im2col(x[n]) + b`, weight `[k, c, kh, kw]`.
pub fn conv2d_forward<T: Real>(
    x: &[T],
    n: usize,
    g: &ConvGeom,
    weight: &[T],
    bias: Option<&[T]>,
    k: usize,
) -> Vec<T> {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut out = vec![T::zero(); n * k * cols];
    let mut col = vec![T::zero(); rows * cols];
    for s in 0..n {
        im2col(&x[s * g.image_len()..(s + 1) * g.image_len()], g, &mut col);
        let o = &mut out[s * k * cols..(s + 1) * k * cols];
        T::gemm(k, rows, cols, weight, false, &col, false, T::zero(), o);
        if let Some(b) = bias {
            for (ch, line) in o.chunks_mut(cols).enumerate() {
                line.iter_mut().for_each(|v| *v += b[ch]);
            }
        }
    }
    out
}

/// Gradients of [`conv2d_forward`]. Each returned buffer is only computed
/// when requested.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Real>(
    x: &[T],
    n: usize,
    g: &ConvGeom,
    weight: &[T],
    k: usize,
    dout: &[T],
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut dx = want_dx.then(|| vec![T::zero(); n * g.image_len()]);
    let mut dw = want_dw.then(|| vec![T::zero(); k * rows]);
    let mut db = vec![T::zero(); k];
    let mut col = vec![T::zero(); rows * cols];
    for s in 0..n {
        let d = &dout[s * k * cols..(s + 1) * k * cols];
        for (ch, line) in d.chunks(cols).enumerate() {
            db[ch] += line.iter().fold(T::zero(), |a, &b| a + b);
        }
        if let Some(dw) = dw.as_mut() {
            im2col(&x[s * g.image_len()..(s + 1) * g.image_len()], g, &mut col);
            T::gemm(k, cols, rows, d, false, &col, true, T::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            T::gemm(rows, k, cols, weight, true, d, false, T::zero(), &mut col);
            col2im(&col, g, &mut dx[s * g.image_len()..(s + 1) * g.image_len()]);
        }
    }
    (dx, dw, db)
}

/// Transposed convolution. `g` is the geometry of the *forward* conv that
/// maps the output image `(c_out, h_out, w_out)` back to the input grid, and
/// the weight is laid out `[c_in, c_out, kh, kw]`.
pub fn conv_transpose2d_forward<T: Real>(
    x: &[T],
    n: usize,
    g: &ConvGeom,
    weight: &[T],
    bias: Option<&[T]>,
    c_in: usize,
) -> Vec<T> {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let img = g.image_len();
    let mut out = vec![T::zero(); n * img];
    let mut col = vec![T::zero(); rows * cols];
    for s in 0..n {
        let xs = &x[s * c_in * cols..(s + 1) * c_in * cols];
        T::gemm(rows, c_in, cols, weight, true, xs, false, T::zero(), &mut col);
        let o = &mut out[s * img..(s + 1) * img];
        col2im(&col, g, o);
        if let Some(b) = bias {
            for (ch, plane) in o.chunks_mut(g.h * g.w).enumerate() {
                plane.iter_mut().for_each(|v| *v += b[ch]);
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward<T: Real>(
    x: &[T],
    n: usize,
    g: &ConvGeom,
    weight: &[T],
    c_in: usize,
    dout: &[T],
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let img = g.image_len();
    let mut dx = want_dx.then(|| vec![T::zero(); n * c_in * cols]);
    let mut dw = want_dw.then(|| vec![T::zero(); c_in * rows]);
    let mut db = vec![T::zero(); g.c];
    let mut col = vec![T::zero(); rows * cols];
    for s in 0..n {
        let d = &dout[s * img..(s + 1) * img];
        for (ch, plane) in d.chunks(g.h * g.w).enumerate() {
            db[ch] += plane.iter().fold(T::zero(), |a, &b| a + b);
        }
        if dx.is_none() && dw.is_none() {
            continue;
        }
        im2col(d, g, &mut col);
        if let Some(dx) = dx.as_mut() {
            let o = &mut dx[s * c_in * cols..(s + 1) * c_in * cols];
            T::gemm(c_in, rows, cols, weight, false, &col, false, T::zero(), o);
        }
        if let Some(dw) = dw.as_mut() {
            let xs = &x[s * c_in * cols..(s + 1) * c_in * cols];
            T::gemm(c_in, cols, rows, xs, false, &col, true, T::one(), dw);
        }
    }
    (dx, dw, db)
}

/// Pooling window and stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pool2d {
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
}

impl Pool2d {
    pub const fn square(k: usize) -> Self {
        Self { kh: k, kw: k, sh: k, sw: k }
    }
    pub fn out_h(&self, h: usize) -> usize {
        (h - self.kh) / self.sh + 1
    }
    pub fn out_w(&self, w: usize) -> usize {
        (w - self.kw) / self.sw + 1
    }
}

/// Windowed maxima over `planes` planes of `h×w`. Returns the output and,
/// per output element, the flat index of the winning input element. Ties
/// resolve to the first element in row-major scan order.
pub fn max_pool_forward<T: Real>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    p: &Pool2d,
) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (p.out_h(h), p.out_w(w));
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for pl in 0..planes {
        let base = pl * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = base + y * p.sh * w + xo * p.sw;
                let mut best_v = x[best];
                for i in 0..p.kh {
                    let row = base + (y * p.sh + i) * w + xo * p.sw;
                    for j in 0..p.kw {
                        let v = x[row + j];
                        if v > best_v {
                            best_v = v;
                            best = row + j;
                        }
                    }
                }
                out.push(best_v);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

/// Replicates every element into a `kh×kw` block.
pub fn upsample_forward<T: Real>(x: &[T], planes: usize, h: usize, w: usize, kh: usize, kw: usize) -> Vec<T> {
    let (oh, ow) = (h * kh, w * kw);
    let mut out = vec![T::zero(); planes * oh * ow];
    for pl in 0..planes {
        for y in 0..oh {
            let src = &x[pl * h * w + (y / kh) * w..pl * h * w + (y / kh + 1) * w];
            let dst = &mut out[pl * oh * ow + y * ow..pl * oh * ow + (y + 1) * ow];
            for (xo, d) in dst.iter_mut().enumerate() {
                *d = src[xo / kw];
            }
        }
    }
    out
}

/// Adjoint of [`upsample_forward`]: block sums.
pub fn upsample_backward<T: Real>(d: &[T], planes: usize, h: usize, w: usize, kh: usize, kw: usize) -> Vec<T> {
    let (oh, ow) = (h * kh, w * kw);
    let mut out = vec![T::zero(); planes * h * w];
    for pl in 0..planes {
        for y in 0..oh {
            let src = &d[pl * oh * ow + y * ow..pl * oh * ow + (y + 1) * ow];
            let dst = &mut out[pl * h * w + (y / kh) * w..pl * h * w + (y / kh + 1) * w];
            for (xo, &v) in src.iter().enumerate() {
                dst[xo / kw] += v;
            }
        }
    }
    out
}

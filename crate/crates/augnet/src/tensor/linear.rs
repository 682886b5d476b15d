//! Dense, convolution and pooling layers.
//!
//! Convolutions lower to im2col + a blocked matmul. The matmul carries the
//! bulk of the training cost, so its inner loops are written to
//! auto-vectorize: contiguous output rows, four rows of the left operand per
//! pass, and multi-accumulator dot products where a reduction is needed.

use super::tape::Tape;
use super::Tensor;

const MR: usize = 4; // rows per microkernel tile
const NR: usize = 16; // columns per microkernel tile (two 8-lane vectors)

/// 4x16 microkernel: accumulators live in registers across the whole k loop,
/// so each k step is two b-tile loads, four broadcasts and eight FMAs.
/// `mul_add` is deliberate: it fuses to hardware FMA (and rounds once).
#[inline]
fn kernel_4x16(a: &[f64], b: &[f64], k: usize, n: usize, i: usize, j: usize, out: &mut [f64]) {
    let mut acc = [[0.0f64; NR]; MR];
    for p in 0..k {
        let bt = &b[p * n + j..p * n + j + NR];
        for (r, accr) in acc.iter_mut().enumerate() {
            let ar = a[(i + r) * k + p];
            for l in 0..NR {
                accr[l] = ar.mul_add(bt[l], accr[l]);
            }
        }
    }
    for (r, accr) in acc.iter().enumerate() {
        let orow = &mut out[(i + r) * n + j..(i + r) * n + j + NR];
        for l in 0..NR {
            orow[l] += accr[l];
        }
    }
}

/// out[m x n] += a[m x k] @ b[k x n], row-major.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);

    let m_main = m - m % MR;
    let n_main = n - n % NR;
    // Column tiles outer: the k x 16 slab of b stays cache-hot while every
    // row block passes over it.
    let mut j = 0;
    while j < n_main {
        let mut i = 0;
        while i < m_main {
            kernel_4x16(a, b, k, n, i, j, out);
            i += MR;
        }
        // row tail for this column tile
        while i < m {
            let arow = &a[i * k..(i + 1) * k];
            let orow = &mut out[i * n + j..i * n + j + NR];
            for (p, &av) in arow.iter().enumerate() {
                let bt = &b[p * n + j..p * n + j + NR];
                for l in 0..NR {
                    orow[l] = av.mul_add(bt[l], orow[l]);
                }
            }
            i += 1;
        }
        j += NR;
    }
    // column tail
    if j < n {
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            for (p, &av) in arow.iter().enumerate() {
                let brow = &b[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for jj in j..n {
                    orow[jj] = av.mul_add(brow[jj], orow[jj]);
                }
            }
        }
    }
}

/// Multi-accumulator dot product (vectorizes without reassociation issues).
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let i = c * 8;
        for l in 0..8 {
            acc[l] = a[i + l].mul_add(b[i + l], acc[l]);
        }
    }
    let mut s = 0.0;
    for v in acc {
        s += v;
    }
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

/// floor((in + 2*pad - k)/stride) + 1, the explicit output-size contract.
pub fn conv_out_len(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(stride >= 1, "stride must be at least 1");
    assert!(
        input + 2 * pad >= k,
        "kernel {k} larger than padded input {}",
        input + 2 * pad
    );
    (input + 2 * pad - k) / stride + 1
}

fn im2col_2d(
    x: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    col: &mut [f64],
) {
    let ho = conv_out_len(h, kh, stride, pad);
    let wo = conv_out_len(w, kw, stride, pad);
    let n = ho * wo;
    debug_assert_eq!(col.len(), c_in * kh * kw * n);
    for c in 0..c_in {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((c * kh + ki) * kw + kj) * n;
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    let dst = &mut col[row + oy * wo..row + (oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src_row = (c * h + iy as usize) * w;
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            x[src_row + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im_2d(
    col: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    x: &mut [f64],
) {
    let ho = conv_out_len(h, kh, stride, pad);
    let wo = conv_out_len(w, kw, stride, pad);
    let n = ho * wo;
    for c in 0..c_in {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((c * kh + ki) * kw + kj) * n;
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = (c * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            x[dst_row + ix as usize] += col[row + oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

impl Tape {
    /// Fully connected layer: `x (B, I) @ w (I, O) + b (O)`.
    pub fn dense(&mut self, x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
        let (bs, i) = (x.shape()[0], x.shape()[1]);
        assert_eq!(x.shape().len(), 2, "dense expects (batch, features)");
        assert_eq!(w.shape().len(), 2, "dense weight must be (in, out)");
        assert_eq!(w.shape()[0], i, "dense: input width mismatch");
        let o = w.shape()[1];
        assert_eq!(b.shape(), &[o], "dense: bias shape mismatch");

        let mut y = vec![0.0; bs * o];
        matmul_acc(x.data(), w.data(), bs, i, o, &mut y);
        for r in 0..bs {
            for (j, yv) in y[r * o..(r + 1) * o].iter_mut().enumerate() {
                *yv += b.data()[j];
            }
        }
        let out = Tensor::from_vec(&[bs, o], y);

        let xi = self.index_of(x);
        let wi = self.index_of(w);
        let bi = self.index_of(b);
        if xi.is_none() && wi.is_none() && bi.is_none() {
            return out;
        }
        let mut parents = Vec::new();
        let (mut sx, mut sw, mut sb) = (None, None, None);
        if let Some(ix) = xi {
            sx = Some(parents.len());
            parents.push(ix);
        }
        if let Some(iw) = wi {
            sw = Some(parents.len());
            parents.push(iw);
        }
        if let Some(ib) = bi {
            sb = Some(parents.len());
            parents.push(ib);
        }
        let xd = x.share_data();
        let wd = w.share_data();
        self.record(
            "dense",
            parents,
            out,
            Box::new(move |g| {
                let mut contribs = Vec::new();
                if let Some(s) = sx {
                    // gx = g @ w^T
                    let wt = transpose(&wd, i, o);
                    let mut gx = vec![0.0; bs * i];
                    matmul_acc(g, &wt, bs, o, i, &mut gx);
                    contribs.push((s, gx));
                }
                if let Some(s) = sw {
                    // gw = x^T @ g
                    let xt = transpose(&xd, bs, i);
                    let mut gw = vec![0.0; i * o];
                    matmul_acc(&xt, g, i, bs, o, &mut gw);
                    contribs.push((s, gw));
                }
                if let Some(s) = sb {
                    let mut gb = vec![0.0; o];
                    for r in 0..bs {
                        for j in 0..o {
                            gb[j] += g[r * o + j];
                        }
                    }
                    contribs.push((s, gb));
                }
                contribs
            }),
        )
    }

    /// 1-D convolution: `x (B, C, L)` with kernels `w (F, C, K)`, no bias.
    pub fn conv1d(&mut self, x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
        assert_eq!(x.shape().len(), 3, "conv1d expects (batch, channels, len)");
        assert_eq!(w.shape().len(), 3, "conv1d kernel must be (out, in, k)");
        let (bs, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (f, wc, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        assert_eq!(c, wc, "conv1d: channel mismatch");
        let lo = conv_out_len(l, k, stride, pad);

        let xd = x.data();
        let wd = w.data();
        let mut y = vec![0.0; bs * f * lo];
        for bi in 0..bs {
            for fi in 0..f {
                let yrow = &mut y[(bi * f + fi) * lo..(bi * f + fi + 1) * lo];
                for ci in 0..c {
                    let xrow = &xd[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                    let wrow = &wd[(fi * c + ci) * k..(fi * c + ci + 1) * k];
                    for (o, yv) in yrow.iter_mut().enumerate() {
                        let mut s = 0.0;
                        for (t, &wv) in wrow.iter().enumerate() {
                            let i = (o * stride + t) as isize - pad as isize;
                            if i >= 0 && (i as usize) < l {
                                s += wv * xrow[i as usize];
                            }
                        }
                        *yv += s;
                    }
                }
            }
        }
        let out = Tensor::from_vec(&[bs, f, lo], y);

        let xi = self.index_of(x);
        let wi = self.index_of(w);
        if xi.is_none() && wi.is_none() {
            return out;
        }
        let mut parents = Vec::new();
        let (mut sx, mut sw) = (None, None);
        if let Some(ix) = xi {
            sx = Some(parents.len());
            parents.push(ix);
        }
        if let Some(iw) = wi {
            sw = Some(parents.len());
            parents.push(iw);
        }
        let xd = x.share_data();
        let wd = w.share_data();
        self.record(
            "conv1d",
            parents,
            out,
            Box::new(move |g| {
                let mut contribs = Vec::new();
                if let Some(s) = sx {
                    let mut gx = vec![0.0; bs * c * l];
                    for bi in 0..bs {
                        for fi in 0..f {
                            let grow = &g[(bi * f + fi) * lo..(bi * f + fi + 1) * lo];
                            for ci in 0..c {
                                let gxrow = &mut gx[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                                let wrow = &wd[(fi * c + ci) * k..(fi * c + ci + 1) * k];
                                for (o, &gv) in grow.iter().enumerate() {
                                    for (t, &wv) in wrow.iter().enumerate() {
                                        let i = (o * stride + t) as isize - pad as isize;
                                        if i >= 0 && (i as usize) < l {
                                            gxrow[i as usize] += gv * wv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    contribs.push((s, gx));
                }
                if let Some(s) = sw {
                    let mut gw = vec![0.0; f * c * k];
                    for bi in 0..bs {
                        for fi in 0..f {
                            let grow = &g[(bi * f + fi) * lo..(bi * f + fi + 1) * lo];
                            for ci in 0..c {
                                let xrow = &xd[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                                let gwrow = &mut gw[(fi * c + ci) * k..(fi * c + ci + 1) * k];
                                for (o, &gv) in grow.iter().enumerate() {
                                    for (t, gwv) in gwrow.iter_mut().enumerate() {
                                        let i = (o * stride + t) as isize - pad as isize;
                                        if i >= 0 && (i as usize) < l {
                                            *gwv += gv * xrow[i as usize];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    contribs.push((s, gw));
                }
                contribs
            }),
        )
    }

    /// 2-D convolution via im2col: `x (B, C, H, W)`, kernels `w (F, C, Kh, Kw)`.
    pub fn conv2d(&mut self, x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
        assert_eq!(x.shape().len(), 4, "conv2d expects (batch, ch, h, w)");
        assert_eq!(w.shape().len(), 4, "conv2d kernel must be (out, in, kh, kw)");
        let (bs, c, h, wd_) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (f, wc, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        assert_eq!(c, wc, "conv2d: channel mismatch");
        let ho = conv_out_len(h, kh, stride, pad);
        let wo = conv_out_len(wd_, kw, stride, pad);
        let n = ho * wo;
        let ck = c * kh * kw;

        let xd = x.data();
        let mut y = vec![0.0; bs * f * n];
        let mut col = vec![0.0; ck * n];
        for bi in 0..bs {
            im2col_2d(
                &xd[bi * c * h * wd_..(bi + 1) * c * h * wd_],
                c,
                h,
                wd_,
                kh,
                kw,
                stride,
                pad,
                &mut col,
            );
            matmul_acc(w.data(), &col, f, ck, n, &mut y[bi * f * n..(bi + 1) * f * n]);
        }
        let out = Tensor::from_vec(&[bs, f, ho, wo], y);

        let xi = self.index_of(x);
        let wi = self.index_of(w);
        if xi.is_none() && wi.is_none() {
            return out;
        }
        let mut parents = Vec::new();
        let (mut sx, mut sw) = (None, None);
        if let Some(ix) = xi {
            sx = Some(parents.len());
            parents.push(ix);
        }
        if let Some(iw) = wi {
            sw = Some(parents.len());
            parents.push(iw);
        }
        let xd = x.share_data();
        let wdt = w.share_data();
        self.record(
            "conv2d",
            parents,
            out,
            Box::new(move |g| {
                let mut contribs = Vec::new();
                let img = c * h * wd_;
                if let Some(s) = sx {
                    // gcol = w^T @ g_image, then scatter back with col2im
                    let wt = transpose(&wdt, f, ck);
                    let mut gx = vec![0.0; bs * img];
                    let mut gcol = vec![0.0; ck * n];
                    for bi in 0..bs {
                        gcol.fill(0.0);
                        matmul_acc(&wt, &g[bi * f * n..(bi + 1) * f * n], ck, f, n, &mut gcol);
                        col2im_2d(
                            &gcol,
                            c,
                            h,
                            wd_,
                            kh,
                            kw,
                            stride,
                            pad,
                            &mut gx[bi * img..(bi + 1) * img],
                        );
                    }
                    contribs.push((s, gx));
                }
                if let Some(s) = sw {
                    // gw^T (ck x f) accumulates col @ g^T per image, transposed at the end
                    let mut gwt = vec![0.0; ck * f];
                    let mut col = vec![0.0; ck * n];
                    for bi in 0..bs {
                        im2col_2d(
                            &xd[bi * img..(bi + 1) * img],
                            c,
                            h,
                            wd_,
                            kh,
                            kw,
                            stride,
                            pad,
                            &mut col,
                        );
                        let gt = transpose(&g[bi * f * n..(bi + 1) * f * n], f, n);
                        matmul_acc(&col, &gt, ck, n, f, &mut gwt);
                    }
                    contribs.push((s, transpose(&gwt, ck, f)));
                }
                contribs
            }),
        )
    }

    /// 1-D max pooling; gradient routes to the argmax (ties to lowest index).
    pub fn maxpool1d(&mut self, x: &Tensor, size: usize, stride: usize) -> Tensor {
        assert_eq!(x.shape().len(), 3, "maxpool1d expects (batch, ch, len)");
        let (bs, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let lo = conv_out_len(l, size, stride, 0);
        let xd = x.data();
        let mut y = vec![0.0; bs * c * lo];
        let mut arg = vec![0usize; bs * c * lo];
        for r in 0..bs * c {
            let xrow = &xd[r * l..(r + 1) * l];
            for o in 0..lo {
                let start = o * stride;
                let mut best = f64::NEG_INFINITY;
                let mut bi = start;
                for i in start..(start + size).min(l) {
                    if xrow[i] > best {
                        best = xrow[i];
                        bi = i;
                    }
                }
                y[r * lo + o] = best;
                arg[r * lo + o] = r * l + bi;
            }
        }
        let out = Tensor::from_vec(&[bs, c, lo], y);
        let Some(idx) = self.index_of(x) else { return out };
        let total = x.len();
        self.record(
            "maxpool1d",
            vec![idx],
            out,
            Box::new(move |g| {
                let mut gx = vec![0.0; total];
                for (gi, &a) in g.iter().zip(arg.iter()) {
                    gx[a] += gi;
                }
                vec![(0, gx)]
            }),
        )
    }

    /// 2-D max pooling; gradient routes to the argmax (ties to lowest index,
    /// scanning rows then columns).
    pub fn maxpool2d(&mut self, x: &Tensor, size: usize, stride: usize) -> Tensor {
        assert_eq!(x.shape().len(), 4, "maxpool2d expects (batch, ch, h, w)");
        let (bs, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let ho = conv_out_len(h, size, stride, 0);
        let wo = conv_out_len(w, size, stride, 0);
        let xd = x.data();
        let mut y = vec![0.0; bs * c * ho * wo];
        let mut arg = vec![0usize; y.len()];
        for r in 0..bs * c {
            let base = r * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut bidx = base;
                    for iy in (oy * stride)..(oy * stride + size).min(h) {
                        for ix in (ox * stride)..(ox * stride + size).min(w) {
                            let i = base + iy * w + ix;
                            if xd[i] > best {
                                best = xd[i];
                                bidx = i;
                            }
                        }
                    }
                    let o = (r * ho + oy) * wo + ox;
                    y[o] = best;
                    arg[o] = bidx;
                }
            }
        }
        let out = Tensor::from_vec(&[bs, c, ho, wo], y);
        let Some(idx) = self.index_of(x) else { return out };
        let total = x.len();
        self.record(
            "maxpool2d",
            vec![idx],
            out,
            Box::new(move |g| {
                let mut gx = vec![0.0; total];
                for (gi, &a) in g.iter().zip(arg.iter()) {
                    gx[a] += gi;
                }
                vec![(0, gx)]
            }),
        )
    }

    /// Mean over all spatial axes: (B, C, ...) -> (B, C).
    pub fn global_mean_pool(&mut self, x: &Tensor) -> Tensor {
        assert!(
            x.shape().len() >= 3,
            "global_mean_pool expects (batch, ch, spatial...)"
        );
        let (bs, c) = (x.shape()[0], x.shape()[1]);
        let spatial: usize = x.shape()[2..].iter().product();
        assert!(spatial > 0);
        let xd = x.data();
        let mut y = vec![0.0; bs * c];
        for (r, yv) in y.iter_mut().enumerate() {
            let row = &xd[r * spatial..(r + 1) * spatial];
            *yv = row.iter().sum::<f64>() / spatial as f64;
        }
        let out = Tensor::from_vec(&[bs, c], y);
        let Some(idx) = self.index_of(x) else { return out };
        self.record(
            "global_mean_pool",
            vec![idx],
            out,
            Box::new(move |g| {
                let mut gx = vec![0.0; g.len() * spatial];
                for (r, &gv) in g.iter().enumerate() {
                    let share = gv / spatial as f64;
                    for v in &mut gx[r * spatial..(r + 1) * spatial] {
                        *v = share;
                    }
                }
                vec![(0, gx)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Tape, Tensor};
    use super::*;

    #[test]
    fn matmul_matches_naive() {
        let (m, k, n) = (5, 7, 6);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.73).cos()).collect();
        let mut fast = vec![0.0; m * n];
        matmul_acc(&a, &b, m, k, n, &mut fast);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                assert!((fast[i * n + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn dense_identity_weights() {
        let mut tape = Tape::new();
        let x = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]);
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = Tensor::from_vec(&[2], vec![0.0, 0.0]);
        let y = tape.dense(&x, &w, &b);
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn conv1d_identity_kernel() {
        let mut tape = Tape::new();
        let x = Tensor::from_vec(&[1, 1, 3], vec![1.0, 2.0, 3.0]);
        let w = Tensor::from_vec(&[1, 1, 1], vec![1.0]);
        let y = tape.conv1d(&x, &w, 1, 0);
        assert_eq!(y.shape(), &[1, 1, 3]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn maxpool1d_definition() {
        let mut tape = Tape::new();
        let x = Tensor::from_vec(&[1, 1, 4], vec![1.0, 3.0, 2.0, 5.0]);
        let y = tape.maxpool1d(&x, 2, 2);
        assert_eq!(y.data(), &[3.0, 5.0]);
    }

    #[test]
    fn maxpool_tie_routes_to_lowest_index() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[1, 1, 4], vec![2.0, 2.0, 1.0, 1.0]));
        let y = tape.maxpool1d(&x, 2, 2);
        let s = tape.sum(&y);
        let g = tape.backward(&s);
        assert_eq!(g.get(&x).unwrap(), &[1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn conv2d_matches_direct_convolution() {
        // random-ish small case against a hand-rolled direct loop
        let (bs, c, h, w, f, k, stride, pad) = (2, 3, 5, 6, 4, 3, 2, 1);
        let x = Tensor::from_fn(&[bs, c, h, w], |i| ((i * 31 % 17) as f64 - 8.0) / 5.0);
        let wk = Tensor::from_fn(&[f, c, k, k], |i| ((i * 13 % 11) as f64 - 5.0) / 7.0);
        let mut tape = Tape::new();
        let y = tape.conv2d(&x, &wk, stride, pad);
        let ho = conv_out_len(h, k, stride, pad);
        let wo = conv_out_len(w, k, stride, pad);
        assert_eq!(y.shape(), &[bs, f, ho, wo]);
        let xd = x.data();
        let wd = wk.data();
        for bi in 0..bs {
            for fi in 0..f {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut s = 0.0;
                        for ci in 0..c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (oy * stride + ki) as isize - pad as isize;
                                    let ix = (ox * stride + kj) as isize - pad as isize;
                                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                        s += xd[((bi * c + ci) * h + iy as usize) * w
                                            + ix as usize]
                                            * wd[((fi * c + ci) * k + ki) * k + kj];
                                    }
                                }
                            }
                        }
                        let got = y.data()[((bi * f + fi) * ho + oy) * wo + ox];
                        assert!((got - s).abs() < 1e-12, "mismatch at {bi},{fi},{oy},{ox}");
                    }
                }
            }
        }
    }

    #[test]
    fn global_mean_pool_shape_and_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[1, 2, 2, 2], (1..=8).map(f64::from).collect()));
        let y = tape.global_mean_pool(&x);
        assert_eq!(y.shape(), &[1, 2]);
        assert_eq!(y.data(), &[2.5, 6.5]);
        let s = tape.sum(&y);
        let g = tape.backward(&s);
        assert!(g.get(&x).unwrap().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn conv_out_len_formula() {
        assert_eq!(conv_out_len(32, 3, 1, 1), 32);
        assert_eq!(conv_out_len(32, 2, 2, 0), 16);
        assert_eq!(conv_out_len(4, 4, 1, 0), 1);
        assert_eq!(conv_out_len(5, 3, 2, 0), 2);
    }
}

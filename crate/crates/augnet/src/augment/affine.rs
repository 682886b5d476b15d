//! Differentiable affine warps: translation, rotation and shear with
//! bilinear resampling.
//!
//! Coordinates are normalized to [-1, 1] on both axes (align-corners
//! convention: pixel centers sit on the grid ends). Each output pixel
//! samples the input at the affinely mapped location; samples outside the
//! frame are zero. Gradients flow to the input through the bilinear weights
//! and to the magnitude through the map coefficients.

use crate::tensor::{Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum AffineKind {
    TranslateX,
    TranslateY,
    Rotate,
    ShearX,
    ShearY,
}

/// Source coordinates (normalized) for output location (u, v) under
/// parameter p, and their derivatives with respect to p.
#[inline]
fn source_coords(kind: AffineKind, p: f64, u: f64, v: f64) -> (f64, f64, f64, f64) {
    match kind {
        AffineKind::TranslateX => (u - p, v, -1.0, 0.0),
        AffineKind::TranslateY => (u, v - p, 0.0, -1.0),
        AffineKind::Rotate => {
            let (s, c) = p.sin_cos();
            (
                c * u + s * v,
                -s * u + c * v,
                -s * u + c * v,
                -c * u - s * v,
            )
        }
        AffineKind::ShearX => (u + p * v, v, v, 0.0),
        AffineKind::ShearY => (u, v + p * u, 0.0, u),
    }
}

/// Bilinear read with zero padding outside [0, h) x [0, w).
#[inline]
fn tap(img: &[f64], h: usize, w: usize, y: isize, x: isize) -> f64 {
    if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
        0.0
    } else {
        img[y as usize * w + x as usize]
    }
}

/// Plain bilinear sample of one channel plane at pixel coords (py, px).
/// Shared by the warp backward pass and the dataset glyph renderer.
pub(crate) fn bilinear_at(img: &[f64], h: usize, w: usize, py: f64, px: f64) -> f64 {
    let y0 = py.floor();
    let x0 = px.floor();
    let fy = py - y0;
    let fx = px - x0;
    let (yi, xi) = (y0 as isize, x0 as isize);
    let t00 = tap(img, h, w, yi, xi);
    let t01 = tap(img, h, w, yi, xi + 1);
    let t10 = tap(img, h, w, yi + 1, xi);
    let t11 = tap(img, h, w, yi + 1, xi + 1);
    (1.0 - fy) * ((1.0 - fx) * t00 + fx * t01) + fy * ((1.0 - fx) * t10 + fx * t11)
}

/// Rotate one (c, h, w) image by `angle` with exact bilinear resampling,
/// outside-frame samples zero. Used by the sprite generator.
pub(crate) fn rotate_image(img: &[f64], c: usize, h: usize, w: usize, angle: f64) -> Vec<f64> {
    let grid = WarpGrid::build(AffineKind::Rotate, angle, h, w);
    let mut out = vec![0.0; img.len()];
    for ch in 0..c {
        let plane = &img[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for (i, &(py, px)) in grid.coords.iter().enumerate() {
            dst[i] = bilinear_at(plane, h, w, py, px);
        }
    }
    out
}

/// Precomputed source pixel coordinates and their d/dp for a whole frame.
struct WarpGrid {
    coords: Vec<(f64, f64)>,
    dcoords: Vec<(f64, f64)>,
}

impl WarpGrid {
    fn build(kind: AffineKind, p: f64, h: usize, w: usize) -> WarpGrid {
        assert!(h >= 2 && w >= 2, "warp needs at least a 2x2 frame");
        let mut coords = Vec::with_capacity(h * w);
        let mut dcoords = Vec::with_capacity(h * w);
        let sx = (w - 1) as f64 / 2.0;
        let sy = (h - 1) as f64 / 2.0;
        for oy in 0..h {
            let v = oy as f64 / sy - 1.0;
            for ox in 0..w {
                let u = ox as f64 / sx - 1.0;
                let (us, vs, dus, dvs) = source_coords(kind, p, u, v);
                coords.push(((vs + 1.0) * sy, (us + 1.0) * sx));
                dcoords.push((dvs * sy, dus * sx));
            }
        }
        WarpGrid { coords, dcoords }
    }
}

/// Differentiable warp of a batch of images `(B, C, H, W)` with parameter
/// `p = mu * eps * range`. The same draw applies to the whole batch.
pub(crate) fn affine_warp(
    tape: &mut Tape,
    x: &Tensor,
    mu: &Tensor,
    kind: AffineKind,
    range: f64,
    eps: f64,
) -> Tensor {
    assert_eq!(x.shape().len(), 4, "affine warp expects (batch, ch, h, w)");
    assert!(mu.is_scalar(), "magnitude must be scalar");
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let p = mu.item() * eps * range;
    assert!(p.is_finite(), "non-finite warp parameter");

    let plane = h * w;
    let data = if p == 0.0 {
        // exact identity, bit for bit
        x.to_vec()
    } else {
        let grid = WarpGrid::build(kind, p, h, w);
        let xd = x.data();
        let mut out = vec![0.0; x.len()];
        for bc in 0..b * c {
            let src = &xd[bc * plane..(bc + 1) * plane];
            let dst = &mut out[bc * plane..(bc + 1) * plane];
            for (i, &(py, px)) in grid.coords.iter().enumerate() {
                dst[i] = bilinear_at(src, h, w, py, px);
            }
        }
        out
    };
    let out = Tensor::from_vec(x.shape(), data);

    let xi = tape.index_of(x);
    let mi = tape.index_of(mu);
    if xi.is_none() && mi.is_none() {
        return out;
    }
    let mut parents = Vec::new();
    let (mut sx_slot, mut sm_slot) = (None, None);
    if let Some(i) = xi {
        sx_slot = Some(parents.len());
        parents.push(i);
    }
    if let Some(i) = mi {
        sm_slot = Some(parents.len());
        parents.push(i);
    }
    let xd = x.share_data();
    tape.record(
        "affine_warp",
        parents,
        out,
        Box::new(move |g| {
            let grid = WarpGrid::build(kind, p, h, w);
            let mut contribs = Vec::new();
            if let Some(slot) = sx_slot {
                // scatter the four bilinear weights back to the source cells
                let mut gx = vec![0.0; b * c * plane];
                for bc in 0..b * c {
                    let gdst = &g[bc * plane..(bc + 1) * plane];
                    let gsrc = &mut gx[bc * plane..(bc + 1) * plane];
                    for (i, &(py, px)) in grid.coords.iter().enumerate() {
                        let gv = gdst[i];
                        if gv == 0.0 {
                            continue;
                        }
                        let y0 = py.floor();
                        let x0 = px.floor();
                        let fy = py - y0;
                        let fx = px - x0;
                        let (yi, xi) = (y0 as isize, x0 as isize);
                        let mut put = |y: isize, x: isize, wgt: f64| {
                            if y >= 0 && x >= 0 && y < h as isize && x < w as isize {
                                gsrc[y as usize * w + x as usize] += gv * wgt;
                            }
                        };
                        put(yi, xi, (1.0 - fy) * (1.0 - fx));
                        put(yi, xi + 1, (1.0 - fy) * fx);
                        put(yi + 1, xi, fy * (1.0 - fx));
                        put(yi + 1, xi + 1, fy * fx);
                    }
                }
                contribs.push((slot, gx));
            }
            if let Some(slot) = sm_slot {
                // chain: d out / d p via the sampling-point derivative,
                // then dp/dmu = eps * range
                let mut gp = 0.0;
                for bc in 0..b * c {
                    let src = &xd[bc * plane..(bc + 1) * plane];
                    let gdst = &g[bc * plane..(bc + 1) * plane];
                    for (i, (&(py, px), &(dpy, dpx))) in
                        grid.coords.iter().zip(grid.dcoords.iter()).enumerate()
                    {
                        let gv = gdst[i];
                        if gv == 0.0 {
                            continue;
                        }
                        let y0 = py.floor();
                        let x0 = px.floor();
                        let fy = py - y0;
                        let fx = px - x0;
                        let (yi, xi) = (y0 as isize, x0 as isize);
                        let t00 = tap(src, h, w, yi, xi);
                        let t01 = tap(src, h, w, yi, xi + 1);
                        let t10 = tap(src, h, w, yi + 1, xi);
                        let t11 = tap(src, h, w, yi + 1, xi + 1);
                        let dpx_out = (1.0 - fy) * (t01 - t00) + fy * (t11 - t10);
                        let dpy_out = (1.0 - fx) * (t10 - t00) + fx * (t11 - t01);
                        gp += gv * (dpx_out * dpx + dpy_out * dpy);
                    }
                }
                contribs.push((slot, vec![gp * eps * range]));
            }
            contribs
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Tape, Tensor};

    fn test_image(b: usize, c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_fn(&[b, c, h, w], |i| ((i * 37 % 101) as f64) / 101.0)
    }

    #[test]
    fn zero_magnitude_is_bit_identical() {
        let x = test_image(2, 3, 8, 8);
        for kind in [
            AffineKind::TranslateX,
            AffineKind::TranslateY,
            AffineKind::Rotate,
            AffineKind::ShearX,
            AffineKind::ShearY,
        ] {
            let mut tape = Tape::new();
            let mu = Tensor::scalar(0.0);
            let y = affine_warp(&mut tape, &x, &mu, kind, 1.0, 0.73);
            assert_eq!(y.data(), x.data(), "{kind:?}");
        }
    }

    #[test]
    fn quarter_turn_is_a_pixel_permutation() {
        // mu*eps*range = pi/2; content exactly representable under 90 deg
        let (h, w) = (9, 9);
        let x = test_image(1, 2, h, w);
        let mut tape = Tape::new();
        let mu = Tensor::scalar(0.5);
        let y = affine_warp(&mut tape, &x, &mu, AffineKind::Rotate, std::f64::consts::PI, 1.0);
        let xd = x.data();
        let yd = y.data();
        for ch in 0..2 {
            for r in 0..h {
                for cc in 0..w {
                    let want = xd[ch * h * w + (h - 1 - cc) * w + r];
                    let got = yd[ch * h * w + r * w + cc];
                    assert!(
                        (want - got).abs() < 1e-9,
                        "ch {ch} r {r} c {cc}: {want} vs {got}"
                    );
                }
            }
        }
    }

    #[test]
    fn translate_moves_content() {
        // shift by exactly one pixel on an 5-wide grid: p = 2/(w-1) = 0.5
        let (h, w) = (5, 5);
        let x = test_image(1, 1, h, w);
        let mut tape = Tape::new();
        let mu = Tensor::scalar(0.5);
        let y = affine_warp(&mut tape, &x, &mu, AffineKind::TranslateX, 1.0, 1.0);
        // us = u - p: out(r, c) = in(r, c - 1)
        let xd = x.data();
        let yd = y.data();
        for r in 0..h {
            for c in 1..w {
                assert!((yd[r * w + c] - xd[r * w + c - 1]).abs() < 1e-9);
            }
            assert!(yd[r * w].abs() < 1e-9); // zero padding enters
        }
    }

    #[test]
    fn magnitude_gradient_matches_finite_differences() {
        let x = test_image(1, 2, 8, 8);
        let probe = Tensor::from_fn(&[1, 2, 8, 8], |i| ((i * 13 % 19) as f64 - 9.0) / 10.0);
        for (kind, range) in [
            (AffineKind::TranslateX, 1.0),
            (AffineKind::TranslateY, 1.0),
            (AffineKind::Rotate, std::f64::consts::PI),
            (AffineKind::ShearX, 0.3),
            (AffineKind::ShearY, 0.3),
        ] {
            let eps_draw = 0.683;
            let value = |mu: &[f64]| {
                let mut tape = Tape::new();
                let m = Tensor::scalar(mu[0]);
                let y = affine_warp(&mut tape, &x, &m, kind, range, eps_draw);
                y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
            };
            let grad = |mu: &[f64]| {
                let mut tape = Tape::new();
                let m = tape.leaf(Tensor::scalar(mu[0]));
                let y = affine_warp(&mut tape, &x, &m, kind, range, eps_draw);
                let wy = tape.mul(&y, &probe);
                let s = tape.sum(&wy);
                let g = tape.backward(&s);
                g.get_or_zeros(&m)
            };
            let err = grad_check(value, grad, &[0.411], 1e-6);
            assert!(err < 1e-4, "{kind:?}: rel err {err}");
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let (h, w) = (6, 6);
        let x0 = test_image(1, 1, h, w);
        let probe = Tensor::from_fn(&[1, 1, h, w], |i| ((i * 7 % 13) as f64 - 6.0) / 7.0);
        let kind = AffineKind::Rotate;
        let value = |xs: &[f64]| {
            let mut tape = Tape::new();
            let x = Tensor::from_vec(&[1, 1, h, w], xs.to_vec());
            let mu = Tensor::scalar(0.3);
            let y = affine_warp(&mut tape, &x, &mu, kind, std::f64::consts::PI, 0.5);
            y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let grad = |xs: &[f64]| {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::from_vec(&[1, 1, h, w], xs.to_vec()));
            let mu = Tensor::scalar(0.3);
            let y = affine_warp(&mut tape, &x, &mu, kind, std::f64::consts::PI, 0.5);
            let wy = tape.mul(&y, &probe);
            let s = tape.sum(&wy);
            let g = tape.backward(&s);
            g.get_or_zeros(&x)
        };
        let err = grad_check(value, grad, x0.data(), 1e-6);
        assert!(err < 1e-5, "input grad rel err {err}");
    }
}

//! Pixel-space augmentations: horizontal flip (straight-through), and the
//! blend family (sample pairing, brightness, contrast).
//!
//! Pixel values are deliberately not clipped here: clipping would flatten
//! the magnitude gradients the whole approach depends on. Downstream
//! normalization absorbs any range drift.

use crate::tensor::{Tape, Tensor};

fn flip_last_axis(data: &[f64], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (row_out, row_in) in out.chunks_mut(width).zip(data.chunks(width)) {
        for (o, i) in row_out.iter_mut().zip(row_in.iter().rev()) {
            *o = *i;
        }
    }
    out
}

/// Horizontal flip with the straight-through magnitude estimator.
///
/// Forward: flip when the Bernoulli bit says so. Backward treats the output
/// as if it were the expectation's relaxation `(1-mu)*x + mu*flip(x)`, so
/// d(out)/d(mu) := flip(x) - x regardless of the sampled bit. The input
/// gradient is exact for the sampled branch.
pub(crate) fn hflip(tape: &mut Tape, x: &Tensor, mu: &Tensor, flipped: bool) -> Tensor {
    assert!(mu.is_scalar());
    let width = *x.shape().last().expect("hflip needs a width axis");
    let data = if flipped {
        flip_last_axis(x.data(), width)
    } else {
        x.to_vec()
    };
    let out = Tensor::from_vec(x.shape(), data);

    let xi = tape.index_of(x);
    let mi = tape.index_of(mu);
    if xi.is_none() && mi.is_none() {
        return out;
    }
    let mut parents = Vec::new();
    let (mut sx, mut sm) = (None, None);
    if let Some(i) = xi {
        sx = Some(parents.len());
        parents.push(i);
    }
    if let Some(i) = mi {
        sm = Some(parents.len());
        parents.push(i);
    }
    let xd = x.share_data();
    tape.record(
        "hflip",
        parents,
        out,
        Box::new(move |g| {
            let mut contribs = Vec::new();
            if let Some(slot) = sx {
                let gx = if flipped {
                    flip_last_axis(g, width)
                } else {
                    g.to_vec()
                };
                contribs.push((slot, gx));
            }
            if let Some(slot) = sm {
                let fx = flip_last_axis(&xd, width);
                let gm: f64 = g
                    .iter()
                    .zip(fx.iter().zip(xd.iter()))
                    .map(|(gv, (f, o))| gv * (f - o))
                    .sum();
                contribs.push((slot, vec![gm]));
            }
            contribs
        }),
    )
}

/// Additive brightness jitter: `x + scale * mu * eps` (composite of tape ops,
/// so gradients to both x and mu are exact).
pub(crate) fn brightness(tape: &mut Tape, x: &Tensor, mu: &Tensor, scale: f64, eps: f64) -> Tensor {
    let shift = tape.scale(mu, scale * eps);
    tape.add(x, &shift)
}

/// Blend each batch row with another row of the same batch:
/// `(1 - c) * x + c * roll(x)` with `c = mu * u`, labels unchanged.
pub(crate) fn sample_pairing(
    tape: &mut Tape,
    x: &Tensor,
    mu: &Tensor,
    u: f64,
    partner_shift: usize,
) -> Tensor {
    let b = x.shape()[0];
    assert!(
        b >= 2,
        "sample_pairing needs a partner: batch of {b} has none"
    );
    assert!(partner_shift >= 1 && partner_shift < b, "bad partner shift");
    let c = tape.scale(mu, u);
    let one_minus = tape.sub(&Tensor::scalar(1.0), &c);
    let rolled = tape.roll_axis0(x, partner_shift);
    let own = tape.mul(x, &one_minus);
    let other = tape.mul(&rolled, &c);
    tape.add(&own, &other)
}

/// Contrast jitter about each image's own mean:
/// `m + (1 + scale*mu*eps) * (x - m)` with m the per-image mean.
pub(crate) fn contrast(tape: &mut Tape, x: &Tensor, mu: &Tensor, scale: f64, eps: f64) -> Tensor {
    assert!(x.shape().len() >= 2, "contrast expects a batch axis");
    assert!(mu.is_scalar());
    let b = x.shape()[0];
    let per = x.len() / b;
    let f = mu.item() * scale * eps;
    let xd = x.data();
    let mut means = vec![0.0; b];
    let mut data = vec![0.0; x.len()];
    for bi in 0..b {
        let row = &xd[bi * per..(bi + 1) * per];
        let m = row.iter().sum::<f64>() / per as f64;
        means[bi] = m;
        for (o, &v) in data[bi * per..(bi + 1) * per].iter_mut().zip(row) {
            *o = m + (1.0 + f) * (v - m);
        }
    }
    let out = Tensor::from_vec(x.shape(), data);

    let xi = tape.index_of(x);
    let mi = tape.index_of(mu);
    if xi.is_none() && mi.is_none() {
        return out;
    }
    let mut parents = Vec::new();
    let (mut sx, mut sm) = (None, None);
    if let Some(i) = xi {
        sx = Some(parents.len());
        parents.push(i);
    }
    if let Some(i) = mi {
        sm = Some(parents.len());
        parents.push(i);
    }
    let xd = x.share_data();
    tape.record(
        "contrast",
        parents,
        out,
        Box::new(move |g| {
            let mut contribs = Vec::new();
            if let Some(slot) = sx {
                // d out_i / d x_j = (1+f) delta_ij - f / per  (within an image)
                let mut gx = vec![0.0; xd.len()];
                for bi in 0..b {
                    let grow = &g[bi * per..(bi + 1) * per];
                    let gsum: f64 = grow.iter().sum();
                    for (o, &gv) in gx[bi * per..(bi + 1) * per].iter_mut().zip(grow) {
                        *o = (1.0 + f) * gv - f * gsum / per as f64;
                    }
                }
                contribs.push((slot, gx));
            }
            if let Some(slot) = sm {
                // d out_i / d f = x_i - m;  d f / d mu = scale * eps
                let mut gm = 0.0;
                for bi in 0..b {
                    let grow = &g[bi * per..(bi + 1) * per];
                    let row = &xd[bi * per..(bi + 1) * per];
                    let m = means[bi];
                    gm += grow
                        .iter()
                        .zip(row)
                        .map(|(gv, &v)| gv * (v - m))
                        .sum::<f64>();
                }
                contribs.push((slot, vec![gm * scale * eps]));
            }
            contribs
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Tape, Tensor};

    fn img(b: usize) -> Tensor {
        Tensor::from_fn(&[b, 1, 3, 4], |i| ((i * 29 % 31) as f64) / 31.0)
    }

    #[test]
    fn hflip_twice_is_identity() {
        let x = img(1);
        let mut tape = Tape::new();
        let mu = Tensor::scalar(1.0);
        let once = hflip(&mut tape, &x, &mu, true);
        let twice = hflip(&mut tape, &once, &mu, true);
        assert_eq!(twice.data(), x.data());
        assert_ne!(once.data(), x.data());
    }

    #[test]
    fn hflip_unflipped_is_identity() {
        let x = img(2);
        let mut tape = Tape::new();
        let mu = Tensor::scalar(0.0);
        let y = hflip(&mut tape, &x, &mu, false);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn hflip_straight_through_mu_gradient() {
        let x = img(1);
        let probe = Tensor::from_fn(&[1, 1, 3, 4], |i| (i as f64 * 0.3).sin());
        for flipped in [false, true] {
            let mut tape = Tape::new();
            let mu = tape.leaf(Tensor::scalar(0.4));
            let y = hflip(&mut tape, &x, &mu, flipped);
            let wy = tape.mul(&y, &probe);
            let s = tape.sum(&wy);
            let g = tape.backward(&s);
            // ST gradient is <probe, flip(x) - x> independent of the bit
            let mut tape2 = Tape::new();
            let fx = hflip(&mut tape2, &x, &Tensor::scalar(1.0), true);
            let want: f64 = probe
                .data()
                .iter()
                .zip(fx.data().iter().zip(x.data()))
                .map(|(p, (f, o))| p * (f - o))
                .sum();
            let got = g.get(&mu).unwrap()[0];
            assert!((got - want).abs() < 1e-12, "flipped={flipped}");
        }
    }

    #[test]
    fn brightness_zero_mu_is_identity() {
        let x = img(2);
        let mut tape = Tape::new();
        let mu = Tensor::scalar(0.0);
        let y = brightness(&mut tape, &x, &mu, 0.5, 0.8);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn contrast_degenerate_factor_gives_constant_image() {
        // factor 1 + scale*mu*eps = 0 when scale=0.9, eps=-1, mu=1/0.9... use
        // mu such that f = -1: mu*0.9*eps = -1 with eps = -1 -> mu = 1/0.9
        let x = img(1);
        let mut tape = Tape::new();
        let mu = Tensor::scalar(1.0 / 0.9);
        let y = contrast(&mut tape, &x, &mu, 0.9, -1.0);
        let m = x.data().iter().sum::<f64>() / x.len() as f64;
        assert!(y.data().iter().all(|&v| (v - m).abs() < 1e-12));
    }

    #[test]
    fn blend_gradients_match_finite_differences() {
        let x = img(3);
        let probe = Tensor::from_fn(&[3, 1, 3, 4], |i| ((i * 11 % 17) as f64 - 8.0) / 9.0);
        // contrast wrt mu
        let value = |m: &[f64]| {
            let mut tape = Tape::new();
            let mu = Tensor::scalar(m[0]);
            let y = contrast(&mut tape, &x, &mu, 0.9, 0.37);
            y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let grad = |m: &[f64]| {
            let mut tape = Tape::new();
            let mu = tape.leaf(Tensor::scalar(m[0]));
            let y = contrast(&mut tape, &x, &mu, 0.9, 0.37);
            let wy = tape.mul(&y, &probe);
            let s = tape.sum(&wy);
            tape.backward(&s).get_or_zeros(&mu)
        };
        assert!(grad_check(value, grad, &[0.52], 1e-6) < 1e-6);

        // sample_pairing wrt mu
        let value = |m: &[f64]| {
            let mut tape = Tape::new();
            let mu = Tensor::scalar(m[0]);
            let y = sample_pairing(&mut tape, &x, &mu, 0.61, 1);
            y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let grad = |m: &[f64]| {
            let mut tape = Tape::new();
            let mu = tape.leaf(Tensor::scalar(m[0]));
            let y = sample_pairing(&mut tape, &x, &mu, 0.61, 1);
            let wy = tape.mul(&y, &probe);
            let s = tape.sum(&wy);
            tape.backward(&s).get_or_zeros(&mu)
        };
        assert!(grad_check(value, grad, &[0.3], 1e-6) < 1e-6);
    }

    #[test]
    #[should_panic(expected = "partner")]
    fn sample_pairing_without_partner_panics() {
        let x = img(1);
        let mut tape = Tape::new();
        let mu = Tensor::scalar(0.5);
        let _ = sample_pairing(&mut tape, &x, &mu, 0.5, 0);
    }
}

//! Signal augmentations: frequency shift, FT surrogate and additive
//! Gaussian noise. All are composites of differentiable tape ops, so the
//! magnitude gradients are the exact analytic derivatives.

use crate::tensor::{rfft_bins, Tape, Tensor};
use std::f64::consts::TAU;

/// Shift every frequency component by `df = mu * eps * max_shift_hz`.
///
/// Uses the analytic-signal construction: with `h = hilbert(x)` the result
/// is `x .* cos(w t) - h .* sin(w t)`, `w = 2 pi df`, which equals the real
/// part of the analytic signal modulated by `e^{i w t}`.
pub(crate) fn frequency_shift(
    tape: &mut Tape,
    x: &Tensor,
    mu: &Tensor,
    eps: f64,
    max_shift_hz: f64,
    sample_rate: f64,
) -> Tensor {
    assert_eq!(x.shape().len(), 3, "frequency_shift expects (batch, ch, n)");
    assert!(sample_rate > 0.0, "sample rate must be positive");
    let df = mu.item() * eps * max_shift_hz;
    assert!(df.is_finite(), "non-finite frequency shift");
    let n = x.shape()[2];

    // time vector replicated over batch and channels
    let t = Tensor::from_fn(x.shape(), |i| (i % n) as f64 / sample_rate);
    let omega = tape.scale(mu, TAU * eps * max_shift_hz);
    let phase = tape.mul(&t, &omega);
    let c = tape.cos(&phase);
    let s = tape.sin(&phase);
    let h = tape.hilbert(x);
    let xc = tape.mul(x, &c);
    let hs = tape.mul(&h, &s);
    tape.sub(&xc, &hs)
}

/// Randomize the phase of every interior frequency bin by `2 pi * mu * u_f`
/// while leaving all magnitudes unchanged.
pub(crate) fn ft_surrogate(tape: &mut Tape, x: &Tensor, mu: &Tensor, phases: &[f64]) -> Tensor {
    assert_eq!(x.shape().len(), 3, "ft_surrogate expects (batch, ch, n)");
    let n = x.shape()[2];
    let bins = rfft_bins(n);
    assert_eq!(phases.len(), bins, "one phase draw per bin");
    debug_assert!(phases[0] == 0.0 && phases[bins - 1] == 0.0, "DC/Nyquist fixed");

    let spec = tape.rfft(x);
    let re = tape.complex_re(&spec);
    let im = tape.complex_im(&spec);
    // phase angle tensor: same (b, ch, bins) layout as re/im
    let ang = Tensor::from_fn(re.shape(), |i| TAU * phases[i % bins]);
    let phi = tape.mul(&ang, mu);
    let c = tape.cos(&phi);
    let s = tape.sin(&phi);
    let rec_ = tape.mul(&re, &c);
    let ims = tape.mul(&im, &s);
    let re2 = tape.sub(&rec_, &ims);
    let res = tape.mul(&re, &s);
    let imc = tape.mul(&im, &c);
    let im2 = tape.add(&res, &imc);
    let rotated = tape.complex_join(&re2, &im2);
    tape.irfft(&rotated, n)
}

/// Additive Gaussian noise `x + mu * sigma_max * z` with a frozen draw `z`.
pub(crate) fn gaussian_noise(
    tape: &mut Tape,
    x: &Tensor,
    mu: &Tensor,
    z: &[f64],
    sigma_max: f64,
) -> Tensor {
    assert_eq!(z.len(), x.len(), "noise draw must match signal shape");
    let zt = Tensor::from_vec(x.shape(), z.to_vec());
    let s = tape.scale(mu, sigma_max);
    let noise = tape.mul(&zt, &s);
    tape.add(x, &noise)
}

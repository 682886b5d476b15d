//! Real FFT, inverse, and Hilbert transform as differentiable tape ops.
//!
//! The transform core is an iterative radix-2 complex FFT (the signal
//! presets use power-of-two lengths). Spectra are real tensors with a
//! trailing axis of size 2 holding interleaved (re, im) pairs; bins run
//! from DC to Nyquist inclusive. Gradients are implemented through the
//! adjoints of the linear maps: the adjoint of `rfft` is an unnormalized
//! inverse restricted to the kept bins, and the adjoint of `irfft`
//! reapplies the forward FFT with the conjugate-symmetry bin weights.

use super::tape::Tape;
use super::Tensor;
use num_complex::Complex64;
use std::f64::consts::PI;

/// Number of spectrum bins for a length-`n` real signal: n/2 + 1.
pub fn rfft_bins(n: usize) -> usize {
    n / 2 + 1
}

fn make_twiddles(n: usize, inverse: bool) -> Vec<Complex64> {
    let sign = if inverse { 1.0 } else { -1.0 };
    (0..n / 2)
        .map(|j| {
            let ang = sign * 2.0 * PI * j as f64 / n as f64;
            Complex64::new(ang.cos(), ang.sin())
        })
        .collect()
}

/// In-place radix-2 decimation-in-time FFT. `twiddles` must come from
/// `make_twiddles(buf.len(), inverse)`; inverse applies the 1/n factor.
fn fft_in_place(buf: &mut [Complex64], twiddles: &[Complex64], inverse: bool) {
    let n = buf.len();
    assert!(n >= 2, "fft length must be at least 2");
    assert!(
        n.is_power_of_two(),
        "radix-2 fft requires power-of-two length, got {n}"
    );

    // bit-reversal permutation
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }

    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for j in 0..half {
                let w = twiddles[j * step];
                let a = buf[start + j];
                let b = buf[start + j + half] * w;
                buf[start + j] = a + b;
                buf[start + j + half] = a - b;
            }
        }
        len *= 2;
    }

    if inverse {
        let scale = 1.0 / n as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

/// rows x n real -> rows x bins complex spectra (interleaved in `out`).
fn rfft_rows(x: &[f64], rows: usize, n: usize, out: &mut [f64]) {
    let bins = rfft_bins(n);
    let tw = make_twiddles(n, false);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for r in 0..rows {
        for (i, v) in buf.iter_mut().enumerate() {
            *v = Complex64::new(x[r * n + i], 0.0);
        }
        fft_in_place(&mut buf, &tw, false);
        for k in 0..bins {
            out[(r * bins + k) * 2] = buf[k].re;
            out[(r * bins + k) * 2 + 1] = buf[k].im;
        }
    }
}

/// rows x bins spectra -> rows x n real signals. The imaginary parts of the
/// DC and Nyquist bins are ignored (they have no real-signal counterpart).
fn irfft_rows(y: &[f64], rows: usize, n: usize, out: &mut [f64]) {
    let bins = rfft_bins(n);
    let tw = make_twiddles(n, true);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for r in 0..rows {
        let row = &y[r * bins * 2..(r + 1) * bins * 2];
        buf[0] = Complex64::new(row[0], 0.0);
        buf[n / 2] = Complex64::new(row[(n / 2) * 2], 0.0);
        for k in 1..n / 2 {
            let c = Complex64::new(row[k * 2], row[k * 2 + 1]);
            buf[k] = c;
            buf[n - k] = c.conj();
        }
        fft_in_place(&mut buf, &tw, true);
        for i in 0..n {
            out[r * n + i] = buf[i].re;
        }
    }
}

/// Adjoint of `rfft_rows`: spectra-shaped gradient -> signal-shaped gradient.
/// d/dx_j = Re( sum_{k<=n/2} g_k e^{+2 pi i k j / n} ).
fn rfft_adjoint_rows(g: &[f64], rows: usize, n: usize, out: &mut [f64]) {
    let bins = rfft_bins(n);
    let tw = make_twiddles(n, true);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for r in 0..rows {
        buf.fill(Complex64::new(0.0, 0.0));
        for k in 0..bins {
            buf[k] = Complex64::new(g[(r * bins + k) * 2], g[(r * bins + k) * 2 + 1]);
        }
        fft_in_place(&mut buf, &tw, true); // (1/n) sum g_k e^{+i...}
        for i in 0..n {
            out[r * n + i] = buf[i].re * n as f64;
        }
    }
}

/// Adjoint of `irfft_rows`: signal-shaped gradient -> spectra-shaped gradient.
fn irfft_adjoint_rows(g: &[f64], rows: usize, n: usize, out: &mut [f64]) {
    let bins = rfft_bins(n);
    let tw = make_twiddles(n, false);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let nf = n as f64;
    for r in 0..rows {
        for (i, v) in buf.iter_mut().enumerate() {
            *v = Complex64::new(g[r * n + i], 0.0);
        }
        fft_in_place(&mut buf, &tw, false);
        for k in 0..bins {
            let interior = k != 0 && k != n / 2;
            let c = if interior { 2.0 } else { 1.0 };
            out[(r * bins + k) * 2] = c / nf * buf[k].re;
            out[(r * bins + k) * 2 + 1] = if interior { 2.0 / nf * buf[k].im } else { 0.0 };
        }
    }
}

fn spectrum_shape(signal_shape: &[usize]) -> Vec<usize> {
    let n = *signal_shape.last().expect("signal needs an axis");
    let mut s = signal_shape.to_vec();
    *s.last_mut().unwrap() = rfft_bins(n);
    s.push(2);
    s
}

impl Tape {
    /// Real FFT along the last axis: `(..., n) -> (..., n/2+1, 2)`.
    pub fn rfft(&mut self, x: &Tensor) -> Tensor {
        let n = *x.shape().last().expect("rfft needs an axis");
        assert!(n >= 2, "rfft length must be at least 2");
        let rows = x.len() / n;
        let out_shape = spectrum_shape(x.shape());
        let mut data = vec![0.0; rows * rfft_bins(n) * 2];
        rfft_rows(x.data(), rows, n, &mut data);
        let out = Tensor::from_vec(&out_shape, data);
        let Some(idx) = self.index_of(x) else { return out };
        self.record(
            "rfft",
            vec![idx],
            out,
            Box::new(move |g| {
                let mut gx = vec![0.0; rows * n];
                rfft_adjoint_rows(g, rows, n, &mut gx);
                vec![(0, gx)]
            }),
        )
    }

    /// Inverse real FFT along the last axis: `(..., n/2+1, 2) -> (..., n)`.
    pub fn irfft(&mut self, y: &Tensor, n: usize) -> Tensor {
        let shape = y.shape();
        assert!(shape.len() >= 2, "spectrum needs (..., bins, 2) shape");
        assert_eq!(*shape.last().unwrap(), 2, "spectrum last axis must be 2");
        let bins = shape[shape.len() - 2];
        assert_eq!(
            bins,
            rfft_bins(n),
            "spectrum has {bins} bins which does not match signal length {n}"
        );
        let rows = y.len() / (bins * 2);
        let mut out_shape = shape[..shape.len() - 1].to_vec();
        *out_shape.last_mut().unwrap() = n;
        let mut data = vec![0.0; rows * n];
        irfft_rows(y.data(), rows, n, &mut data);
        let out = Tensor::from_vec(&out_shape, data);
        let Some(idx) = self.index_of(y) else { return out };
        self.record(
            "irfft",
            vec![idx],
            out,
            Box::new(move |g| {
                let mut gy = vec![0.0; rows * rfft_bins(n) * 2];
                irfft_adjoint_rows(g, rows, n, &mut gy);
                vec![(0, gy)]
            }),
        )
    }

    /// Discrete Hilbert transform along the last axis (FFT method). For a
    /// real input this returns the imaginary part of the analytic signal;
    /// the map is linear and antisymmetric, so its adjoint is its negative.
    pub fn hilbert(&mut self, x: &Tensor) -> Tensor {
        let n = *x.shape().last().expect("hilbert needs an axis");
        let rows = x.len() / n;
        let data = hilbert_rows(x.data(), rows, n);
        let out = Tensor::from_vec(x.shape(), data);
        let Some(idx) = self.index_of(x) else { return out };
        self.record(
            "hilbert",
            vec![idx],
            out,
            Box::new(move |g| {
                let mut gx = hilbert_rows(g, rows, n);
                for v in &mut gx {
                    *v = -*v;
                }
                vec![(0, gx)]
            }),
        )
    }

    /// Real parts of an interleaved complex tensor: `(..., B, 2) -> (..., B)`.
    pub fn complex_re(&mut self, y: &Tensor) -> Tensor {
        self.complex_part(y, 0, "complex_re")
    }

    /// Imaginary parts of an interleaved complex tensor.
    pub fn complex_im(&mut self, y: &Tensor) -> Tensor {
        self.complex_part(y, 1, "complex_im")
    }

    fn complex_part(&mut self, y: &Tensor, off: usize, label: &'static str) -> Tensor {
        let shape = y.shape();
        assert_eq!(*shape.last().unwrap(), 2, "{label} needs (..., 2) shape");
        let half = y.len() / 2;
        let data: Vec<f64> = (0..half).map(|i| y.data()[i * 2 + off]).collect();
        let out = Tensor::from_vec(&shape[..shape.len() - 1], data);
        let Some(idx) = self.index_of(y) else { return out };
        self.record(
            label,
            vec![idx],
            out,
            Box::new(move |g| {
                let mut gy = vec![0.0; g.len() * 2];
                for (i, &gv) in g.iter().enumerate() {
                    gy[i * 2 + off] = gv;
                }
                vec![(0, gy)]
            }),
        )
    }

    /// Interleave (re, im) pairs into a complex tensor: two `(..., B)`
    /// tensors of equal shape -> `(..., B, 2)`.
    pub fn complex_join(&mut self, re: &Tensor, im: &Tensor) -> Tensor {
        assert_eq!(re.shape(), im.shape(), "complex_join shape mismatch");
        let mut shape = re.shape().to_vec();
        shape.push(2);
        let mut data = vec![0.0; re.len() * 2];
        for i in 0..re.len() {
            data[i * 2] = re.data()[i];
            data[i * 2 + 1] = im.data()[i];
        }
        let out = Tensor::from_vec(&shape, data);
        let ri = self.index_of(re);
        let ii = self.index_of(im);
        if ri.is_none() && ii.is_none() {
            return out;
        }
        let mut parents = Vec::new();
        let (mut sr, mut si) = (None, None);
        if let Some(i) = ri {
            sr = Some(parents.len());
            parents.push(i);
        }
        if let Some(i) = ii {
            si = Some(parents.len());
            parents.push(i);
        }
        self.record(
            "complex_join",
            parents,
            out,
            Box::new(move |g| {
                let half = g.len() / 2;
                let mut contribs = Vec::new();
                if let Some(s) = sr {
                    contribs.push((s, (0..half).map(|i| g[i * 2]).collect()));
                }
                if let Some(s) = si {
                    contribs.push((s, (0..half).map(|i| g[i * 2 + 1]).collect()));
                }
                contribs
            }),
        )
    }
}

fn hilbert_rows(x: &[f64], rows: usize, n: usize) -> Vec<f64> {
    let fwd = make_twiddles(n, false);
    let inv = make_twiddles(n, true);
    let mut out = vec![0.0; rows * n];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for r in 0..rows {
        for (i, v) in buf.iter_mut().enumerate() {
            *v = Complex64::new(x[r * n + i], 0.0);
        }
        fft_in_place(&mut buf, &fwd, false);
        buf[0] = Complex64::new(0.0, 0.0);
        buf[n / 2] = Complex64::new(0.0, 0.0);
        let minus_i = Complex64::new(0.0, -1.0);
        let plus_i = Complex64::new(0.0, 1.0);
        for k in 1..n / 2 {
            buf[k] *= minus_i;
            buf[n - k] *= plus_i;
        }
        fft_in_place(&mut buf, &inv, true);
        for i in 0..n {
            out[r * n + i] = buf[i].re;
        }
    }
    out
}

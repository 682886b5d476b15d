//! Differentiable, magnitude-parametrized augmentations.
//!
//! Every transform maps an input batch to an equally-shaped batch and is
//! the exact identity at magnitude 0. Randomness is drawn once per
//! application into a [`NoiseDraw`] and frozen for that forward pass, so
//! magnitudes stay differentiable (reparametrization for continuous
//! transforms, straight-through for the flip).

mod affine;
mod pixel;
mod signal;

pub(crate) use affine::{bilinear_at, rotate_image};

use crate::rng::RngStream;
use crate::tensor::{rfft_bins, Tape, Tensor};
use affine::AffineKind;
use std::fmt;
use std::str::FromStr;

/// The transform vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TransformKind {
    TranslateX,
    TranslateY,
    Rotate,
    ShearX,
    ShearY,
    HFlip,
    SamplePairing,
    Brightness,
    Contrast,
    FrequencyShift,
    FtSurrogate,
    GaussianNoise,
}

/// Which input layout a transform applies to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    /// `(batch, channels, height, width)`
    Image,
    /// `(batch, channels, samples)`
    Signal,
}

/// How the magnitude gradient is estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    /// Noise enters as `mu * eps`; the gradient is the analytic derivative.
    Reparam,
    /// Discrete decision in the forward pass, relaxation in the backward.
    StraightThrough,
}

impl TransformKind {
    pub const ALL: [TransformKind; 12] = [
        TransformKind::TranslateX,
        TransformKind::TranslateY,
        TransformKind::Rotate,
        TransformKind::ShearX,
        TransformKind::ShearY,
        TransformKind::HFlip,
        TransformKind::SamplePairing,
        TransformKind::Brightness,
        TransformKind::Contrast,
        TransformKind::FrequencyShift,
        TransformKind::FtSurrogate,
        TransformKind::GaussianNoise,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TransformKind::TranslateX => "translate_x",
            TransformKind::TranslateY => "translate_y",
            TransformKind::Rotate => "rotate",
            TransformKind::ShearX => "shear_x",
            TransformKind::ShearY => "shear_y",
            TransformKind::HFlip => "hflip",
            TransformKind::SamplePairing => "sample_pairing",
            TransformKind::Brightness => "brightness",
            TransformKind::Contrast => "contrast",
            TransformKind::FrequencyShift => "frequency_shift",
            TransformKind::FtSurrogate => "ft_surrogate",
            TransformKind::GaussianNoise => "gaussian_noise",
        }
    }

    pub fn modality(&self) -> Modality {
        match self {
            TransformKind::FrequencyShift
            | TransformKind::FtSurrogate
            | TransformKind::GaussianNoise => Modality::Signal,
            _ => Modality::Image,
        }
    }

    /// Default physical range mapped by mu = 1 (translation in normalized
    /// half-extents, rotation in radians, frequency shift in Hz, ...).
    pub fn default_range(&self) -> f64 {
        match self {
            TransformKind::TranslateX | TransformKind::TranslateY => 1.0,
            TransformKind::Rotate => std::f64::consts::PI,
            TransformKind::ShearX | TransformKind::ShearY => 0.3,
            TransformKind::HFlip | TransformKind::SamplePairing => 1.0,
            TransformKind::Brightness => 0.5,
            TransformKind::Contrast => 0.9,
            TransformKind::FrequencyShift => 2.0,
            TransformKind::FtSurrogate => std::f64::consts::TAU,
            TransformKind::GaussianNoise => 1.0,
        }
    }

    pub fn default_estimator(&self) -> Estimator {
        match self {
            TransformKind::HFlip => Estimator::StraightThrough,
            _ => Estimator::Reparam,
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TransformKind::ALL
            .iter()
            .find(|k| k.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown transform kind '{s}'"))
    }
}

/// A transform plus its physical-range mapping and gradient estimator.
#[derive(Clone, Debug)]
pub struct TransformSpec {
    pub kind: TransformKind,
    /// Physical strength at mu = 1 (units depend on the kind).
    pub range: f64,
    pub estimator: Estimator,
    /// Sampling rate in Hz; only meaningful for frequency-domain transforms.
    pub sample_rate: f64,
}

impl TransformSpec {
    pub fn new(kind: TransformKind) -> TransformSpec {
        TransformSpec {
            kind,
            range: kind.default_range(),
            estimator: kind.default_estimator(),
            sample_rate: 100.0,
        }
    }

    pub fn with_range(mut self, range: f64) -> TransformSpec {
        self.range = range;
        self
    }

    pub fn with_sample_rate(mut self, sr: f64) -> TransformSpec {
        self.sample_rate = sr;
        self
    }

    /// Sample the per-application randomness. `mu` (the current magnitude
    /// value) only matters for the straight-through Bernoulli flip.
    pub fn sample_draw(&self, rng: &mut RngStream, shape: &[usize], mu: f64) -> NoiseDraw {
        match self.kind {
            TransformKind::TranslateX
            | TransformKind::TranslateY
            | TransformKind::Rotate
            | TransformKind::ShearX
            | TransformKind::ShearY
            | TransformKind::Brightness
            | TransformKind::Contrast
            | TransformKind::FrequencyShift => NoiseDraw {
                epsilon: rng.uniform_signed(),
                aux: AuxNoise::None,
            },
            TransformKind::HFlip => NoiseDraw {
                epsilon: 0.0,
                aux: AuxNoise::Bit(rng.bernoulli(mu.clamp(0.0, 1.0))),
            },
            TransformKind::SamplePairing => {
                let b = shape[0];
                let shift = if b >= 2 { 1 + rng.below(b - 1) } else { 0 };
                NoiseDraw {
                    epsilon: rng.uniform(),
                    aux: AuxNoise::Shift(shift),
                }
            }
            TransformKind::FtSurrogate => {
                let n = *shape.last().expect("signal needs a length axis");
                let bins = rfft_bins(n);
                let mut phases = vec![0.0; bins];
                for p in phases[1..bins.saturating_sub(1)].iter_mut() {
                    *p = rng.uniform();
                }
                NoiseDraw {
                    epsilon: 0.0,
                    aux: AuxNoise::Phases(phases),
                }
            }
            TransformKind::GaussianNoise => {
                let n: usize = shape.iter().product();
                NoiseDraw {
                    epsilon: 0.0,
                    aux: AuxNoise::Gauss(rng.normal_vec(n)),
                }
            }
        }
    }
}

/// Frozen per-application randomness.
#[derive(Clone, Debug)]
pub struct NoiseDraw {
    /// Primary scalar draw (U(-1,1) for signed transforms, U(0,1) for the
    /// pairing blend).
    pub epsilon: f64,
    /// Transform-specific extra noise.
    pub aux: AuxNoise,
}

#[derive(Clone, Debug)]
pub enum AuxNoise {
    None,
    /// Bernoulli bit for the flip.
    Bit(bool),
    /// Standard normal vector matching the input shape.
    Gauss(Vec<f64>),
    /// Per-bin uniform phases in [0,1], zero at DC and Nyquist.
    Phases(Vec<f64>),
    /// Batch-roll offset selecting each row's blend partner.
    Shift(usize),
}

fn expect_rank(x: &Tensor, rank: usize, kind: TransformKind) {
    assert_eq!(
        x.shape().len(),
        rank,
        "{kind} expects rank-{rank} input (got shape {:?})",
        x.shape()
    );
}

/// Apply one transform to a batch under a frozen draw.
///
/// `mu` must be a scalar tensor (typically gathered from a layer's magnitude
/// vector); gradients flow to both `x` and `mu`.
pub fn apply_transform(
    tape: &mut Tape,
    x: &Tensor,
    mu: &Tensor,
    spec: &TransformSpec,
    draw: &NoiseDraw,
) -> Tensor {
    match spec.kind {
        TransformKind::TranslateX => {
            expect_rank(x, 4, spec.kind);
            affine::affine_warp(tape, x, mu, AffineKind::TranslateX, spec.range, draw.epsilon)
        }
        TransformKind::TranslateY => {
            expect_rank(x, 4, spec.kind);
            affine::affine_warp(tape, x, mu, AffineKind::TranslateY, spec.range, draw.epsilon)
        }
        TransformKind::Rotate => {
            expect_rank(x, 4, spec.kind);
            affine::affine_warp(tape, x, mu, AffineKind::Rotate, spec.range, draw.epsilon)
        }
        TransformKind::ShearX => {
            expect_rank(x, 4, spec.kind);
            affine::affine_warp(tape, x, mu, AffineKind::ShearX, spec.range, draw.epsilon)
        }
        TransformKind::ShearY => {
            expect_rank(x, 4, spec.kind);
            affine::affine_warp(tape, x, mu, AffineKind::ShearY, spec.range, draw.epsilon)
        }
        TransformKind::HFlip => {
            expect_rank(x, 4, spec.kind);
            let AuxNoise::Bit(bit) = draw.aux else {
                panic!("hflip draw must carry a Bernoulli bit")
            };
            pixel::hflip(tape, x, mu, bit)
        }
        TransformKind::SamplePairing => {
            expect_rank(x, 4, spec.kind);
            let AuxNoise::Shift(k) = draw.aux else {
                panic!("sample_pairing draw must carry a partner shift")
            };
            pixel::sample_pairing(tape, x, mu, draw.epsilon, k)
        }
        TransformKind::Brightness => {
            expect_rank(x, 4, spec.kind);
            pixel::brightness(tape, x, mu, spec.range, draw.epsilon)
        }
        TransformKind::Contrast => {
            expect_rank(x, 4, spec.kind);
            pixel::contrast(tape, x, mu, spec.range, draw.epsilon)
        }
        TransformKind::FrequencyShift => {
            expect_rank(x, 3, spec.kind);
            signal::frequency_shift(tape, x, mu, draw.epsilon, spec.range, spec.sample_rate)
        }
        TransformKind::FtSurrogate => {
            expect_rank(x, 3, spec.kind);
            let AuxNoise::Phases(ref p) = draw.aux else {
                panic!("ft_surrogate draw must carry phases")
            };
            signal::ft_surrogate(tape, x, mu, p)
        }
        TransformKind::GaussianNoise => {
            expect_rank(x, 3, spec.kind);
            let AuxNoise::Gauss(ref z) = draw.aux else {
                panic!("gaussian_noise draw must carry a normal vector")
            };
            signal::gaussian_noise(tape, x, mu, z, spec.range)
        }
    }
}

/// Apply a transform outside any gradient context (fresh tape, constants).
pub fn apply_plain(x: &Tensor, mu: f64, spec: &TransformSpec, draw: &NoiseDraw) -> Tensor {
    let mut tape = Tape::new();
    apply_transform(&mut tape, x, &Tensor::scalar(mu), spec, draw)
}

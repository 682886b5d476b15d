//! Deterministic generators for the two synthetic datasets, the oracle
//! augmentation baseline, batching, and a binary export container.

use crate::augment::{rotate_image, TransformKind, TransformSpec};
use crate::error::AugError;
use crate::rng::RngStream;
use crate::tensor::Tensor;
use std::f64::consts::{PI, TAU};
use std::io::{Read, Write};
use std::path::Path;

/// Fixed signal length: 10 s at 100 Hz is 1000 samples, extended to the
/// next power of two so the radix-2 FFT applies directly. The sinusoids are
/// stationary, so the extra quarter second changes nothing structurally.
pub const SIGNAL_LEN: usize = 1024;
pub const IMAGE_SIDE: usize = 32;

/// Class center frequencies in Hz for the sinusoids task.
pub const SINUSOID_CLASSES: [f64; 4] = [2.0, 4.0, 6.0, 8.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataKind {
    Sinusoids,
    Sprites,
}

impl DataKind {
    pub fn name(&self) -> &'static str {
        match self {
            DataKind::Sinusoids => "sinusoids",
            DataKind::Sprites => "sprites",
        }
    }
}

/// One labelled example; `meta` keeps the generator's ground truth (true
/// frequency in Hz, or rotation angle in radians) for analysis.
#[derive(Clone, Debug)]
pub struct Example {
    pub x: Tensor,
    pub y: usize,
    pub meta: f64,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub kind: DataKind,
    pub examples: Vec<Example>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn example_shape(&self) -> &[usize] {
        self.examples[0].x.shape()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.y).collect()
    }
}

/// Full description of a generated dataset; identical specs regenerate
/// bit-identical data.
#[derive(Clone, Debug)]
pub struct DatasetSpec {
    pub kind: DataKind,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    /// Sampling rate in Hz (sinusoids).
    pub sample_rate: f64,
    /// Nominal duration in seconds (sinusoids; stored length is SIGNAL_LEN).
    pub duration: f64,
    /// Additive white-noise standard deviation (sinusoids).
    pub noise_std: f64,
}

impl DatasetSpec {
    pub fn sinusoids(seed: u64) -> DatasetSpec {
        DatasetSpec {
            kind: DataKind::Sinusoids,
            n_train: 400,
            n_test: 200,
            seed,
            sample_rate: 100.0,
            duration: 10.0,
            noise_std: 0.5,
        }
    }

    pub fn sprites(seed: u64) -> DatasetSpec {
        DatasetSpec {
            kind: DataKind::Sprites,
            n_train: 10_000,
            n_test: 5_000,
            seed,
            sample_rate: 0.0,
            duration: 0.0,
            noise_std: 0.0,
        }
    }

    pub fn generate(&self) -> (Dataset, Dataset) {
        match self.kind {
            DataKind::Sinusoids => gen_sinusoids(self),
            DataKind::Sprites => gen_sprites(self),
        }
    }
}

fn sinusoid_example(class: usize, spec: &DatasetSpec, rng: &mut RngStream) -> Example {
    let omega = SINUSOID_CLASSES[class];
    let f = rng.uniform_in(omega - 0.5, omega + 0.5);
    let phase = rng.uniform_in(0.0, TAU);
    let mut data = Vec::with_capacity(SIGNAL_LEN);
    for i in 0..SIGNAL_LEN {
        let t = i as f64 / spec.sample_rate;
        data.push((TAU * f * t + phase).sin() + spec.noise_std * rng.normal());
    }
    Example {
        x: Tensor::from_vec(&[1, SIGNAL_LEN], data),
        y: class,
        meta: f,
    }
}

/// Four-class sinusoid classification: class centers 2/4/6/8 Hz, per-example
/// frequency uniform in center +- 0.5 Hz, uniform phase, additive white
/// Gaussian noise. Classes are emitted round-robin so counts balance.
pub fn gen_sinusoids(spec: &DatasetSpec) -> (Dataset, Dataset) {
    assert_eq!(spec.kind, DataKind::Sinusoids);
    let root = RngStream::new(spec.seed);
    let make = |n: usize, tag: u64| {
        let mut rng = root.split(tag);
        let examples = (0..n)
            .map(|i| sinusoid_example(i % 4, spec, &mut rng))
            .collect();
        Dataset {
            kind: DataKind::Sinusoids,
            examples,
            num_classes: 4,
        }
    };
    (make(spec.n_train, 1), make(spec.n_test, 2))
}

// ── Sprite glyphs ────────────────────────────────────────────────────

fn paint_rect(img: &mut [f64], rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, rgb: [f64; 3]) {
    let s = IMAGE_SIDE;
    for (c, &v) in rgb.iter().enumerate() {
        for r in rows.clone() {
            for cc in cols.clone() {
                img[(c * s + r) * s + cc] = v;
            }
        }
    }
}

/// Up-pointing arrow with an off-center mark; asymmetric under rotation and
/// under mirroring (the mark fixes the chirality).
fn glyph_arrow() -> Vec<f64> {
    let s = IMAGE_SIDE;
    let mut img = vec![0.0; 3 * s * s];
    // triangular head, apex at the top
    let rgb = [0.9, 0.25, 0.1];
    for r in 4..12 {
        let hw = r - 3;
        let lo = 16 - hw.min(12);
        let hi = (16 + hw).min(s);
        paint_rect(&mut img, r..r + 1, lo..hi, rgb);
    }
    // shaft
    paint_rect(&mut img, 12..26, 14..18, rgb);
    // chirality mark, lower left
    paint_rect(&mut img, 20..24, 6..10, [1.0, 0.9, 0.2]);
    img
}

/// Tee shape with its mark on the other side and a different palette.
fn glyph_tee() -> Vec<f64> {
    let s = IMAGE_SIDE;
    let mut img = vec![0.0; 3 * s * s];
    let rgb = [0.15, 0.4, 0.95];
    paint_rect(&mut img, 5..9, 6..26, rgb);
    paint_rect(&mut img, 9..27, 14..18, rgb);
    paint_rect(&mut img, 20..24, 22..26, [0.3, 1.0, 0.6]);
    img
}

/// The two base glyphs (label pairs 0/1 and 2/3).
pub fn base_glyphs() -> [Vec<f64>; 2] {
    [glyph_arrow(), glyph_tee()]
}

fn sprite_example(class: usize, glyphs: &[Vec<f64>; 2], rng: &mut RngStream) -> Example {
    // classes: 0 = glyph A up, 1 = A down, 2 = B up, 3 = B down
    let glyph = &glyphs[class / 2];
    let angle = if class % 2 == 0 {
        rng.uniform_in(-PI / 4.0, PI / 4.0)
    } else {
        rng.uniform_in(3.0 * PI / 4.0, 5.0 * PI / 4.0)
    };
    let rotated = rotate_image(glyph, 3, IMAGE_SIDE, IMAGE_SIDE, angle);
    Example {
        x: Tensor::from_vec(&[3, IMAGE_SIDE, IMAGE_SIDE], rotated),
        y: class,
        meta: angle,
    }
}

/// Four-class oriented-glyph classification: two base glyphs, each rendered
/// upright (angle in [-pi/4, pi/4]) or upside down (angle in
/// [3 pi/4, 5 pi/4]) by exact bilinear resampling.
pub fn gen_sprites(spec: &DatasetSpec) -> (Dataset, Dataset) {
    assert_eq!(spec.kind, DataKind::Sprites);
    let glyphs = base_glyphs();
    let root = RngStream::new(spec.seed);
    let make = |n: usize, tag: u64| {
        let mut rng = root.split(tag);
        let examples = (0..n)
            .map(|i| sprite_example(i % 4, &glyphs, &mut rng))
            .collect();
        Dataset {
            kind: DataKind::Sprites,
            examples,
            num_classes: 4,
        }
    };
    (make(spec.n_train, 1), make(spec.n_test, 2))
}

// ── Oracle augmentation ──────────────────────────────────────────────

/// Classic (non-learnable) data augmentation with the generator's true
/// invariance: an independent frequency shift, uniform in
/// [-max_shift_hz, max_shift_hz], per example.
pub fn oracle_augment(
    batch: &Tensor,
    max_shift_hz: f64,
    sample_rate: f64,
    rng: &mut RngStream,
) -> Tensor {
    assert_eq!(batch.shape().len(), 3, "oracle expects (batch, ch, n)");
    let b = batch.shape()[0];
    let per = batch.len() / b;
    let spec = TransformSpec::new(TransformKind::FrequencyShift)
        .with_range(max_shift_hz)
        .with_sample_rate(sample_rate);
    let mut shape = batch.shape().to_vec();
    shape[0] = 1;
    let mut out = Vec::with_capacity(batch.len());
    for bi in 0..b {
        let x = Tensor::from_vec(&shape, batch.data()[bi * per..(bi + 1) * per].to_vec());
        let draw = spec.sample_draw(rng, &shape, 1.0);
        let y = crate::augment::apply_plain(&x, 1.0, &spec, &draw);
        out.extend_from_slice(y.data());
    }
    Tensor::from_vec(batch.shape(), out)
}

// ── Batching ─────────────────────────────────────────────────────────

/// Deterministic batch index order for one epoch. The final partial batch
/// is kept.
pub fn batch_indices(n: usize, batch_size: usize, shuffle: bool, rng: &mut RngStream) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        rng.shuffle(&mut order);
    }
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Stack selected examples into one batch tensor plus labels.
pub fn stack(dataset: &Dataset, idx: &[usize]) -> (Tensor, Vec<usize>) {
    assert!(!idx.is_empty());
    let per_shape = dataset.example_shape().to_vec();
    let per: usize = per_shape.iter().product();
    let mut data = Vec::with_capacity(idx.len() * per);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        data.extend_from_slice(dataset.examples[i].x.data());
        labels.push(dataset.examples[i].y);
    }
    let mut shape = vec![idx.len()];
    shape.extend_from_slice(&per_shape);
    (Tensor::from_vec(&shape, data), labels)
}

// ── Binary container ─────────────────────────────────────────────────
//
// Layout (little-endian):
//   magic   4 bytes  "AGDS"
//   version u32      1
//   kind    u8       0 sinusoids, 1 sprites
//   classes u32
//   count   u32
//   ndim    u32, dims u32 * ndim      per-example shape
//   then per example: label u32, meta f64, payload f64 * prod(dims)

const MAGIC: &[u8; 4] = b"AGDS";

pub fn export_dataset(ds: &Dataset, path: &Path) -> Result<(), AugError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&1u32.to_le_bytes())?;
    f.write_all(&[match ds.kind {
        DataKind::Sinusoids => 0u8,
        DataKind::Sprites => 1u8,
    }])?;
    f.write_all(&(ds.num_classes as u32).to_le_bytes())?;
    f.write_all(&(ds.len() as u32).to_le_bytes())?;
    let shape = ds.example_shape();
    f.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        f.write_all(&(d as u32).to_le_bytes())?;
    }
    for e in &ds.examples {
        f.write_all(&(e.y as u32).to_le_bytes())?;
        f.write_all(&e.meta.to_le_bytes())?;
        for v in e.x.data() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn import_dataset(path: &Path) -> Result<Dataset, AugError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(AugError::Checkpoint("bad dataset magic".into()));
    }
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |f: &mut dyn Read| -> Result<u32, AugError> {
        f.read_exact(&mut u32buf)?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let version = read_u32(&mut f)?;
    if version != 1 {
        return Err(AugError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut kind_b = [0u8; 1];
    f.read_exact(&mut kind_b)?;
    let kind = match kind_b[0] {
        0 => DataKind::Sinusoids,
        1 => DataKind::Sprites,
        k => return Err(AugError::Checkpoint(format!("unknown kind tag {k}"))),
    };
    let num_classes = read_u32(&mut f)? as usize;
    let count = read_u32(&mut f)? as usize;
    let ndim = read_u32(&mut f)? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(read_u32(&mut f)? as usize);
    }
    let per: usize = shape.iter().product();
    let mut examples = Vec::with_capacity(count);
    let mut f64buf = [0u8; 8];
    for _ in 0..count {
        let y = read_u32(&mut f)? as usize;
        f.read_exact(&mut f64buf)?;
        let meta = f64::from_le_bytes(f64buf);
        let mut data = Vec::with_capacity(per);
        for _ in 0..per {
            f.read_exact(&mut f64buf)?;
            data.push(f64::from_le_bytes(f64buf));
        }
        examples.push(Example {
            x: Tensor::from_vec(&shape, data),
            y,
            meta,
        });
    }
    Ok(Dataset {
        kind,
        examples,
        num_classes,
    })
}

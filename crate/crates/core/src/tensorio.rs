//! Latent grids, the `SEGL` file format and synthetic latent generators.
//!
//! A [`LatentGrid`] stands in for the hidden states of a diffusion
//! transformer reshaped to their 2D token layout. Synthetic grids are a
//! blend of seeded Gaussian noise and a deterministic structure field,
//! with the blend weight following a non-increasing schedule over steps.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fft;

/// File magic for serialized latents.
pub const MAGIC: [u8; 4] = *b"SEGL";
/// The only format version this crate reads or writes.
pub const VERSION: u8 = 0x01;
const HEADER_LEN: usize = 4 + 1 + 3 * 4;

/// Stream id reserved for the band-limited structure field. Noise for step
/// `t` uses stream `t`, so the two never overlap.
const STRUCTURE_STREAM: u64 = u64::MAX;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("grid must be at least 2x2x1, got {height}x{width}x{channels}")]
    InvalidShape {
        height: usize,
        width: usize,
        channels: usize,
    },
    #[error("expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("bad magic {found:?}, expected \"SEGL\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {found:#04x}")]
    VersionMismatch { found: u8 },
    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{extra} unexpected trailing bytes after payload")]
    TrailingData { extra: usize },
    #[error("step {step} out of range for a {steps}-step trajectory")]
    StepOutOfRange { step: usize, steps: usize },
    #[error("invalid trajectory config: {0}")]
    InvalidConfig(String),
    #[error("structure file {path}: {source}")]
    StructureFile {
        path: PathBuf,
        #[source]
        source: Box<TensorError>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// An `H x W x C` real field, row-major with `h` outer, `w` middle, `c` inner.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f32>,
}

impl LatentGrid {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        values: Vec<f32>,
    ) -> Result<Self, TensorError> {
        check_shape(height, width, channels)?;
        let expected = height * width * channels;
        if values.len() != expected {
            return Err(TensorError::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { index });
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    /// Grid filled with a single value.
    pub fn constant(
        height: usize,
        width: usize,
        channels: usize,
        value: f32,
    ) -> Result<Self, TensorError> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn tokens(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, h: usize, w: usize, c: usize) -> f32 {
        self.values[(h * self.width + w) * self.channels + c]
    }

    /// Channel vector of token `(h, w)`.
    pub fn token(&self, h: usize, w: usize) -> &[f32] {
        let start = (h * self.width + w) * self.channels;
        &self.values[start..start + self.channels]
    }
}

fn check_shape(height: usize, width: usize, channels: usize) -> Result<(), TensorError> {
    if height < 2 || width < 2 || channels < 1 {
        return Err(TensorError::InvalidShape {
            height,
            width,
            channels,
        });
    }
    Ok(())
}

/// Zero-mean `H x W` summary of a latent.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl CenteredMap {
    /// Centres an arbitrary `H x W` field. Used for maps that do not come
    /// from a latent, e.g. test inputs for the spectrum.
    pub fn from_field(height: usize, width: usize, mut values: Vec<f64>) -> Result<Self, TensorError> {
        check_shape(height, width, 1)?;
        if values.len() != height * width {
            return Err(TensorError::LengthMismatch {
                expected: height * width,
                actual: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { index });
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        values.iter_mut().for_each(|v| *v -= mean);
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, h: usize, w: usize) -> f64 {
        self.values[h * self.width + w]
    }
}

/// Channel mean per token, minus the spatial mean of that field.
pub fn center_map(grid: &LatentGrid) -> CenteredMap {
    let c = grid.channels as f64;
    let field: Vec<f64> = grid
        .values
        .chunks_exact(grid.channels)
        .map(|tok| tok.iter().map(|&v| f64::from(v)).sum::<f64>() / c)
        .collect();
    CenteredMap::from_field(grid.height, grid.width, field)
        .expect("valid grid yields a valid map")
}

/// Writes `grid` in the `SEGL` v1 format.
pub fn write_latent(grid: &LatentGrid, path: impl AsRef<Path>) -> Result<(), TensorError> {
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    out.write_all(&encode_latent(grid))?;
    out.flush()?;
    Ok(())
}

pub fn encode_latent(grid: &LatentGrid) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + grid.values.len() * 4);
    buf.extend_from_slice(&MAGIC);
    buf.push(VERSION);
    for dim in [grid.height, grid.width, grid.channels] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in &grid.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn read_latent(path: impl AsRef<Path>) -> Result<LatentGrid, TensorError> {
    decode_latent(&fs::read(path)?)
}

pub fn decode_latent(bytes: &[u8]) -> Result<LatentGrid, TensorError> {
    if bytes.len() < 4 {
        return Err(TensorError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(TensorError::BadMagic { found: magic });
    }
    if bytes.len() < HEADER_LEN {
        return Err(TensorError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if bytes[4] != VERSION {
        return Err(TensorError::VersionMismatch { found: bytes[4] });
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[5 + 4 * i..9 + 4 * i].try_into().unwrap()) as usize;
    let (height, width, channels) = (dim(0), dim(1), dim(2));
    let count = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(channels))
        .ok_or(TensorError::InvalidShape {
            height,
            width,
            channels,
        })?;
    let expected = HEADER_LEN + count * 4;
    let payload = &bytes[HEADER_LEN..];
    if bytes.len() < expected {
        return Err(TensorError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(TensorError::TrailingData {
            extra: bytes.len() - expected,
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    LatentGrid::new(height, width, channels, values)
}

/// One plane-wave component `A · cos(2π (k_h h / H + k_w w / W) + φ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wave {
    #[serde(default)]
    pub cycles_h: f64,
    #[serde(default)]
    pub cycles_w: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

fn one() -> f64 {
    1.0
}

/// Deterministic structure field blended in as noise fades.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Structure {
    /// Sum of plane waves, identical across channels.
    Sinusoid { waves: Vec<Wave> },
    /// Seeded white noise restricted to normalized radii `[low, high]`,
    /// with radius measured as in the radial spectrum (corner = 1).
    BandLimited { low: f64, high: f64 },
    /// `±1` blocks of `period x period` tokens.
    Checker { period: usize },
    /// A `SEGL` file whose shape must match the trajectory grid.
    File { path: PathBuf },
}

impl Default for Structure {
    fn default() -> Self {
        Structure::BandLimited {
            low: 0.0,
            high: 0.15,
        }
    }
}

/// Noise weight `α(t)` over the trajectory; all variants are non-increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseBlend {
    /// `α(t) = 1 − t / (T − 1)`.
    #[default]
    Linear,
    /// `α(t) = (1 − t / (T − 1))^exponent`.
    Power { exponent: f64 },
    Constant { alpha: f64 },
    /// One weight per step.
    Explicit { alphas: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub steps: usize,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub structure: Structure,
    pub noise_blend: NoiseBlend,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            steps: 8,
            seed: 0,
            height: 32,
            width: 32,
            channels: 4,
            structure: Structure::default(),
            noise_blend: NoiseBlend::default(),
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        check_shape(self.height, self.width, self.channels)?;
        if self.steps == 0 {
            return Err(TensorError::InvalidConfig("steps must be >= 1".into()));
        }
        match &self.noise_blend {
            NoiseBlend::Linear => {}
            NoiseBlend::Power { exponent } => {
                if !(exponent.is_finite() && *exponent > 0.0) {
                    return Err(TensorError::InvalidConfig(format!(
                        "blend exponent must be positive, got {exponent}"
                    )));
                }
            }
            NoiseBlend::Constant { alpha } => check_alpha(*alpha)?,
            NoiseBlend::Explicit { alphas } => {
                if alphas.len() != self.steps {
                    return Err(TensorError::InvalidConfig(format!(
                        "explicit blend has {} weights for {} steps",
                        alphas.len(),
                        self.steps
                    )));
                }
                for a in alphas {
                    check_alpha(*a)?;
                }
                if alphas.windows(2).any(|p| p[1] > p[0]) {
                    return Err(TensorError::InvalidConfig(
                        "explicit blend weights must be non-increasing".into(),
                    ));
                }
            }
        }
        match &self.structure {
            Structure::BandLimited { low, high } => {
                if !(0.0..=1.0).contains(low) || !(0.0..=1.0).contains(high) || low > high {
                    return Err(TensorError::InvalidConfig(format!(
                        "band edges must satisfy 0 <= low <= high <= 1, got [{low}, {high}]"
                    )));
                }
            }
            Structure::Checker { period } if *period == 0 => {
                return Err(TensorError::InvalidConfig("checker period must be >= 1".into()));
            }
            Structure::Sinusoid { waves } => {
                for w in waves {
                    if ![w.cycles_h, w.cycles_w, w.amplitude, w.phase]
                        .iter()
                        .all(|v| v.is_finite())
                    {
                        return Err(TensorError::InvalidConfig("non-finite wave parameter".into()));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Trajectory progress in `[0, 1]`; a single-step run sits at the end.
    pub fn progress(&self, step: usize) -> f64 {
        if self.steps <= 1 {
            1.0
        } else {
            step as f64 / (self.steps - 1) as f64
        }
    }

    /// Noise weight at `step`.
    pub fn alpha(&self, step: usize) -> f64 {
        let remaining = 1.0 - self.progress(step);
        match &self.noise_blend {
            NoiseBlend::Linear => remaining,
            NoiseBlend::Power { exponent } => remaining.powf(*exponent),
            NoiseBlend::Constant { alpha } => *alpha,
            NoiseBlend::Explicit { alphas } => alphas[step],
        }
    }
}

fn check_alpha(a: f64) -> Result<(), TensorError> {
    if (0.0..=1.0).contains(&a) {
        Ok(())
    } else {
        Err(TensorError::InvalidConfig(format!(
            "blend weight {a} outside [0, 1]"
        )))
    }
}

/// Caches the normalized structure field so that per-step latents only cost
/// the noise draw.
#[derive(Debug, Clone)]
pub struct LatentSource {
    cfg: TrajectoryConfig,
    structure: Vec<f64>,
}

impl LatentSource {
    pub fn new(cfg: &TrajectoryConfig) -> Result<Self, TensorError> {
        cfg.validate()?;
        let raw = structure_field(cfg)?;
        Ok(Self {
            cfg: cfg.clone(),
            structure: standardize(raw),
        })
    }

    pub fn config(&self) -> &TrajectoryConfig {
        &self.cfg
    }

    /// Zero-mean, unit-variance structure (or all zeros if it was constant).
    pub fn structure(&self) -> &[f64] {
        &self.structure
    }

    pub fn latent(&self, step: usize) -> Result<LatentGrid, TensorError> {
        let cfg = &self.cfg;
        if step >= cfg.steps {
            return Err(TensorError::StepOutOfRange {
                step,
                steps: cfg.steps,
            });
        }
        let alpha = cfg.alpha(step);
        let noise = gaussian_field(cfg.seed, step as u64, self.structure.len());
        let values = noise
            .iter()
            .zip(&self.structure)
            .map(|(n, s)| (alpha * n + (1.0 - alpha) * s) as f32)
            .collect();
        LatentGrid::new(cfg.height, cfg.width, cfg.channels, values)
    }
}

/// `α(step) · noise(seed, step) + (1 − α(step)) · structure`.
pub fn generate_latent(cfg: &TrajectoryConfig, step: usize) -> Result<LatentGrid, TensorError> {
    LatentSource::new(cfg)?.latent(step)
}

/// `len` i.i.d. standard normal draws from stream `stream` of `seed`.
pub fn gaussian_field(seed: u64, stream: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    StandardNormal.sample_iter(&mut rng).take(len).collect()
}

fn standardize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter_mut().for_each(|x| *x -= mean);
    let var = v.iter().map(|x| x * x).sum::<f64>() / n;
    if var <= 1e-24 {
        v.iter_mut().for_each(|x| *x = 0.0);
    } else {
        let inv = var.sqrt().recip();
        v.iter_mut().for_each(|x| *x *= inv);
    }
    v
}

/// Raw structure values laid out like the latent (`h`, `w`, `c`).
fn structure_field(cfg: &TrajectoryConfig) -> Result<Vec<f64>, TensorError> {
    let (hh, ww, cc) = (cfg.height, cfg.width, cfg.channels);
    let spatial: Vec<f64> = match &cfg.structure {
        Structure::Sinusoid { waves } => (0..hh * ww)
            .map(|i| {
                let (h, w) = ((i / ww) as f64, (i % ww) as f64);
                waves
                    .iter()
                    .map(|wave| {
                        let ph = wave.cycles_h * h / hh as f64 + wave.cycles_w * w / ww as f64;
                        wave.amplitude * (2.0 * std::f64::consts::PI * ph + wave.phase).cos()
                    })
                    .sum()
            })
            .collect(),
        Structure::Checker { period } => (0..hh * ww)
            .map(|i| {
                let (h, w) = (i / ww, i % ww);
                if (h / period + w / period) % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect(),
        Structure::BandLimited { low, high } => band_limited(cfg.seed, hh, ww, *low, *high),
        Structure::File { path } => {
            let grid = read_latent(path).map_err(|e| TensorError::StructureFile {
                path: path.clone(),
                source: Box::new(e),
            })?;
            if (grid.height, grid.width, grid.channels) != (hh, ww, cc) {
                return Err(TensorError::StructureFile {
                    path: path.clone(),
                    source: Box::new(TensorError::InvalidConfig(format!(
                        "shape {}x{}x{} does not match trajectory grid {hh}x{ww}x{cc}",
                        grid.height, grid.width, grid.channels
                    ))),
                });
            }
            return Ok(grid.values.iter().map(|&v| f64::from(v)).collect());
        }
    };
    Ok(spatial
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, cc))
        .collect())
}

fn band_limited(seed: u64, height: usize, width: usize, low: f64, high: f64) -> Vec<f64> {
    let white = gaussian_field(seed, STRUCTURE_STREAM, height * width);
    let mut spec = fft::forward_real(height, width, &white);
    for i in 0..height {
        for j in 0..width {
            let u = i.min(height - i) as f64 / height as f64;
            let v = j.min(width - j) as f64 / width as f64;
            let rho = (u * u + v * v).sqrt() / 0.5f64.sqrt();
            if rho < low || rho > high {
                spec[i * width + j] = Default::default();
            }
        }
    }
    fft::fft2_in_place(height, width, &mut spec, FftDirection::Inverse);
    spec.iter().map(|c| c.re).collect()
}

//! Spectral-energy guided attention (SEGA) for 2D rotary position embeddings.
//!
//! The pipeline takes a latent grid, reduces it to a zero-centred 2D map,
//! extracts axis-wise and radial energy profiles from its power spectrum and
//! turns them into per-dimension magnitudes for the height and width rotary
//! embeddings. Around that core sit the usual training-free extrapolation
//! schedules (PI, NTK, YaRN, DyPE), a dense attention implementation with
//! entropy metrics, and a synthetic denoising harness that drives all of it
//! without a pretrained model.
//!
//! ```
//! use sega_core::rope::{Axis, Method, ScheduleSpec};
//! use sega_core::spectral::{sega_modulate, SegaConfig};
//! use sega_core::tensorio::{generate_latent, TrajectoryConfig};
//!
//! let cfg = TrajectoryConfig::default();
//! let grid = generate_latent(&cfg, cfg.steps - 1).unwrap();
//! let spec = ScheduleSpec { method: Method::NtkStrong, ratio: 2.0, ..ScheduleSpec::default() };
//! let h = spec.build(Axis::H).unwrap();
//! let w = spec.build(Axis::W).unwrap();
//! let out = sega_modulate(&grid, &h, &w, 2.0, &SegaConfig::default()).unwrap();
//! assert_eq!(out.h.m.len(), h.theta.len());
//! ```

pub mod attention;
pub mod config;
pub mod format;
pub mod harness;
pub mod rope;
pub mod spectral;
pub mod tensorio;

mod fft;

pub use attention::{AttentionField, EntropyStats, TokenField};
pub use config::ExperimentConfig;
pub use harness::{MethodSpec, ScalingMode, TrajectoryRecord};
pub use rope::{Axis, Method, RopeSchedule, ScheduleSpec, YarnParams};
pub use spectral::{Modulation, ScalingVector, SegaConfig, SpectralProfiles};
pub use tensorio::{CenteredMap, LatentGrid, TrajectoryConfig};

use thiserror::Error;

/// Umbrella error for operations that cross module boundaries.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] tensorio::TensorError),
    #[error(transparent)]
    Rope(#[from] rope::RopeError),
    #[error(transparent)]
    Spectral(#[from] spectral::SpectralError),
    #[error(transparent)]
    Attention(#[from] attention::AttentionError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

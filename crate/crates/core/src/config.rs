//! JSON experiment configuration.
//!
//! Every field has a default and unknown keys are rejected, so the smallest
//! valid config is `{}`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::harness::{MethodSpec, ScalingMode};
use crate::rope::{self, Axis, DypeParams, Method, RopeSchedule, ScheduleSpec, YarnParams};
use crate::spectral::SegaConfig;
use crate::tensorio::TrajectoryConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RopeConfig {
    /// Rotary size per axis; a token vector is `2 · dim` long.
    pub dim: usize,
    pub base: f64,
    pub method: Method,
    pub ratio_h: f64,
    pub ratio_w: f64,
    pub yarn_alpha: f64,
    pub yarn_beta: f64,
    /// YaRN training length per axis; derived as `grid / ratio` when unset.
    pub train_len_h: Option<f64>,
    pub train_len_w: Option<f64>,
    pub dype_p: f64,
    pub dype_strong: bool,
}

impl Default for RopeConfig {
    fn default() -> Self {
        let yarn = YarnParams::default();
        Self {
            dim: 32,
            base: rope::DEFAULT_BASE,
            method: Method::NtkStrong,
            ratio_h: 2.0,
            ratio_w: 2.0,
            yarn_alpha: yarn.alpha,
            yarn_beta: yarn.beta,
            train_len_h: None,
            train_len_w: None,
            dype_p: 1.0,
            dype_strong: false,
        }
    }
}

impl RopeConfig {
    pub fn ratio(&self, axis: Axis) -> f64 {
        match axis {
            Axis::H => self.ratio_h,
            Axis::W => self.ratio_w,
        }
    }

    /// Single resolution ratio for the reference scale: the geometric mean
    /// of the two axis ratios.
    pub fn resolution_ratio(&self) -> f64 {
        (self.ratio_h * self.ratio_w).sqrt()
    }

    /// Token count along `axis` at training resolution for a target length.
    pub fn train_grid_len(&self, axis: Axis, target_len: usize) -> usize {
        (target_len as f64 / self.ratio(axis)).round() as usize
    }

    pub fn spec(&self, axis: Axis, method: Method, target_len: usize, timestep: f64) -> ScheduleSpec {
        let train_len = match axis {
            Axis::H => self.train_len_h,
            Axis::W => self.train_len_w,
        }
        .unwrap_or(target_len as f64 / self.ratio(axis));
        ScheduleSpec {
            dim: self.dim,
            base: self.base,
            method,
            ratio: self.ratio(axis),
            yarn: YarnParams {
                alpha: self.yarn_alpha,
                beta: self.yarn_beta,
                train_len,
            },
            dype: DypeParams {
                t: timestep,
                p: self.dype_p,
                strong: self.dype_strong,
            },
        }
    }

    /// Height and width schedules for `method` on an `height x width` grid.
    pub fn schedules(
        &self,
        method: Method,
        height: usize,
        width: usize,
        timestep: f64,
    ) -> Result<(RopeSchedule, RopeSchedule)> {
        Ok((
            self.spec(Axis::H, method, height, timestep).build(Axis::H)?,
            self.spec(Axis::W, method, width, timestep).build(Axis::W)?,
        ))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 4 || self.dim % 2 != 0 {
            return Err(Error::Config(format!(
                "rope.dim must be even and >= 4, got {}",
                self.dim
            )));
        }
        for (name, r) in [("ratio_h", self.ratio_h), ("ratio_w", self.ratio_w)] {
            if !(r >= 1.0 && r.is_finite()) {
                return Err(Error::Config(format!("rope.{name} must be >= 1, got {r}")));
            }
        }
        YarnParams {
            alpha: self.yarn_alpha,
            beta: self.yarn_beta,
            train_len: 1.0,
        }
        .validate()?;
        for l in [self.train_len_h, self.train_len_w].into_iter().flatten() {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("rope train length must be positive, got {l}")));
            }
        }
        if !(self.dype_p > 0.0 && self.dype_p.is_finite()) {
            return Err(Error::Config(format!("rope.dype_p must be positive, got {}", self.dype_p)));
        }
        rope::base_frequencies(self.dim, self.base)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionConfig {
    /// Base seed for the random token projections.
    pub seed: u64,
    /// Independent projection draws averaged per step, standing in for
    /// averaging over heads and layers.
    pub heads: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self { seed: 17, heads: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub rope: RopeConfig,
    pub sega: SegaConfig,
    pub trajectory: TrajectoryConfig,
    /// Methods compared by attention entropy at the target grid.
    pub methods: Vec<MethodSpec>,
    /// Reference evaluated at the training grid.
    pub baseline: MethodSpec,
    pub attention: AttentionConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            rope: RopeConfig::default(),
            sega: SegaConfig::default(),
            trajectory: TrajectoryConfig::default(),
            methods: default_methods(),
            baseline: MethodSpec::new("baseline", Method::None, ScalingMode::None),
            attention: AttentionConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

fn default_methods() -> Vec<MethodSpec> {
    vec![
        MethodSpec::new("ntk_fixed", Method::NtkStrong, ScalingMode::Fixed),
        MethodSpec::new("ntk_sega", Method::NtkStrong, ScalingMode::Sega),
        MethodSpec::new("yarn", Method::Yarn, ScalingMode::Temperature),
        MethodSpec::new("dype", Method::Dype, ScalingMode::None),
    ]
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.rope.validate()?;
        self.sega.validate()?;
        self.trajectory.validate()?;
        if self.attention.heads == 0 {
            return Err(Error::Config("attention.heads must be >= 1".into()));
        }
        let mut names: Vec<&str> = self.methods.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("method names must be unique".into()));
        }
        for m in self.methods.iter().chain(std::iter::once(&self.baseline)) {
            m.validate()?;
        }
        let t = &self.trajectory;
        let (th, tw) = (
            self.rope.train_grid_len(Axis::H, t.height),
            self.rope.train_grid_len(Axis::W, t.width),
        );
        if !self.methods.is_empty() && (th < 2 || tw < 2) {
            return Err(Error::Config(format!(
                "training grid {th}x{tw} is too small for the entropy baseline"
            )));
        }
        Ok(())
    }
}

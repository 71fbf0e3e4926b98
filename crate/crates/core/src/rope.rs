//! Rotary frequency schedules and their training-free extrapolation variants.
//!
//! Every schedule here is a vector of `D/2` angular frequencies `θ_d`; a
//! vector is embedded at position `n` by rotating its `d`-th coordinate pair
//! by `n·θ_d`. Extrapolation methods only change the frequencies, and the
//! SEGA magnitudes are applied as a per-pair scale after rotation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_BASE: f64 = 10_000.0;

#[derive(Debug, Error, PartialEq)]
pub enum RopeError {
    #[error("embedding size must be even and >= 2, got {0}")]
    InvalidDim(usize),
    #[error("NTK base change needs D > 2, got {0}")]
    NtkDimTooSmall(usize),
    #[error("rotary base must be positive, got {0}")]
    NonPositiveBase(f64),
    #[error("extrapolation ratio must be >= 1, got {0}")]
    RatioBelowOne(f64),
    #[error("DyPE timestep must lie in [0, 1], got {0}")]
    TimeOutOfRange(f64),
    #[error("DyPE exponent must be positive, got {0}")]
    NonPositiveExponent(f64),
    #[error("YaRN ramp needs 0 < alpha < beta and train_len > 0, got alpha={alpha} beta={beta} train_len={train_len}")]
    InvalidYarn {
        alpha: f64,
        beta: f64,
        train_len: f64,
    },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("scale for pair {index} must be positive, got {value}")]
    NonPositiveScale { index: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    H,
    W,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::H => "H",
            Axis::W => "W",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    None,
    Pi,
    Ntk,
    #[default]
    NtkStrong,
    Yarn,
    Dype,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::None,
        Method::Pi,
        Method::Ntk,
        Method::NtkStrong,
        Method::Yarn,
        Method::Dype,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Pi => "pi",
            Method::Ntk => "ntk",
            Method::NtkStrong => "ntk_strong",
            Method::Yarn => "yarn",
            Method::Dype => "dype",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

/// Ramp bounds in units of wavelength over training length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YarnParams {
    pub alpha: f64,
    pub beta: f64,
    pub train_len: f64,
}

impl YarnParams {
    pub fn validate(&self) -> Result<(), RopeError> {
        let ok = self.alpha > 0.0
            && self.alpha < self.beta
            && self.beta.is_finite()
            && self.train_len > 0.0
            && self.train_len.is_finite();
        if ok {
            Ok(())
        } else {
            Err(RopeError::InvalidYarn {
                alpha: self.alpha,
                beta: self.beta,
                train_len: self.train_len,
            })
        }
    }
}

impl Default for YarnParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 32.0,
            train_len: 32.0,
        }
    }
}

/// Timestep-dependent ratio `s(t) = 1 + (s − 1)(1 − t)^p`, `t = 1` at pure noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DypeParams {
    pub t: f64,
    pub p: f64,
    /// Use the strong NTK exponent for the per-step base change.
    pub strong: bool,
}

impl Default for DypeParams {
    fn default() -> Self {
        Self {
            t: 0.0,
            p: 1.0,
            strong: false,
        }
    }
}

/// Frequencies for one axis together with how they were derived.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RopeSchedule {
    pub dim: usize,
    pub base: f64,
    pub theta: Vec<f64>,
    pub axis: Axis,
    pub method: Method,
    pub ratio: f64,
}

impl RopeSchedule {
    pub fn pairs(&self) -> usize {
        self.theta.len()
    }

    /// Unmodified frequencies for this schedule's `dim` and `base`.
    pub fn base_theta(&self) -> Vec<f64> {
        base_frequencies(self.dim, self.base).expect("schedule was built from valid parameters")
    }
}

/// Everything needed to build a schedule for one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec {
    pub dim: usize,
    pub base: f64,
    pub method: Method,
    pub ratio: f64,
    pub yarn: YarnParams,
    pub dype: DypeParams,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            dim: 32,
            base: DEFAULT_BASE,
            method: Method::None,
            ratio: 1.0,
            yarn: YarnParams::default(),
            dype: DypeParams::default(),
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self, axis: Axis) -> Result<RopeSchedule, RopeError> {
        check_ratio(self.ratio)?;
        let theta = base_frequencies(self.dim, self.base)?;
        let theta = match self.method {
            Method::None => theta,
            Method::Pi => pi_frequencies(&theta, self.ratio)?,
            Method::Ntk | Method::NtkStrong => {
                let strong = self.method == Method::NtkStrong;
                base_frequencies(self.dim, ntk_base(self.base, self.ratio, self.dim, strong)?)?
            }
            Method::Yarn => yarn_frequencies(&theta, self.ratio, &self.yarn)?,
            Method::Dype => {
                let s_t = dype_ratio(self.ratio, self.dype.t, self.dype.p)?;
                base_frequencies(self.dim, ntk_base(self.base, s_t, self.dim, self.dype.strong)?)?
            }
        };
        Ok(RopeSchedule {
            dim: self.dim,
            base: self.base,
            theta,
            axis,
            method: self.method,
            ratio: self.ratio,
        })
    }
}

fn check_ratio(s: f64) -> Result<(), RopeError> {
    if s >= 1.0 && s.is_finite() {
        Ok(())
    } else {
        Err(RopeError::RatioBelowOne(s))
    }
}

/// `θ_d = b^(−2d/D)` for `d = 0..D/2`.
pub fn base_frequencies(dim: usize, base: f64) -> Result<Vec<f64>, RopeError> {
    if dim < 2 || dim % 2 != 0 {
        return Err(RopeError::InvalidDim(dim));
    }
    if !(base > 0.0 && base.is_finite()) {
        return Err(RopeError::NonPositiveBase(base));
    }
    Ok((0..dim / 2)
        .map(|d| base.powf(-2.0 * d as f64 / dim as f64))
        .collect())
}

/// Position interpolation: every frequency divided by `s`.
pub fn pi_frequencies(theta: &[f64], s: f64) -> Result<Vec<f64>, RopeError> {
    check_ratio(s)?;
    Ok(theta.iter().map(|t| t / s).collect())
}

/// NTK-aware base `b · s^(D/(D−2))`, or `b · s^(2D/(D−2))` when `strong`.
pub fn ntk_base(base: f64, s: f64, dim: usize, strong: bool) -> Result<f64, RopeError> {
    if dim <= 2 {
        return Err(RopeError::NtkDimTooSmall(dim));
    }
    check_ratio(s)?;
    let d = dim as f64;
    let exponent = if strong { 2.0 * d } else { d } / (d - 2.0);
    Ok(base * s.powf(exponent))
}

/// Piecewise-linear ramp: 0 below `alpha`, 1 above `beta`.
pub fn yarn_ramp(r: f64, params: &YarnParams) -> f64 {
    if r < params.alpha {
        0.0
    } else if r > params.beta {
        1.0
    } else {
        (r - params.alpha) / (params.beta - params.alpha)
    }
}

/// Per-pair ramp weights `λ_d = ramp(T_d / L_train)` with `T_d = 2π/θ_d`.
pub fn yarn_lambdas(theta: &[f64], params: &YarnParams) -> Result<Vec<f64>, RopeError> {
    params.validate()?;
    Ok(theta
        .iter()
        .map(|t| yarn_ramp(2.0 * PI / t / params.train_len, params))
        .collect())
}

/// `θ'_d = (1 − λ_d) θ_d / s + λ_d θ_d`.
pub fn yarn_frequencies(theta: &[f64], s: f64, params: &YarnParams) -> Result<Vec<f64>, RopeError> {
    check_ratio(s)?;
    let lambdas = yarn_lambdas(theta, params)?;
    Ok(theta
        .iter()
        .zip(lambdas)
        .map(|(t, l)| (1.0 - l) * t / s + l * t)
        .collect())
}

/// Logit temperature `τ(s) = 0.1 ln s + 1`.
pub fn yarn_temperature(s: f64) -> Result<f64, RopeError> {
    check_ratio(s)?;
    Ok(0.1 * s.ln() + 1.0)
}

pub fn dype_ratio(s: f64, t: f64, p: f64) -> Result<f64, RopeError> {
    check_ratio(s)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(RopeError::TimeOutOfRange(t));
    }
    if !(p > 0.0 && p.is_finite()) {
        return Err(RopeError::NonPositiveExponent(p));
    }
    Ok(1.0 + (s - 1.0) * (1.0 - t).powf(p))
}

/// Plain rotary embedding of `x` at position `n`.
pub fn rotate(x: &[f64], n: f64, theta: &[f64]) -> Result<Vec<f64>, RopeError> {
    check_len(x.len(), 2 * theta.len())?;
    let mut out = vec![0.0; x.len()];
    rotate_into(x, n, theta, None, &mut out);
    Ok(out)
}

/// Rotary embedding followed by a per-pair magnitude `m_d`.
pub fn apply_rotary(x: &[f64], n: f64, theta: &[f64], scale: &[f64]) -> Result<Vec<f64>, RopeError> {
    check_len(x.len(), 2 * theta.len())?;
    check_scale(scale, theta.len())?;
    let mut out = vec![0.0; x.len()];
    rotate_into(x, n, theta, Some(scale), &mut out);
    Ok(out)
}

/// Rotates the first `sched_h.dim` entries by row `h` and the rest by column `w`.
pub fn axial_rotary(
    x: &[f64],
    pos: (usize, usize),
    sched_h: &RopeSchedule,
    sched_w: &RopeSchedule,
    m_h: &[f64],
    m_w: &[f64],
) -> Result<Vec<f64>, RopeError> {
    check_len(x.len(), sched_h.dim + sched_w.dim)?;
    check_scale(m_h, sched_h.pairs())?;
    check_scale(m_w, sched_w.pairs())?;
    let mut out = vec![0.0; x.len()];
    axial_into(x, pos, sched_h, sched_w, Some((m_h, m_w)), &mut out);
    Ok(out)
}

/// Unchecked kernel shared by the public entry points and attention.
pub(crate) fn rotate_into(x: &[f64], n: f64, theta: &[f64], scale: Option<&[f64]>, out: &mut [f64]) {
    for (d, &th) in theta.iter().enumerate() {
        let (sin, cos) = (n * th).sin_cos();
        let (x0, x1) = (x[2 * d], x[2 * d + 1]);
        let (y0, y1) = (cos * x0 - sin * x1, sin * x0 + cos * x1);
        match scale {
            Some(m) => {
                out[2 * d] = m[d] * y0;
                out[2 * d + 1] = m[d] * y1;
            }
            None => {
                out[2 * d] = y0;
                out[2 * d + 1] = y1;
            }
        }
    }
}

pub(crate) fn axial_into(
    x: &[f64],
    (h, w): (usize, usize),
    sched_h: &RopeSchedule,
    sched_w: &RopeSchedule,
    scale: Option<(&[f64], &[f64])>,
    out: &mut [f64],
) {
    let split = sched_h.dim;
    let (xh, xw) = x.split_at(split);
    let (oh, ow) = out.split_at_mut(split);
    rotate_into(xh, h as f64, &sched_h.theta, scale.map(|s| s.0), oh);
    rotate_into(xw, w as f64, &sched_w.theta, scale.map(|s| s.1), ow);
}

fn check_len(actual: usize, expected: usize) -> Result<(), RopeError> {
    if actual == expected {
        Ok(())
    } else {
        Err(RopeError::DimensionMismatch { expected, actual })
    }
}

pub(crate) fn check_scale(scale: &[f64], pairs: usize) -> Result<(), RopeError> {
    check_len(scale.len(), pairs)?;
    match scale.iter().position(|&m| !(m > 0.0 && m.is_finite())) {
        Some(index) => Err(RopeError::NonPositiveScale {
            index,
            value: scale[index],
        }),
        None => Ok(()),
    }
}

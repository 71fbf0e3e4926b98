//! Spectral analysis of a latent and the per-dimension rotary magnitudes it
//! induces.
//!
//! The chain is `center_map → power_spectrum_2d → {axis_profiles,
//! radial_profile}`. Axis profiles give each rotary pair a log-energy, which
//! is standardized across pairs and squashed into a zero-sum correction
//! `s_d`. The radial profile's flatness sets a global amplitude `σ`. The
//! final magnitude is `m_d = m_ref · max(1 − σ·s_d, MIN_MODULATOR)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fft;
use crate::rope::{Axis, RopeSchedule};
use crate::tensorio::{center_map, CenteredMap, LatentGrid};

/// Lower bound applied to `1 − σ·s_d` so every magnitude stays positive.
pub const MIN_MODULATOR: f64 = 0.05;
/// Below this spread of log-energies the standardization is skipped.
const DEGENERATE_SPREAD: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("spectral flatness needs at least one occupied bin")]
    NoOccupiedBins,
    #[error("spectral flatness {0} outside (0, 1]")]
    FlatnessOutOfRange(f64),
    #[error("resolution ratio must be >= 1, got {0}")]
    RatioBelowOne(f64),
    #[error("radial profile needs at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("energy profile must be non-empty")]
    EmptyProfile,
    #[error("invalid SEGA config: {0}")]
    InvalidConfig(String),
    #[error("schedule for axis {expected:?} given where {found:?} was expected")]
    AxisMismatch { expected: Axis, found: Axis },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RefForm {
    /// `m_ref = s^κ`.
    #[default]
    Power,
    /// `m_ref = 1 + κ ln s`.
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegaConfig {
    pub kappa: f64,
    pub gamma: f64,
    pub ref_form: RefForm,
    pub eps: f64,
    /// Radial bin count; `None` means `min(H, W) / 2`.
    pub n_bins_iso: Option<usize>,
}

impl Default for SegaConfig {
    fn default() -> Self {
        Self {
            kappa: 0.08,
            gamma: 1.5,
            ref_form: RefForm::Power,
            eps: 1e-12,
            n_bins_iso: None,
        }
    }
}

impl SegaConfig {
    pub fn validate(&self) -> Result<(), SpectralError> {
        let bad = |m: String| Err(SpectralError::InvalidConfig(m));
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return bad(format!("kappa must be positive, got {}", self.kappa));
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be >= 1, got {}", self.gamma));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if let Some(n) = self.n_bins_iso {
            if n < 2 {
                return Err(SpectralError::TooFewBins(n));
            }
        }
        Ok(())
    }

    pub fn bins_for(&self, height: usize, width: usize) -> usize {
        self.n_bins_iso.unwrap_or_else(|| (height.min(width) / 2).max(2))
    }
}

/// `|DFT2|²` of a centred map, row-major `H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl PowerSpectrum {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralProfiles {
    pub axis_h: Vec<f64>,
    pub axis_w: Vec<f64>,
    pub radial: Vec<f64>,
    pub occupied: Vec<bool>,
}

impl SpectralProfiles {
    pub fn from_spectrum(spectrum: &PowerSpectrum, n_bins: usize) -> Result<Self, SpectralError> {
        let (axis_h, axis_w) = axis_profiles(spectrum);
        let (radial, occupied) = radial_profile(spectrum, n_bins)?;
        Ok(Self {
            axis_h,
            axis_w,
            radial,
            occupied,
        })
    }

    pub fn axis(&self, axis: Axis) -> &[f64] {
        match axis {
            Axis::H => &self.axis_h,
            Axis::W => &self.axis_w,
        }
    }
}

/// Per-axis magnitudes for one latent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingVector {
    pub axis: Axis,
    pub m: Vec<f64>,
    pub sigma: f64,
    pub m_ref: f64,
    pub s_corr: Vec<f64>,
    /// True if any pair hit [`MIN_MODULATOR`].
    pub clamped: bool,
}

impl ScalingVector {
    pub fn mean_m(&self) -> f64 {
        self.m.iter().sum::<f64>() / self.m.len() as f64
    }

    /// `Σ s_d`, zero up to rounding.
    pub fn correction_sum(&self) -> f64 {
        self.s_corr.iter().sum()
    }
}

/// Full output of [`sega_modulate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Modulation {
    pub h: ScalingVector,
    pub w: ScalingVector,
    pub flatness: f64,
    pub profiles: SpectralProfiles,
}

impl Modulation {
    pub fn axis(&self, axis: Axis) -> &ScalingVector {
        match axis {
            Axis::H => &self.h,
            Axis::W => &self.w,
        }
    }
}

pub fn power_spectrum_2d(map: &CenteredMap) -> PowerSpectrum {
    let (height, width) = (map.height(), map.width());
    let values = fft::forward_real(height, width, map.values())
        .into_iter()
        .map(|c| c.norm_sqr())
        .collect();
    PowerSpectrum {
        height,
        width,
        values,
    }
}

/// Folded marginals over the orthogonal axis, `⌊L/2⌋` bins each.
///
/// Bin 0 is the zero-frequency row/column; bin `i > 0` adds the conjugate
/// partner `L − i`.
pub fn axis_profiles(spectrum: &PowerSpectrum) -> (Vec<f64>, Vec<f64>) {
    let (hh, ww) = (spectrum.height, spectrum.width);
    let row_sum = |i: usize| (0..ww).map(|j| spectrum.get(i, j)).sum::<f64>();
    let col_sum = |j: usize| (0..hh).map(|i| spectrum.get(i, j)).sum::<f64>();
    let fold = |len: usize, sum: &dyn Fn(usize) -> f64| -> Vec<f64> {
        (0..len / 2)
            .map(|i| if i == 0 { sum(0) } else { sum(i) + sum(len - i) })
            .collect()
    };
    (fold(hh, &row_sum), fold(ww, &col_sum))
}

/// Normalized radius of frequency sample `(i, j)`; 1 at the Nyquist corner.
pub fn normalized_radius(i: usize, j: usize, height: usize, width: usize) -> f64 {
    let u = i.min(height - i) as f64 / height as f64;
    let v = j.min(width - j) as f64 / width as f64;
    (u * u + v * v).sqrt() / 0.5f64.sqrt()
}

/// Ring means of the spectrum, excluding DC, plus which rings had samples.
pub fn radial_profile(
    spectrum: &PowerSpectrum,
    n_bins: usize,
) -> Result<(Vec<f64>, Vec<bool>), SpectralError> {
    if n_bins < 2 {
        return Err(SpectralError::TooFewBins(n_bins));
    }
    let (hh, ww) = (spectrum.height, spectrum.width);
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for i in 0..hh {
        for j in 0..ww {
            if i == 0 && j == 0 {
                continue;
            }
            let rho = normalized_radius(i, j, hh, ww);
            let bin = ((rho * n_bins as f64) as usize).min(n_bins - 1);
            sums[bin] += spectrum.get(i, j);
            counts[bin] += 1;
        }
    }
    let radial = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    Ok((radial, counts.iter().map(|&c| c > 0).collect()))
}

/// Profile bin whose frequency is nearest `θ/(2π)` cycles per token.
pub fn band_lookup(theta: f64, axis_len: usize) -> usize {
    let last = (axis_len / 2).saturating_sub(1);
    let bin = (theta / (2.0 * PI) * axis_len as f64).round();
    if bin.is_nan() || bin <= 0.0 {
        0
    } else {
        (bin as usize).min(last)
    }
}

/// Zero-sum correction `s_d = tanh(z_d) − mean(tanh z)` for each pair of
/// `sched`, where `z` standardizes the log-energy of the pair's band.
pub fn per_dim_correction(
    profile: &[f64],
    sched: &RopeSchedule,
    axis_len: usize,
    eps: f64,
) -> Result<Vec<f64>, SpectralError> {
    if profile.is_empty() {
        return Err(SpectralError::EmptyProfile);
    }
    let log_energy: Vec<f64> = sched
        .theta
        .iter()
        .map(|&t| {
            let bin = band_lookup(t, axis_len).min(profile.len() - 1);
            (profile[bin] + eps).ln()
        })
        .collect();
    Ok(zero_sum_tanh(&log_energy))
}

fn zero_sum_tanh(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let squashed: Vec<f64> = if std < DEGENERATE_SPREAD {
        vec![0.0; x.len()]
    } else {
        x.iter().map(|v| ((v - mean) / std).tanh()).collect()
    };
    let centre = squashed.iter().sum::<f64>() / n;
    squashed.iter().map(|v| v - centre).collect()
}

/// Geometric over arithmetic mean of the occupied bins, each floored at `eps`.
pub fn spectral_flatness(radial: &[f64], occupied: &[bool], eps: f64) -> Result<f64, SpectralError> {
    let vals: Vec<f64> = radial
        .iter()
        .zip(occupied)
        .filter(|(_, &o)| o)
        .map(|(&v, _)| v.max(eps))
        .collect();
    if vals.is_empty() {
        return Err(SpectralError::NoOccupiedBins);
    }
    let first = vals[0];
    if vals.iter().all(|&v| v == first) {
        return Ok(1.0);
    }
    let n = vals.len() as f64;
    let log_mean = vals.iter().map(|v| v.ln()).sum::<f64>() / n;
    let mean = vals.iter().sum::<f64>() / n;
    Ok((log_mean.exp() / mean).min(1.0))
}

/// `σ = 1 − SF^γ`.
pub fn amplitude_factor(flatness: f64, gamma: f64) -> Result<f64, SpectralError> {
    if !(flatness > 0.0 && flatness <= 1.0) {
        return Err(SpectralError::FlatnessOutOfRange(flatness));
    }
    Ok(1.0 - flatness.powf(gamma))
}

pub fn reference_scale(ratio: f64, cfg: &SegaConfig) -> Result<f64, SpectralError> {
    if !(ratio >= 1.0 && ratio.is_finite()) {
        return Err(SpectralError::RatioBelowOne(ratio));
    }
    Ok(match cfg.ref_form {
        RefForm::Power => ratio.powf(cfg.kappa),
        RefForm::Log => 1.0 + cfg.kappa * ratio.ln(),
    })
}

fn scaling_vector(axis: Axis, s_corr: Vec<f64>, sigma: f64, m_ref: f64) -> ScalingVector {
    let mut clamped = false;
    let m = s_corr
        .iter()
        .map(|s| {
            let raw = 1.0 - sigma * s;
            if raw < MIN_MODULATOR {
                clamped = true;
            }
            m_ref * raw.max(MIN_MODULATOR)
        })
        .collect();
    if clamped {
        log::warn!("SEGA modulator clamped at {MIN_MODULATOR} on axis {}", axis.as_str());
    }
    ScalingVector {
        axis,
        m,
        sigma,
        m_ref,
        s_corr,
        clamped,
    }
}

/// Runs the whole analysis for one latent and returns per-axis magnitudes.
pub fn sega_modulate(
    grid: &LatentGrid,
    sched_h: &RopeSchedule,
    sched_w: &RopeSchedule,
    ratio: f64,
    cfg: &SegaConfig,
) -> Result<Modulation, SpectralError> {
    cfg.validate()?;
    for (sched, expected) in [(sched_h, Axis::H), (sched_w, Axis::W)] {
        if sched.axis != expected {
            return Err(SpectralError::AxisMismatch {
                expected,
                found: sched.axis,
            });
        }
    }
    let m_ref = reference_scale(ratio, cfg)?;
    let map = center_map(grid);
    let spectrum = power_spectrum_2d(&map);
    let profiles = SpectralProfiles::from_spectrum(&spectrum, cfg.bins_for(grid.height(), grid.width()))?;
    let flatness = spectral_flatness(&profiles.radial, &profiles.occupied, cfg.eps)?;
    let sigma = amplitude_factor(flatness, cfg.gamma)?;
    let s_h = per_dim_correction(&profiles.axis_h, sched_h, grid.height(), cfg.eps)?;
    let s_w = per_dim_correction(&profiles.axis_w, sched_w, grid.width(), cfg.eps)?;
    Ok(Modulation {
        h: scaling_vector(Axis::H, s_h, sigma, m_ref),
        w: scaling_vector(Axis::W, s_w, sigma, m_ref),
        flatness,
        profiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rope::{Method, ScheduleSpec};
    use crate::tensorio::gaussian_field;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use sega_oracles::{formulas, naive_power_spectrum};

    fn map(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> CenteredMap {
        CenteredMap::from_field(h, w, (0..h * w).map(|i| f(i / w, i % w)).collect()).unwrap()
    }

    fn cosine_w(h: usize, w: usize, k: f64) -> CenteredMap {
        map(h, w, |_, x| (2.0 * PI * k * x as f64 / w as f64).cos())
    }

    fn schedule_with(axis: Axis, theta: Vec<f64>) -> RopeSchedule {
        RopeSchedule {
            dim: 2 * theta.len(),
            base: 1e4,
            theta,
            axis,
            method: Method::None,
            ratio: 1.0,
        }
    }

    #[test]
    fn zero_map_has_zero_spectrum_and_profiles() {
        let s = power_spectrum_2d(&map(6, 4, |_, _| 0.0));
        assert!(s.values.iter().all(|&v| v == 0.0));
        let (eh, ew) = axis_profiles(&s);
        assert_eq!((eh.len(), ew.len()), (3, 2));
        assert!(eh.iter().chain(&ew).all(|&v| v == 0.0));
    }

    #[test]
    fn cosine_energy_sits_at_plus_minus_k() {
        let s = power_spectrum_2d(&cosine_w(8, 16, 3.0));
        let oracle = naive_power_spectrum(8, 16, cosine_w(8, 16, 3.0).values()).unwrap();
        let total = s.total();
        for i in 0..8 {
            for j in 0..16 {
                let v = s.get(i, j);
                assert!((v - oracle[i * 16 + j]).abs() <= 1e-9 * total);
                if !(i == 0 && (j == 3 || j == 13)) {
                    assert!(v < 1e-18 * total, "leak at ({i},{j}): {v}");
                }
            }
        }
    }

    #[test]
    fn cosine_axis_profiles() {
        let s = power_spectrum_2d(&cosine_w(8, 16, 3.0));
        let (eh, ew) = axis_profiles(&s);
        let total = s.total();
        assert_relative_eq!(ew[3], total, max_relative = 1e-12);
        assert_relative_eq!(eh[0], total, max_relative = 1e-12);
        assert!(eh[1..].iter().all(|&v| v < 1e-18 * total));
        for (j, v) in ew.iter().enumerate() {
            if j != 3 {
                assert!(*v < 1e-18 * total);
            }
        }
    }

    #[test]
    fn constant_spectrum_gives_constant_rings() {
        let s = PowerSpectrum {
            height: 8,
            width: 8,
            values: vec![2.5; 64],
        };
        let (e, occ) = radial_profile(&s, 4).unwrap();
        for (v, o) in e.iter().zip(&occ) {
            if *o {
                assert_eq!(*v, 2.5);
            }
        }
        assert!(radial_profile(&s, 1).is_err());
    }

    #[test]
    fn single_cosine_occupies_one_ring_with_energy() {
        let s = power_spectrum_2d(&cosine_w(16, 16, 2.0));
        let (e, _) = radial_profile(&s, 8).unwrap();
        let total: f64 = e.iter().sum();
        let hot: Vec<usize> = (0..8).filter(|&b| e[b] > 1e-12 * total).collect();
        // ρ = (2/16)/√0.5 ≈ 0.177 → bin ⌊1.41⌋ = 1.
        assert_eq!(hot, vec![1]);
    }

    #[test]
    fn nyquist_corner_lands_in_last_bin() {
        assert_eq!(normalized_radius(8, 8, 16, 16), 1.0);
        let mut values = vec![0.0; 256];
        values[8 * 16 + 8] = 1.0;
        let s = PowerSpectrum {
            height: 16,
            width: 16,
            values,
        };
        let (e, _) = radial_profile(&s, 8).unwrap();
        assert!(e[7] > 0.0);
    }

    #[test]
    fn band_lookup_cases() {
        assert_eq!(band_lookup(2.0 * PI / 32.0, 32), 1);
        assert_eq!(band_lookup(1e-9, 32), 0);
        assert_eq!(band_lookup(0.0, 32), 0);
        assert_eq!(band_lookup(PI, 32), 15);
        assert_eq!(band_lookup(PI, 5), 1);
        assert_eq!(band_lookup(1.0, 64), 10);
    }

    #[test]
    fn equal_bands_give_zero_correction() {
        let sched = schedule_with(Axis::W, vec![1.0, 0.5, 0.1, 0.01]);
        let s = per_dim_correction(&[3.0; 16], &sched, 32, 1e-12).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
        assert_eq!(per_dim_correction(&[], &sched, 32, 1e-12), Err(SpectralError::EmptyProfile));
    }

    #[test]
    fn two_point_standardization() {
        // θ = 2π·3/32 → bin 3; θ = 2π/32 → bin 1. Energies e and 10e.
        let sched = schedule_with(Axis::W, vec![2.0 * PI * 3.0 / 32.0, 2.0 * PI / 32.0]);
        let mut profile = vec![0.0; 16];
        profile[3] = 2.0;
        profile[1] = 20.0;
        let s = per_dim_correction(&profile, &sched, 32, 1e-12).unwrap();
        let t1 = 1f64.tanh();
        assert_relative_eq!(s[0], -t1, max_relative = 1e-10);
        assert_relative_eq!(s[1], t1, max_relative = 1e-10);
    }

    #[test]
    fn flatness_cases() {
        assert_eq!(spectral_flatness(&[3.0, 3.0, 0.0], &[true, true, false], 1e-12).unwrap(), 1.0);
        assert_relative_eq!(spectral_flatness(&[4.0, 1.0], &[true, true], 1e-12).unwrap(), 0.8, max_relative = 1e-14);
        let mut v = vec![1e-12; 16];
        v[0] = 1.0;
        let sf = spectral_flatness(&v, &[true; 16], 1e-12).unwrap();
        assert!(sf < 1e-9);
        assert_relative_eq!(sf, formulas::flatness(&v), max_relative = 1e-9);
        assert_eq!(spectral_flatness(&[1.0], &[false], 1e-12), Err(SpectralError::NoOccupiedBins));
    }

    #[test]
    fn amplitude_cases() {
        assert_eq!(amplitude_factor(1.0, 1.5).unwrap(), 0.0);
        assert!(amplitude_factor(1e-12, 1.5).unwrap() > 0.999_999);
        assert_relative_eq!(amplitude_factor(0.8, 1.5).unwrap(), 0.2844582472000672, max_relative = 1e-13);
        assert!(amplitude_factor(0.0, 1.5).is_err());
        assert!(amplitude_factor(1.2, 1.5).is_err());
    }

    #[test]
    fn reference_scale_matches_formulas() {
        let power = SegaConfig::default();
        let log = SegaConfig {
            ref_form: RefForm::Log,
            ..power
        };
        for s in [1.0, 2.0, 4.0, 8.0, 16.0, 32.0] {
            assert_relative_eq!(reference_scale(s, &power).unwrap(), formulas::m_ref_power(s, 0.08), max_relative = 1e-14);
            assert_relative_eq!(reference_scale(s, &log).unwrap(), formulas::m_ref_log(s, 0.08), max_relative = 1e-14);
        }
        assert_eq!(reference_scale(1.0, &power).unwrap(), 1.0);
        assert!((reference_scale(2.0, &power).unwrap() - 1.057).abs() < 5e-4);
        assert!((reference_scale(32.0, &log).unwrap() - 1.277).abs() < 5e-4);
        assert!(reference_scale(0.5, &power).is_err());
    }

    fn noise_grid(h: usize, w: usize, c: usize, seed: u64) -> LatentGrid {
        let v = gaussian_field(seed, 0, h * w * c).iter().map(|&x| x as f32).collect();
        LatentGrid::new(h, w, c, v).unwrap()
    }

    fn ntk(axis: Axis, ratio: f64) -> RopeSchedule {
        ScheduleSpec {
            method: Method::NtkStrong,
            ratio,
            ..ScheduleSpec::default()
        }
        .build(axis)
        .unwrap()
    }

    #[test]
    fn white_noise_stays_near_reference() {
        let cfg = SegaConfig::default();
        let (h, w) = (ntk(Axis::H, 2.0), ntk(Axis::W, 2.0));
        let mut dev = 0.0;
        let seeds = 32;
        for seed in 0..seeds {
            let out = sega_modulate(&noise_grid(64, 64, 4, seed), &h, &w, 2.0, &cfg).unwrap();
            for sv in [&out.h, &out.w] {
                dev += sv.m.iter().map(|m| (m - sv.m_ref).abs() / sv.m_ref).sum::<f64>() / sv.m.len() as f64;
            }
        }
        assert!(dev / (2 * seeds) as f64 <= 0.1);
    }

    #[test]
    fn sinusoid_band_gets_weaker_scaling() {
        let cfg = SegaConfig::default();
        let (h, w) = (ntk(Axis::H, 2.0), ntk(Axis::W, 2.0));
        // Pair 0 has θ = 1 → bin round(64/2π) = 10 on a 64-wide grid.
        let k = band_lookup(w.theta[0], 64);
        let vals: Vec<f32> = (0..64 * 64)
            .map(|i| (2.0 * PI * k as f64 * (i % 64) as f64 / 64.0).cos() as f32)
            .collect();
        let grid = LatentGrid::new(64, 64, 1, vals).unwrap();
        let out = sega_modulate(&grid, &h, &w, 2.0, &cfg).unwrap();
        for (d, &t) in w.theta.iter().enumerate() {
            if band_lookup(t, 64) == k {
                assert!(out.w.s_corr[d] > 0.0);
                assert!(out.w.m[d] < out.w.m_ref);
            }
        }
    }

    #[test]
    fn axis_mismatch_is_rejected() {
        let h = ntk(Axis::H, 1.0);
        let grid = noise_grid(8, 8, 1, 0);
        assert!(matches!(
            sega_modulate(&grid, &h, &h, 1.0, &SegaConfig::default()),
            Err(SpectralError::AxisMismatch { .. })
        ));
    }

    #[test]
    fn zero_latent_is_quiet() {
        let grid = LatentGrid::constant(16, 16, 2, 0.0).unwrap();
        let out = sega_modulate(&grid, &ntk(Axis::H, 4.0), &ntk(Axis::W, 4.0), 4.0, &SegaConfig::default()).unwrap();
        assert_eq!(out.flatness, 1.0);
        assert_eq!(out.h.sigma, 0.0);
        assert!(out.h.m.iter().chain(&out.w.m).all(|&m| m == out.h.m_ref));
    }

    #[test]
    fn config_validation() {
        assert!(SegaConfig { gamma: 0.5, ..SegaConfig::default() }.validate().is_err());
        assert!(SegaConfig { kappa: 0.0, ..SegaConfig::default() }.validate().is_err());
        assert!(SegaConfig { n_bins_iso: Some(1), ..SegaConfig::default() }.validate().is_err());
        assert_eq!(SegaConfig::default().bins_for(64, 32), 16);
    }

    proptest! {
        #[test]
        fn matches_naive_dft(h in 2usize..12, w in 2usize..12, seed in any::<u64>()) {
            let m = CenteredMap::from_field(h, w, gaussian_field(seed, 9, h * w)).unwrap();
            let fast = power_spectrum_2d(&m);
            let slow = naive_power_spectrum(h, w, m.values()).unwrap();
            let scale = slow.iter().cloned().fold(0.0, f64::max).max(1e-30);
            for (a, b) in fast.values.iter().zip(&slow) {
                prop_assert!((a - b).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn parseval(h in 2usize..40, w in 2usize..40, seed in any::<u64>()) {
            let m = CenteredMap::from_field(h, w, gaussian_field(seed, 5, h * w)).unwrap();
            let energy: f64 = m.values().iter().map(|v| v * v).sum();
            let total = power_spectrum_2d(&m).total();
            prop_assert!((total - (h * w) as f64 * energy).abs() <= 1e-9 * total.max(1e-30));
        }

        #[test]
        fn modulation_invariants(h in 4usize..24, w in 4usize..24, c in 1usize..4, seed in any::<u64>(), ratio in 1.0f64..16.0) {
            let out = sega_modulate(&noise_grid(h, w, c, seed), &ntk(Axis::H, ratio), &ntk(Axis::W, ratio), ratio, &SegaConfig::default()).unwrap();
            prop_assert!((0.0..=1.0).contains(&out.h.sigma));
            prop_assert!(out.flatness > 0.0 && out.flatness <= 1.0);
            for sv in [&out.h, &out.w] {
                let n = sv.s_corr.len() as f64;
                prop_assert!(sv.correction_sum().abs() <= 1e-9 * n);
                prop_assert!(sv.s_corr.iter().all(|s| s.abs() < 2.0));
                prop_assert!(sv.m.iter().all(|&m| m > 0.0));
                if !sv.clamped {
                    prop_assert!((sv.mean_m() - sv.m_ref).abs() <= 1e-9);
                    for (m, s) in sv.m.iter().zip(&sv.s_corr) {
                        prop_assert!((m - sv.m_ref * (1.0 - sv.sigma * s)).abs() <= 1e-12);
                    }
                }
            }
        }

        #[test]
        fn raising_one_band_never_lowers_its_correction(
            energies in proptest::collection::vec(1e-3f64..1e3, 8),
            target in 0usize..8,
            factor in 1.0f64..1e3,
        ) {
            // Pairs mapped one-to-one onto bins 0..7 of a 16-long axis.
            let theta: Vec<f64> = (0..8).rev().map(|b| 2.0 * PI * b as f64 / 16.0 + 1e-9).collect();
            let sched = schedule_with(Axis::W, theta.clone());
            let pair = theta.iter().position(|&t| band_lookup(t, 16) == target).unwrap();
            let before = per_dim_correction(&energies, &sched, 16, 1e-12).unwrap();
            let mut raised = energies.clone();
            raised[target] *= factor;
            let after = per_dim_correction(&raised, &sched, 16, 1e-12).unwrap();
            prop_assert!(after[pair] >= before[pair] - 1e-12);
        }

        #[test]
        fn modulation_is_deterministic(seed in any::<u64>()) {
            let g = noise_grid(12, 10, 2, seed);
            let (h, w) = (ntk(Axis::H, 2.0), ntk(Axis::W, 2.0));
            let a = sega_modulate(&g, &h, &w, 2.0, &SegaConfig::default()).unwrap();
            let b = sega_modulate(&g, &h, &w, 2.0, &SegaConfig::default()).unwrap();
            prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        }
    }
}

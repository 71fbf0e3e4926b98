//! Synthetic denoising trajectories.
//!
//! Each step blends seeded noise into a structure field, runs the spectral
//! analysis on the resulting latent and, for every configured method, the
//! attention entropy of a seeded token field at the target grid. The
//! baseline is evaluated on a nearest-neighbour subsample of the same latent
//! at the training grid.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::attention::{attend_rotary, attention_entropy, TokenField};
use crate::config::{ExperimentConfig, RopeConfig};
use crate::format::{csv_row, fmt_sig, round_sig};
use crate::rope::{self, Axis, Method};
use crate::spectral::{self, ScalingVector, SegaConfig, SpectralProfiles};
use crate::tensorio::{LatentGrid, LatentSource, TrajectoryConfig};
use crate::{Error, Result};

/// How a method sets the per-pair magnitudes and the logit scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    /// `m ≡ 1`.
    #[default]
    None,
    /// `m ≡ m_ref`.
    Fixed,
    /// `m ≡ 1` with the YaRN logit temperature.
    Temperature,
    /// Spectral modulation of the current latent.
    Sega,
    /// `m ≡ c`.
    Uniform(f64),
}

impl ScalingMode {
    pub fn label(self) -> String {
        match self {
            ScalingMode::None => "none".into(),
            ScalingMode::Fixed => "fixed".into(),
            ScalingMode::Temperature => "temperature".into(),
            ScalingMode::Sega => "sega".into(),
            ScalingMode::Uniform(c) => format!("uniform({})", fmt_sig(c)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: String,
    pub rope: Method,
    #[serde(default)]
    pub scaling: ScalingMode,
}

impl MethodSpec {
    pub fn new(name: impl Into<String>, rope: Method, scaling: ScalingMode) -> Self {
        Self {
            name: name.into(),
            rope,
            scaling,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok_name = !self.name.is_empty()
            && self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if !ok_name {
            return Err(Error::Config(format!(
                "method name {:?} must be non-empty [A-Za-z0-9_-]",
                self.name
            )));
        }
        if let ScalingMode::Uniform(c) = self.scaling {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!(
                    "uniform scale for {} must be positive, got {c}",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodEntropy {
    pub name: String,
    pub entropy: f64,
    /// Method entropy minus baseline entropy.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    /// Noise weight of the latent; also the DyPE timestep.
    pub alpha: f64,
    pub flatness: f64,
    pub sigma: f64,
    pub m_ref: f64,
    pub h: ScalingVector,
    pub w: ScalingVector,
    pub radial: Vec<f64>,
    pub occupied: Vec<bool>,
    pub baseline_entropy: Option<f64>,
    pub methods: Vec<MethodEntropy>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub config: ExperimentConfig,
    pub steps: Vec<StepRecord>,
}

impl TrajectoryRecord {
    pub fn last(&self) -> &StepRecord {
        self.steps.last().expect("trajectories have at least one step")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Seed of the projection draw for `head` at `step`.
pub fn projection_seed(base: u64, step: usize, head: usize) -> u64 {
    base ^ ((step as u64) << 32) ^ head as u64
}

/// Nearest-neighbour subsample of `grid` to `height x width`.
pub fn subsample(grid: &LatentGrid, height: usize, width: usize) -> Result<LatentGrid> {
    let c = grid.channels();
    let mut values = Vec::with_capacity(height * width * c);
    for i in 0..height {
        let si = i * grid.height() / height;
        for j in 0..width {
            let sj = j * grid.width() / width;
            values.extend_from_slice(grid.token(si, sj));
        }
    }
    Ok(LatentGrid::new(height, width, c, values)?)
}

/// Mean attention entropy of `method` on `grid`, averaged over `seeds`.
///
/// `rope_cfg` supplies the extrapolation ratios; pass ratios of one to
/// evaluate at training scale.
pub fn method_entropy(
    rope_cfg: &RopeConfig,
    sega: &SegaConfig,
    method: &MethodSpec,
    grid: &LatentGrid,
    timestep: f64,
    seeds: &[u64],
) -> Result<f64> {
    let (sh, sw) = rope_cfg.schedules(method.rope, grid.height(), grid.width(), timestep)?;
    let ratio = rope_cfg.resolution_ratio();
    let uniform = |c: f64| (vec![c; sh.pairs()], vec![c; sw.pairs()]);
    let mut logit_scale = 1.0;
    let (m_h, m_w) = match method.scaling {
        ScalingMode::None => uniform(1.0),
        ScalingMode::Fixed => uniform(spectral::reference_scale(ratio, sega)?),
        ScalingMode::Temperature => {
            logit_scale = rope::yarn_temperature(ratio)?;
            uniform(1.0)
        }
        ScalingMode::Sega => {
            let m = spectral::sega_modulate(grid, &sh, &sw, ratio, sega)?;
            (m.h.m, m.w.m)
        }
        ScalingMode::Uniform(c) => uniform(c),
    };
    let mut total = 0.0;
    for &seed in seeds {
        let tokens = TokenField::from_latent(grid, sh.dim + sw.dim, seed);
        let (_, field) = attend_rotary(&tokens, &sh, &sw, &m_h, &m_w, logit_scale)?;
        total += attention_entropy(&field).mean;
    }
    Ok(total / seeds.len() as f64)
}

fn at_training_scale(rope_cfg: &RopeConfig) -> RopeConfig {
    RopeConfig {
        ratio_h: 1.0,
        ratio_w: 1.0,
        ..rope_cfg.clone()
    }
}

fn run_step(cfg: &ExperimentConfig, source: &LatentSource, step: usize) -> Result<StepRecord> {
    let t = &cfg.trajectory;
    let grid = source.latent(step)?;
    let alpha = t.alpha(step);
    let (sh, sw) = cfg.rope.schedules(cfg.rope.method, t.height, t.width, alpha)?;
    let modulation = spectral::sega_modulate(&grid, &sh, &sw, cfg.rope.resolution_ratio(), &cfg.sega)?;

    let (baseline_entropy, methods) = if cfg.methods.is_empty() {
        (None, Vec::new())
    } else {
        let seeds: Vec<u64> = (0..cfg.attention.heads)
            .map(|head| projection_seed(cfg.attention.seed, step, head))
            .collect();
        let train = subsample(
            &grid,
            cfg.rope.train_grid_len(Axis::H, t.height),
            cfg.rope.train_grid_len(Axis::W, t.width),
        )?;
        let base = method_entropy(
            &at_training_scale(&cfg.rope),
            &cfg.sega,
            &cfg.baseline,
            &train,
            alpha,
            &seeds,
        )?;
        let methods = cfg
            .methods
            .iter()
            .map(|m| {
                let entropy = method_entropy(&cfg.rope, &cfg.sega, m, &grid, alpha, &seeds)?;
                Ok(MethodEntropy {
                    name: m.name.clone(),
                    entropy,
                    delta: entropy - base,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        (Some(base), methods)
    };

    let SpectralProfiles { radial, occupied, .. } = modulation.profiles;
    Ok(StepRecord {
        step,
        alpha,
        flatness: modulation.flatness,
        sigma: modulation.h.sigma,
        m_ref: modulation.h.m_ref,
        h: modulation.h,
        w: modulation.w,
        radial,
        occupied,
        baseline_entropy,
        methods,
    })
}

/// Runs every step of the trajectory. Steps are evaluated in parallel and
/// collected in step order, so the record does not depend on scheduling.
pub fn run_trajectory(cfg: &ExperimentConfig) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let source = LatentSource::new(&cfg.trajectory)?;
    let steps = (0..cfg.trajectory.steps)
        .into_par_iter()
        .map(|step| run_step(cfg, &source, step))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryRecord {
        config: cfg.clone(),
        steps,
    })
}

/// Per-step radial energy, each row normalised to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Heatmap {
    pub rows: Vec<Vec<f64>>,
    /// Rows with no energy; they are left as zeros instead of NaN.
    pub degenerate: Vec<bool>,
}

impl Heatmap {
    pub fn from_radial<'a>(profiles: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let (rows, degenerate) = profiles
            .into_iter()
            .map(|r| {
                let total: f64 = r.iter().sum();
                if total > 0.0 && total.is_finite() {
                    (r.iter().map(|v| v / total).collect(), false)
                } else {
                    (vec![0.0; r.len()], true)
                }
            })
            .unzip();
        Self { rows, degenerate }
    }

    pub fn from_record(record: &TrajectoryRecord) -> Self {
        Self::from_radial(record.steps.iter().map(|s| s.radial.as_slice()))
    }

    pub fn to_csv(&self) -> String {
        let bins = self.rows.first().map_or(0, Vec::len);
        let mut out = String::from("step");
        for b in 0..bins {
            write!(out, ",bin_{b}").unwrap();
        }
        out.push_str(",degenerate\n");
        for (step, (row, deg)) in self.rows.iter().zip(&self.degenerate).enumerate() {
            writeln!(out, "{step},{},{}", csv_row(row), u8::from(*deg)).unwrap();
        }
        out
    }
}

/// Spectral heatmap straight from the latents, without any attention work.
pub fn spectral_heatmap(cfg: &TrajectoryConfig, sega: &SegaConfig) -> Result<Heatmap> {
    let source = LatentSource::new(cfg)?;
    let bins = sega.bins_for(cfg.height, cfg.width);
    let radial = (0..cfg.steps)
        .into_par_iter()
        .map(|step| {
            let grid = source.latent(step)?;
            let spectrum = spectral::power_spectrum_2d(&crate::tensorio::center_map(&grid));
            Ok(spectral::radial_profile(&spectrum, bins)?.0)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Heatmap::from_radial(radial.iter().map(Vec::as_slice)))
}

/// Per-step entropy deltas against the baseline, one column per method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyTrace {
    pub methods: Vec<String>,
    pub baseline: Vec<f64>,
    /// `deltas[step][method]`.
    pub deltas: Vec<Vec<f64>>,
}

impl EntropyTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,baseline_entropy");
        for name in &self.methods {
            write!(out, ",{name}").unwrap();
        }
        out.push('\n');
        for (step, (b, row)) in self.baseline.iter().zip(&self.deltas).enumerate() {
            write!(out, "{step},{}", fmt_sig(*b)).unwrap();
            if !row.is_empty() {
                write!(out, ",{}", csv_row(row)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Mean over steps of `|delta|` for method column `i`.
    pub fn mean_abs_delta(&self, i: usize) -> f64 {
        self.deltas.iter().map(|r| r[i].abs()).sum::<f64>() / self.deltas.len() as f64
    }
}

pub fn entropy_trace(record: &TrajectoryRecord) -> EntropyTrace {
    EntropyTrace {
        methods: record.config.methods.iter().map(|m| m.name.clone()).collect(),
        baseline: record
            .steps
            .iter()
            .map(|s| s.baseline_entropy.unwrap_or(f64::NAN))
            .collect(),
        deltas: record
            .steps
            .iter()
            .map(|s| s.methods.iter().map(|m| m.delta).collect())
            .collect(),
    }
}

/// `steps x D/2` matrix of magnitudes for one axis.
pub fn scaling_map_csv(record: &TrajectoryRecord, axis: Axis) -> String {
    let pairs = record.steps.first().map_or(0, |s| s.h.m.len());
    let mut out = String::from("step");
    for d in 0..pairs {
        write!(out, ",d{d}").unwrap();
    }
    out.push('\n');
    for s in &record.steps {
        let v = match axis {
            Axis::H => &s.h,
            Axis::W => &s.w,
        };
        writeln!(out, "{},{}", s.step, csv_row(&v.m)).unwrap();
    }
    out
}

fn num(x: f64) -> Value {
    json!(round_sig(x))
}

fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

/// Aggregate report, including whether SEGA keeps entropy closer to the
/// baseline than fixed scaling does. That comparison is reported, not
/// asserted.
pub fn summary(record: &TrajectoryRecord) -> Value {
    let cfg = &record.config;
    let trace = entropy_trace(record);
    let col = |f: fn(&StepRecord) -> f64| -> Vec<f64> { record.steps.iter().map(f).collect() };
    let methods: Vec<Value> = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let entropy: Vec<f64> = record.steps.iter().map(|s| s.methods[i].entropy).collect();
            let deltas: Vec<f64> = trace.deltas.iter().map(|r| r[i]).collect();
            json!({
                "name": m.name,
                "rope": m.rope.as_str(),
                "scaling": m.scaling.label(),
                "mean_entropy": nums(&entropy),
                "mean_delta": num(deltas.iter().sum::<f64>() / deltas.len() as f64),
                "mean_abs_delta": num(trace.mean_abs_delta(i)),
            })
        })
        .collect();
    let find = |mode: ScalingMode| cfg.methods.iter().position(|m| m.scaling == mode);
    let comparison = match (find(ScalingMode::Sega), find(ScalingMode::Fixed)) {
        (Some(s), Some(f)) => {
            let (ds, df) = (trace.mean_abs_delta(s), trace.mean_abs_delta(f));
            json!({
                "sega": cfg.methods[s].name,
                "fixed": cfg.methods[f].name,
                "sega_mean_abs_delta": num(ds),
                "fixed_mean_abs_delta": num(df),
                "sega_closer_to_baseline": ds <= df,
            })
        }
        _ => Value::Null,
    };
    let t = &cfg.trajectory;
    json!({
        "steps": record.steps.len(),
        "grid": [t.height, t.width],
        "train_grid": [
            cfg.rope.train_grid_len(Axis::H, t.height),
            cfg.rope.train_grid_len(Axis::W, t.width),
        ],
        "rope_method": cfg.rope.method.as_str(),
        "resolution_ratio": num(cfg.rope.resolution_ratio()),
        "m_ref": num(record.last().m_ref),
        "alpha": nums(&col(|s| s.alpha)),
        "flatness": nums(&col(|s| s.flatness)),
        "sigma": nums(&col(|s| s.sigma)),
        "clamped_steps": record
            .steps
            .iter()
            .filter(|s| s.h.clamped || s.w.clamped)
            .map(|s| s.step)
            .collect::<Vec<_>>(),
        "baseline": {
            "name": cfg.baseline.name,
            "mean_entropy": nums(&trace.baseline),
        },
        "methods": methods,
        "sega_vs_fixed": comparison,
    })
}

pub const SCALING_MAP_H: &str = "scaling_map_H.csv";
pub const SCALING_MAP_W: &str = "scaling_map_W.csv";
pub const SPECTRAL_HEATMAP: &str = "spectral_heatmap.csv";
pub const ENTROPY_TRACE: &str = "entropy_trace.csv";
pub const SUMMARY: &str = "summary.json";

/// Writes `contents` to `dir/name`, creating `dir` if needed.
pub fn write_output(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

/// Writes all five trajectory outputs into `dir`.
pub fn write_outputs(record: &TrajectoryRecord, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut summary = serde_json::to_string_pretty(&summary(record)).expect("summary serializes");
    summary.push('\n');
    let files = [
        (SCALING_MAP_H, scaling_map_csv(record, Axis::H)),
        (SCALING_MAP_W, scaling_map_csv(record, Axis::W)),
        (SPECTRAL_HEATMAP, Heatmap::from_record(record).to_csv()),
        (ENTROPY_TRACE, entropy_trace(record).to_csv()),
        (SUMMARY, summary),
    ];
    files
        .iter()
        .map(|(name, body)| write_output(dir, name, body))
        .collect()
}

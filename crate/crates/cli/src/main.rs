//! `sega`: command-line access to every stage of the pipeline.
//!
//! Exit codes: 0 on success, 2 for usage or configuration errors, 3 for I/O
//! and latent-file errors.

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use sega_core::attention::{attend_rotary, attention_entropy, TokenField};
use sega_core::format::{csv_row, fmt_sig, round_sig};
use sega_core::harness::{self, Heatmap};
use sega_core::rope::{self, Axis, DypeParams, Method, ScheduleSpec, YarnParams};
use sega_core::spectral::{self, ScalingVector};
use sega_core::tensorio::{self, LatentGrid, TensorError};
use sega_core::{Error, ExperimentConfig};

#[derive(Parser)]
#[command(name = "sega", version, about = "Spectral-energy guided RoPE scaling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the frequency schedule of one axis as CSV.
    RopeTable(RopeTableArgs),
    /// Per-axis SEGA magnitudes for a latent, as JSON.
    Modulate(ModulateArgs),
    /// Axis and radial energy profiles of a latent, as CSV.
    Spectrum(LatentArgs),
    /// Attention weights of one query token over the grid, as CSV.
    AttnMap(AttnMapArgs),
    /// Per-token attention entropy, as CSV.
    Entropy(AttnArgs),
    /// Run a synthetic trajectory and write all outputs.
    Trajectory(ExperimentArgs),
    /// Write only the per-step spectral heatmap.
    Heatmap(ExperimentArgs),
    /// Write one synthetic trajectory latent as a SEGL file.
    Latent(LatentOutArgs),
}

#[derive(Args)]
struct RopeTableArgs {
    /// Rotary dimension D (even).
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value_t = rope::DEFAULT_BASE)]
    base: f64,
    /// none, pi, ntk, ntk_strong, yarn or dype.
    #[arg(long, default_value = "none", value_parser = parse_method)]
    method: Method,
    /// Extrapolation ratio s >= 1.
    #[arg(long, default_value_t = 1.0)]
    ratio: f64,
    /// YaRN lower ramp bound [default: 1].
    #[arg(long)]
    alpha: Option<f64>,
    /// YaRN upper ramp bound [default: 32].
    #[arg(long)]
    beta: Option<f64>,
    /// YaRN training length in tokens [default: 32].
    #[arg(long)]
    train_len: Option<f64>,
    /// DyPE timestep, 1 at pure noise [default: 0].
    #[arg(long)]
    dype_t: Option<f64>,
    /// DyPE schedule exponent [default: 1].
    #[arg(long)]
    dype_p: Option<f64>,
}

/// Overrides for the SEGA hyperparameters.
#[derive(Args)]
struct SegaArgs {
    /// Reference-scale exponent κ [default: 0.08, or the config value].
    #[arg(long)]
    kappa: Option<f64>,
    /// Flatness gate exponent γ [default: 1.5, or the config value].
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Args)]
struct LatentArgs {
    /// SEGL latent file.
    #[arg(long)]
    latent: PathBuf,
    /// JSON experiment config; every field is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write to this directory instead of stdout.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    sega: SegaArgs,
}

#[derive(Args)]
struct ModulateArgs {
    #[command(flatten)]
    input: LatentArgs,
    /// Extrapolation ratio for both axes; overrides the config.
    #[arg(long)]
    ratio: Option<f64>,
}

#[derive(Args)]
struct AttnArgs {
    #[command(flatten)]
    input: LatentArgs,
    /// Extrapolation ratio for both axes; overrides the config.
    #[arg(long)]
    ratio: Option<f64>,
    /// Uniform per-pair magnitude m ≡ c on queries and keys [default: 1].
    #[arg(long, conflicts_with = "sega_scaling")]
    scale: Option<f64>,
    /// Use the latent's SEGA magnitudes instead of a uniform scale.
    #[arg(long = "sega")]
    sega_scaling: bool,
}

#[derive(Args)]
struct AttnMapArgs {
    #[command(flatten)]
    attn: AttnArgs,
    /// Query token as `h,w` [default: grid centre].
    #[arg(long, value_parser = parse_token)]
    token: Option<(usize, usize)>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: output.dir from the config, else ./out].
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    sega: SegaArgs,
}

#[derive(Args)]
struct LatentOutArgs {
    /// JSON experiment config; only the trajectory section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trajectory step [default: the last step].
    #[arg(long)]
    step: Option<usize>,
    /// Destination file.
    #[arg(long)]
    out: PathBuf,
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).ok_or_else(|| {
        let names: Vec<_> = Method::ALL.iter().map(|m| m.as_str()).collect();
        format!("unknown method {s:?}, expected one of {}", names.join(", "))
    })
}

fn parse_token(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(',').ok_or("expected h,w")?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| e.to_string());
    Ok((p(h)?, p(w)?))
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(Error),
    Latent(TensorError),
    Io(io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Latent(_) | CliError::Io(_) => 3,
            CliError::Core(Error::Io(_))
            | CliError::Core(Error::Tensor(TensorError::Io(_) | TensorError::StructureFile { .. })) => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Latent(e) => write!(f, "latent: {e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

macro_rules! impl_from_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}
impl_from_core!(
    TensorError,
    rope::RopeError,
    spectral::SpectralError,
    sega_core::attention::AttentionError
);

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::RopeTable(a) => rope_table(&a),
        Command::Modulate(a) => modulate(&a),
        Command::Spectrum(a) => spectrum(&a),
        Command::AttnMap(a) => attn_map(&a),
        Command::Entropy(a) => entropy(&a),
        Command::Trajectory(a) => trajectory(&a),
        Command::Heatmap(a) => heatmap(&a),
        Command::Latent(a) => latent(&a),
    }
}

fn rope_table(a: &RopeTableArgs) -> CliResult {
    let yarn_flags = a.alpha.is_some() || a.beta.is_some() || a.train_len.is_some();
    if yarn_flags && a.method != Method::Yarn {
        return Err(CliError::Usage(
            "--alpha, --beta and --train-len require --method yarn".into(),
        ));
    }
    if (a.dype_t.is_some() || a.dype_p.is_some()) && a.method != Method::Dype {
        return Err(CliError::Usage("--dype-t and --dype-p require --method dype".into()));
    }
    let yd = YarnParams::default();
    let dd = DypeParams::default();
    let spec = ScheduleSpec {
        dim: a.dim,
        base: a.base,
        method: a.method,
        ratio: a.ratio,
        yarn: YarnParams {
            alpha: a.alpha.unwrap_or(yd.alpha),
            beta: a.beta.unwrap_or(yd.beta),
            train_len: a.train_len.unwrap_or(yd.train_len),
        },
        dype: DypeParams {
            t: a.dype_t.unwrap_or(dd.t),
            p: a.dype_p.unwrap_or(dd.p),
            strong: dd.strong,
        },
    };
    let sched = spec.build(Axis::W)?;
    let base = sched.base_theta();
    let lambdas = if a.method == Method::Yarn {
        Some(rope::yarn_lambdas(&base, &spec.yarn)?)
    } else {
        None
    };
    let mut out = String::from("d,theta,theta_scaled,wavelength");
    if lambdas.is_some() {
        out.push_str(",lambda");
    }
    out.push('\n');
    for (d, (t, ts)) in base.iter().zip(&sched.theta).enumerate() {
        let mut row = vec![*t, *ts, 2.0 * std::f64::consts::PI / ts];
        if let Some(l) = &lambdas {
            row.push(l[d]);
        }
        out.push_str(&format!("{d},{}\n", csv_row(&row)));
    }
    emit(None, "rope_table.csv", &out)
}

fn load_config(path: Option<&Path>, sega: &SegaArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                CliError::Io(io::Error::new(e.kind(), format!("{}: {e}", p.display())))
            })?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(k) = sega.kappa {
        cfg.sega.kappa = k;
    }
    if let Some(g) = sega.gamma {
        cfg.sega.gamma = g;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn with_ratio(cfg: &mut ExperimentConfig, ratio: Option<f64>) -> CliResult {
    if let Some(r) = ratio {
        cfg.rope.ratio_h = r;
        cfg.rope.ratio_w = r;
        cfg.rope.validate()?;
    }
    Ok(())
}

/// Writes to `dir/name` when a directory is given, stdout otherwise.
fn emit(dir: Option<&Path>, name: &str, body: &str) -> CliResult {
    match dir {
        Some(d) => {
            harness::write_output(d, name, body)?;
        }
        None => {
            let mut out = io::stdout().lock();
            out.write_all(body.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

fn num(x: f64) -> Value {
    json!(round_sig(x))
}

fn axis_json(v: &ScalingVector, flatness: f64) -> Value {
    json!({
        "axis": v.axis.as_str(),
        "m_ref": num(v.m_ref),
        "sigma": num(v.sigma),
        "SF": num(flatness),
        "s_corr": v.s_corr.iter().map(|&x| num(x)).collect::<Vec<_>>(),
        "m": v.m.iter().map(|&x| num(x)).collect::<Vec<_>>(),
        "clamped": v.clamped,
    })
}

struct Loaded {
    cfg: ExperimentConfig,
    grid: LatentGrid,
}

fn load_latent(input: &LatentArgs, ratio: Option<f64>) -> CliResult<Loaded> {
    let mut cfg = load_config(input.config.as_deref(), &input.sega)?;
    with_ratio(&mut cfg, ratio)?;
    let grid = tensorio::read_latent(&input.latent).map_err(|e| match e {
        TensorError::Io(io) => CliError::Latent(TensorError::Io(io::Error::new(
            io.kind(),
            format!("{}: {io}", input.latent.display()),
        ))),
        other => CliError::Latent(other),
    })?;
    Ok(Loaded { cfg, grid })
}

fn modulate(a: &ModulateArgs) -> CliResult {
    let Loaded { cfg, grid } = load_latent(&a.input, a.ratio)?;
    let (sh, sw) = cfg.rope.schedules(cfg.rope.method, grid.height(), grid.width(), 0.0)?;
    let m = spectral::sega_modulate(&grid, &sh, &sw, cfg.rope.resolution_ratio(), &cfg.sega)?;
    let body = json!([axis_json(&m.h, m.flatness), axis_json(&m.w, m.flatness)]);
    let mut text = serde_json::to_string_pretty(&body).expect("json serializes");
    text.push('\n');
    emit(a.input.out_dir.as_deref(), "modulation.json", &text)
}

fn spectrum(a: &LatentArgs) -> CliResult {
    let Loaded { cfg, grid } = load_latent(a, None)?;
    let power = spectral::power_spectrum_2d(&tensorio::center_map(&grid));
    let profiles = spectral::SpectralProfiles::from_spectrum(
        &power,
        cfg.sega.bins_for(grid.height(), grid.width()),
    )?;
    let mut out = String::from("profile,bin,energy,occupied\n");
    for (name, values) in [("E_H", &profiles.axis_h), ("E_W", &profiles.axis_w)] {
        for (b, v) in values.iter().enumerate() {
            out.push_str(&format!("{name},{b},{},1\n", fmt_sig(*v)));
        }
    }
    for (b, (v, occ)) in profiles.radial.iter().zip(&profiles.occupied).enumerate() {
        out.push_str(&format!("E_iso,{b},{},{}\n", fmt_sig(*v), u8::from(*occ)));
    }
    emit(a.out_dir.as_deref(), "spectrum.csv", &out)
}

/// Attention field of the latent's token projections under the configured
/// schedule and the requested magnitudes.
fn attention_field(a: &AttnArgs) -> CliResult<(LatentGrid, sega_core::AttentionField)> {
    let Loaded { cfg, grid } = load_latent(&a.input, a.ratio)?;
    if let Some(c) = a.scale {
        if !(c > 0.0 && c.is_finite()) {
            return Err(CliError::Usage(format!("--scale must be positive, got {c}")));
        }
    }
    let (sh, sw) = cfg.rope.schedules(cfg.rope.method, grid.height(), grid.width(), 0.0)?;
    let (m_h, m_w) = if a.sega_scaling {
        let m = spectral::sega_modulate(&grid, &sh, &sw, cfg.rope.resolution_ratio(), &cfg.sega)?;
        (m.h.m, m.w.m)
    } else {
        let c = a.scale.unwrap_or(1.0);
        (vec![c; sh.pairs()], vec![c; sw.pairs()])
    };
    let tokens = TokenField::from_latent(&grid, sh.dim + sw.dim, cfg.attention.seed);
    let (_, field) = attend_rotary(&tokens, &sh, &sw, &m_h, &m_w, 1.0)?;
    Ok((grid, field))
}

fn attn_map(a: &AttnMapArgs) -> CliResult {
    let (grid, field) = attention_field(&a.attn)?;
    let (h, w) = a.token.unwrap_or((grid.height() / 2, grid.width() / 2));
    if h >= grid.height() || w >= grid.width() {
        return Err(CliError::Usage(format!(
            "token {h},{w} outside the {}x{} grid",
            grid.height(),
            grid.width()
        )));
    }
    let row = field.row(h * grid.width() + w);
    let mut out = String::new();
    for r in row.chunks(grid.width()) {
        out.push_str(&csv_row(r));
        out.push('\n');
    }
    emit(a.attn.input.out_dir.as_deref(), "attn_map.csv", &out)
}

fn entropy(a: &AttnArgs) -> CliResult {
    let (grid, field) = attention_field(a)?;
    let stats = attention_entropy(&field);
    let mut out = String::from("token,h,w,entropy\n");
    for (i, e) in stats.per_row.iter().enumerate() {
        out.push_str(&format!("{i},{},{},{}\n", i / grid.width(), i % grid.width(), fmt_sig(*e)));
    }
    emit(a.input.out_dir.as_deref(), "entropy.csv", &out)
}

fn out_dir(a: &ExperimentArgs, cfg: &ExperimentConfig) -> PathBuf {
    a.out_dir
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn trajectory(a: &ExperimentArgs) -> CliResult {
    let cfg = load_config(a.config.as_deref(), &a.sega)?;
    let dir = out_dir(a, &cfg);
    let record = harness::run_trajectory(&cfg)?;
    for path in harness::write_outputs(&record, &dir)? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn heatmap(a: &ExperimentArgs) -> CliResult {
    let cfg = load_config(a.config.as_deref(), &a.sega)?;
    let dir = out_dir(a, &cfg);
    let map: Heatmap = harness::spectral_heatmap(&cfg.trajectory, &cfg.sega)?;
    let path = harness::write_output(&dir, harness::SPECTRAL_HEATMAP, &map.to_csv())?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn latent(a: &LatentOutArgs) -> CliResult {
    let cfg = load_config(a.config.as_deref(), &SegaArgs { kappa: None, gamma: None })?;
    let t = &cfg.trajectory;
    let step = a.step.unwrap_or(t.steps - 1);
    if step >= t.steps {
        return Err(CliError::Usage(format!("--step {step} outside 0..{}", t.steps)));
    }
    let grid = tensorio::generate_latent(t, step)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    tensorio::write_latent(&grid, &a.out).map_err(|e| match e {
        TensorError::Io(io) => CliError::Io(io),
        other => CliError::Core(other.into()),
    })?;
    Ok(())
}

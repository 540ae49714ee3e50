//! The `photonlab` command line. [`run`] parses arguments, dispatches to a
//! subcommand and turns the outcome into an exit code: 0 on success, 2 for
//! usage errors, 1 when the analysis itself fails.
//!
//! `--config FILE` loads a JSON object of flag values (`{"bins_per_pulse":
//! 11}`); flags given on the command line win. `PHOTONLAB_THREADS` caps the
//! worker pool.

mod commands;
mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub use output::{FileDigest, Manifest};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Stream(#[from] crate::stream::StreamError),
    #[error(transparent)]
    Correlate(#[from] crate::correlate::CorrelateError),
    #[error(transparent)]
    Trace(#[from] crate::trace::TraceError),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
    #[error(transparent)]
    Stokes(#[from] crate::stokes::StokesError),
    #[error(transparent)]
    Fiber(#[from] crate::fibermode::FiberError),
    #[error(transparent)]
    Taper(#[from] crate::taper::TaperError),
    #[error(transparent)]
    Simulation(#[from] crate::simulate::SimError),
}

impl CliError {
    fn io(path: &str, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "photonlab",
    version,
    about = "Photon-statistics analysis, nanofiber modes and taper design"
)]
#[command(args_override_self = true, propagate_version = true)]
pub struct Cli {
    /// JSON object of flag values, overridden by flags on the command line.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// More log output (repeat for debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct OutArgs {
    /// Output prefix: writes PREFIX.csv, PREFIX.json and PREFIX.manifest.json.
    /// `-` prints the main table to stdout; without it the JSON summary is
    /// printed.
    #[arg(long, value_name = "PREFIX")]
    pub out: Option<String>,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ChannelArg {
    All,
    #[value(name = "0")]
    Start,
    #[value(name = "1")]
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackgroundArg {
    /// Subtract the between-peak level.
    Floor,
    /// Square-root formula (√M − √M_b)².
    SquareRoot,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Header summary and channel balance of a PTS file.
    Info(InputArgs),
    /// Full decode of a PTS file; fails on any malformed or misordered record.
    Validate(InputArgs),
    /// Monte-Carlo photon stream from a scenario file.
    Simulate(SimulateArgs),
    /// Start-stop g²(τ) histogram, cleaned and normalised.
    Correlate(CorrelateArgs),
    /// Binned intensity trace and on/off statistics.
    Trace(TraceArgs),
    /// Fluorescence-lifetime–intensity distribution.
    Flid(FlidArgs),
    /// Micro-time decay histogram.
    Decay(DecayArgs),
    /// Model fit to a CSV table.
    Fit(FitArgs),
    /// Stokes vector from a rotating-waveplate sweep.
    Stokes(StokesArgs),
    /// Step-index fiber modes and fields.
    #[command(subcommand)]
    Fiber(FiberCommand),
    /// Flame-pulled taper design, simulation and adiabaticity.
    #[command(subcommand)]
    Taper(TaperCommand),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// PTS file, or `-` for stdin.
    pub input: String,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON scenario with `emitter` and `apparatus` objects.
    #[arg(long)]
    pub scenario: String,
    /// Replaces the scenario's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replaces the scenario's duration.
    #[arg(long)]
    pub duration_s: Option<f64>,
    /// Writes PREFIX.pts; `-` streams the PTS bytes to stdout.
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    pub input: String,
    /// Odd number of histogram bins per laser period.
    #[arg(long, default_value_t = 11)]
    pub bins_per_pulse: u32,
    /// Histogram half-width in laser periods.
    #[arg(long, default_value_t = 20)]
    pub max_delay_pulses: u64,
    #[arg(long, default_value_t = 0)]
    pub delay_line_ps: u64,
    #[arg(long, default_value_t = 0)]
    pub dead_time_ps: u64,
    /// Delay range (ps, physical) whose peaks define g² = 1. Defaults to
    /// the outer fifth of the histogram.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub far_window_ps: Option<Vec<f64>>,
    /// Subtract the between-peak background before normalising.
    #[arg(long)]
    pub background: bool,
    #[arg(long, value_enum, default_value_t = BackgroundArg::Floor)]
    pub background_method: BackgroundArg,
    /// Skip normalisation; report recentred counts only.
    #[arg(long)]
    pub raw: bool,
    /// Also write far-delay peak heights out to this delay as PREFIX.far.csv.
    #[arg(long)]
    pub far_horizon_s: Option<f64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    pub input: String,
    /// Integration time per bin.
    #[arg(long, default_value_t = 0.01)]
    pub bin_s: f64,
    #[arg(long, value_enum, default_value_t = ChannelArg::All)]
    pub channel: ChannelArg,
    /// Counts per bin at or above which a bin is "on"; writes
    /// PREFIX.durations.csv.
    #[arg(long)]
    pub threshold: Option<u64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct FlidArgs {
    pub input: String,
    #[arg(long, default_value_t = 0.01)]
    pub bin_s: f64,
    #[arg(long, value_enum, default_value_t = ChannelArg::All)]
    pub channel: ChannelArg,
    #[arg(long, default_value_t = 20)]
    pub intensity_bins: usize,
    #[arg(long, default_value_t = 20)]
    pub lifetime_bins: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct DecayArgs {
    pub input: String,
    #[arg(long, default_value_t = 256)]
    pub bins: usize,
    #[arg(long, value_enum, default_value_t = ChannelArg::All)]
    pub channel: ChannelArg,
    /// Keep only photons from trace bins with at least this many counts.
    #[arg(long)]
    pub threshold: Option<u64>,
    /// Trace bin used with `--threshold`.
    #[arg(long, default_value_t = 0.01)]
    pub bin_s: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitModel {
    /// Decay table (time_s, counts).
    Multiexp,
    /// Excitation series (intensity, rate).
    Saturation,
    /// Durations (duration_s, optional state column).
    Powerlaw,
    /// Far-delay peaks (delay_s, height, sigma).
    G2blink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StateArg {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV table with a header row, or `-` for stdin.
    pub input: String,
    #[arg(long, value_enum)]
    pub model: FitModel,
    /// Exponential components for `multiexp`.
    #[arg(long, default_value_t = 1)]
    pub components: usize,
    /// Fit an exponential cutoff for `powerlaw`.
    #[arg(long)]
    pub truncated: bool,
    /// Which durations to fit when the table has a state column.
    #[arg(long, value_enum)]
    pub state: Option<StateArg>,
    /// Shortest resolvable on-time, for `g2blink`.
    #[arg(long)]
    pub tau_min_s: Option<f64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct StokesArgs {
    /// CSV with beta_rad, transmitted and optionally reflected columns.
    pub input: String,
    /// Waveplate retardance.
    #[arg(long, default_value_t = 90.0)]
    pub delta_deg: f64,
    /// Waveplate fast-axis offset.
    #[arg(long, default_value_t = 0.0)]
    pub beta0_deg: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Clone, Copy)]
pub struct IndexArgs {
    #[arg(long, default_value_t = 1.46)]
    pub n_core: f64,
    #[arg(long, default_value_t = 1.0)]
    pub n_clad: f64,
    #[arg(long)]
    pub wavelength_m: f64,
}

#[derive(Debug, Subcommand)]
pub enum FiberCommand {
    /// Guided modes (LP, or exact with --exact).
    Modes(ModesArgs),
    /// Radial HE11 field profile.
    Field(FieldArgs),
    /// Surface intensity and power split against radius.
    Scan(ScanArgs),
}

#[derive(Debug, Args)]
pub struct ModesArgs {
    #[command(flatten)]
    pub index: IndexArgs,
    #[arg(long)]
    pub radius_m: f64,
    /// Solve the full vector equations instead of the LP approximation.
    #[arg(long)]
    pub exact: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolarizationArg {
    Circular,
    Linear,
}

#[derive(Debug, Args)]
pub struct FieldArgs {
    #[command(flatten)]
    pub index: IndexArgs,
    #[arg(long)]
    pub radius_m: f64,
    /// Outer edge of the profile; defaults to three fiber radii.
    #[arg(long)]
    pub r_max_m: Option<f64>,
    #[arg(long, default_value_t = 301)]
    pub points: usize,
    #[arg(long, value_enum, default_value_t = PolarizationArg::Circular)]
    pub polarization: PolarizationArg,
    /// Symmetry axis of the linear polarisation.
    #[arg(long, default_value_t = 0.0)]
    pub phi0_rad: f64,
    /// Azimuth of the profile cut.
    #[arg(long, default_value_t = 0.0)]
    pub phi_rad: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[command(flatten)]
    pub index: IndexArgs,
    #[arg(long)]
    pub r_min_m: f64,
    #[arg(long)]
    pub r_max_m: f64,
    #[arg(long, default_value_t = 200)]
    pub points: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Subcommand)]
pub enum TaperCommand {
    /// Hot-zone schedule that draws a target profile.
    Design(DesignArgs),
    /// Profile drawn by a hot-zone schedule.
    Simulate(TaperSimArgs),
    /// Adiabaticity of a profile against a threshold factor.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    /// Target profile CSV (z_m, r_m). Without it an exponential target is
    /// built from --r0-m, --hot-zone-m and --elongation-m.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub r0_m: Option<f64>,
    #[arg(long)]
    pub hot_zone_m: Option<f64>,
    #[arg(long)]
    pub elongation_m: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub max_transition_m: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub min_hot_zone_m: f64,
    /// Elongation per step.
    #[arg(long, default_value_t = 50e-6)]
    pub step_m: f64,
    /// Smallest waist radius that can be drawn.
    #[arg(long, default_value_t = crate::taper::FABRICATION_FLOOR_M)]
    pub floor_m: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct TaperSimArgs {
    /// Schedule CSV (hot_zone_m, elongation_m).
    pub trajectory: String,
    #[arg(long)]
    pub r0_m: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Profile CSV (z_m, r_m).
    pub profile: String,
    #[command(flatten)]
    pub index: IndexArgs,
    /// Largest allowed ratio of taper angle to delineation angle.
    #[arg(long = "F", alias = "factor", default_value_t = 0.4)]
    pub factor: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

const TOP_LEVEL: [&str; 11] = [
    "info",
    "validate",
    "simulate",
    "correlate",
    "trace",
    "flid",
    "decay",
    "fit",
    "stokes",
    "fiber",
    "taper",
];

/// Removes `--config FILE` and splices the file's flags in right after the
/// subcommand, so later command-line flags override them.
pub fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        match a.to_str() {
            Some("--config") => {
                config = Some(
                    it.next()
                        .ok_or_else(|| CliError::Usage("--config needs a file".into()))?,
                );
            }
            Some(s) if s.starts_with("--config=") => {
                config = Some(OsString::from(&s["--config=".len()..]))
            }
            Some("--") => {
                rest.push(a);
                rest.extend(it.by_ref());
            }
            _ => rest.push(a),
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let shown = path.to_string_lossy().into_owned();
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&shown, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {shown}: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| CliError::Usage(format!("config {shown}: expected a JSON object")))?;

    let scalar = |k: &str, v: &serde_json::Value| match v {
        serde_json::Value::String(s) => Ok(s.clone()),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        serde_json::Value::Bool(b) => Ok(b.to_string()),
        _ => Err(CliError::Usage(format!(
            "config key {k}: unsupported value {v}"
        ))),
    };
    let mut flags: Vec<OsString> = Vec::new();
    for (k, v) in obj {
        let flag = OsString::from(format!("--{}", k.replace('_', "-")));
        match v {
            serde_json::Value::Bool(true) => flags.push(flag),
            serde_json::Value::Bool(false) | serde_json::Value::Null => {}
            serde_json::Value::Array(items) => {
                flags.push(flag);
                for item in items {
                    flags.push(scalar(k, item)?.into());
                }
            }
            other => {
                flags.push(flag);
                flags.push(scalar(k, other)?.into());
            }
        }
    }

    let mut at = rest.len();
    if let Some(i) = rest
        .iter()
        .skip(1)
        .position(|a| a.to_str().is_some_and(|s| TOP_LEVEL.contains(&s)))
    {
        let i = i + 1;
        let nested = matches!(rest[i].to_str(), Some("fiber" | "taper"));
        at = if nested
            && rest
                .get(i + 1)
                .is_some_and(|a| !a.to_string_lossy().starts_with('-'))
        {
            i + 2
        } else {
            i + 1
        };
    }
    rest.splice(at..at, flags);
    Ok(rest)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("PHOTONLAB_THREADS") {
        let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            CliError::Usage(format!(
                "PHOTONLAB_THREADS must be a positive integer, got {v:?}"
            ))
        })?;
        // a pool built earlier in this process keeps its size
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

/// Runs the program on `argv` (including the program name) and returns the
/// exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let args = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    let recorded: Vec<String> = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match init_threads().and_then(|_| commands::dispatch(&cli.command, recorded)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

//! Command-line front end: configuration, commands and file emitters.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
pub use error::CliError;
use output::{manifest_name, write_atomic, Artifact, RunManifest, Timings};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "FDMR_THREADS";

#[derive(Debug, Parser)]
#[command(name = "fdmr", version, about = "Floquet microring lattice simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to the configured one, then `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Bulk quasienergy bands, gaps and Chern numbers.
    Bands(Common),
    /// Ribbon spectrum with edge-state labels.
    Ribbon(Common),
    /// Supercell defect-band sweep over the phase detune.
    Fdmr(Common),
    /// Port transmission with and without the defect.
    Transmission(Common),
    /// Steady-state ring intensities at one wavelength.
    Fields {
        #[command(flatten)]
        common: Common,
        /// Wavelength (nm); overrides `[fields] lambda_nm`.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Disorder ensembles around the defect loop.
    Disorder(Common),
    /// Pair and single rates versus pump power, and biphoton amplitudes.
    Sfwm(Common),
    /// Synthetic coincidence histogram, correlations and CAR.
    Counts(Common),
    /// Resonance fit of a measured or simulated spectrum.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Spectrum CSV; overrides `[fit] input`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Phase-detune to wavelength calibration from the defect sweep.
    Calibrate(Common),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Bands(_) => "bands",
            Command::Ribbon(_) => "ribbon",
            Command::Fdmr(_) => "fdmr",
            Command::Transmission(_) => "transmission",
            Command::Fields { .. } => "fields",
            Command::Disorder(_) => "disorder",
            Command::Sfwm(_) => "sfwm",
            Command::Counts(_) => "counts",
            Command::Fit { .. } => "fit",
            Command::Calibrate(_) => "calibrate",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Bands(c)
            | Command::Ribbon(c)
            | Command::Fdmr(c)
            | Command::Transmission(c)
            | Command::Disorder(c)
            | Command::Sfwm(c)
            | Command::Counts(c)
            | Command::Calibrate(c) => c,
            Command::Fields { common, .. } | Command::Fit { common, .. } => common,
        }
    }
}

/// Runs one command on a loaded config and returns its output files.
pub fn execute(command: &Command, cfg: &RunConfig, ctx: &commands::Context) -> Result<Vec<Artifact>, CliError> {
    Ok(match command {
        Command::Bands(_) => commands::bands(cfg)?.0,
        Command::Ribbon(_) => commands::ribbon(cfg)?.0,
        Command::Fdmr(_) => commands::fdmr(cfg)?.0,
        Command::Transmission(_) => commands::transmission(cfg)?.0,
        Command::Fields { .. } => commands::fields(cfg, ctx)?.0,
        Command::Disorder(_) => commands::disorder(cfg, ctx)?.0,
        Command::Sfwm(_) => commands::sfwm(cfg)?.0,
        Command::Counts(_) => commands::counts(cfg, ctx)?.0,
        Command::Fit { .. } => commands::fit(cfg, ctx)?.0,
        Command::Calibrate(_) => commands::calibrate(cfg)?.0,
    })
}

fn configure_threads() -> Result<usize, CliError> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n >= 1)
            .ok_or_else(|| CliError::Config(format!("{THREADS_ENV}={v} is not a positive integer")))?;
        // A pool already built by an earlier call in this process is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

/// Loads the config, runs the command and writes outputs plus manifest.
pub fn run(cli: &Cli) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    let started_unix_s = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let threads = configure_threads()?;
    let common = cli.command.common();
    let (cfg, raw) = RunConfig::load(&common.config)?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let out_dir = common.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let ctx = commands::Context {
        seed,
        config_dir: common.config.parent().map(|p| p.to_path_buf()).unwrap_or_default(),
        input: match &cli.command {
            Command::Fit { input, .. } => input.clone(),
            _ => None,
        },
        lambda_nm: match &cli.command {
            Command::Fields { lambda, .. } => *lambda,
            _ => None,
        },
    };
    let artifacts = execute(&cli.command, &cfg, &ctx)?;
    let compute_s = started.elapsed().as_secs_f64();
    let write_start = Instant::now();
    let outputs = write_atomic(&out_dir, &artifacts)?;
    let mut manifest = RunManifest {
        tool: "fdmr".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: cli.command.name().into(),
        config_sha256: output::sha256_hex(&raw),
        seed,
        schema_version: cfg.schema_version,
        threads,
        outputs,
        timings: Timings { compute_s, write_s: 0.0, started_unix_s },
    };
    manifest.timings.write_s = write_start.elapsed().as_secs_f64();
    write_atomic(&out_dir, &[Artifact::json(&manifest_name(cli.command.name()), &manifest)?])?;
    Ok(manifest)
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use confbound_cli::commands::{exit_code, run};
use confbound_cli::config::{parse_levels, parse_rtols, CommandKind, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "confbound", version)]
#[command(about = "Exact likelihood confidence regions and bands by boundary tracing")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Maximum-likelihood fit, Fisher metric and scaled covariances.
    Fit(FitArgs),
    /// Confidence region boundaries (interval, curve or mesh).
    Region(RegionArgs),
    /// Pointwise confidence bands from the region boundary.
    Bands(BandArgs),
    /// Radial geodesics of the Fisher metric from the MLE.
    Geodesics(GeodesicArgs),
    /// Evaluation counts of boundary tracing and grid scans.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Built-in model name or path to an expression-model file.
    #[arg(long)]
    model: String,
    /// `builtin:toy`, `builtin:boarding-school` or a CSV path.
    #[arg(long)]
    data: Option<String>,
    /// Comma-separated levels, e.g. `1sigma,2sigma` or `0.95`.
    #[arg(long, default_value = "1sigma")]
    level: String,
    /// Degrees of freedom of the χ² threshold; defaults to the parameter count.
    #[arg(long)]
    dof: Option<usize>,
    /// Starting point of the fit.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    theta0: Option<Vec<f64>>,
    #[arg(long, short, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Tracing {
    /// Relative tolerance of the boundary integration.
    #[arg(long)]
    rtol: Option<String>,
    /// Slicing levels for three-parameter models.
    #[arg(long)]
    slices: Option<usize>,
    /// Vertices per slice for three-parameter models.
    #[arg(long)]
    ring_points: Option<usize>,
}

#[derive(Args, Debug)]
struct RegionArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    tracing: Tracing,
}

#[derive(Args, Debug)]
struct BandArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    tracing: Tracing,
    #[arg(long, allow_negative_numbers = true)]
    xmin: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    xmax: Option<f64>,
    /// Number of x-grid points.
    #[arg(long)]
    points: Option<usize>,
    /// Compute bands for models not declared globally injective.
    #[arg(long)]
    assume_injective: bool,
}

#[derive(Args, Debug)]
struct GeodesicArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    rtol: Option<String>,
    /// Number of directions.
    #[arg(long)]
    count: Option<usize>,
    /// Metric length; defaults to the square root of the level's threshold.
    #[arg(long)]
    length: Option<f64>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Tolerances: a list or a decade range such as `1e-5:1e-14`.
    #[arg(long)]
    rtol: Option<String>,
    /// Grid resolutions for the full-scan comparison.
    #[arg(long, value_delimiter = ',')]
    grid: Vec<usize>,
}

fn base(kind: CommandKind, c: Common, rtol: Option<String>) -> Result<RunConfig> {
    let mut cfg = RunConfig::new(kind, c.model);
    cfg.data = c.data;
    cfg.levels = parse_levels(&c.level)?;
    cfg.dof = c.dof;
    cfg.theta0 = c.theta0;
    cfg.out = c.out;
    if let Some(r) = rtol {
        cfg.rtol = parse_rtols(&r)?;
    }
    Ok(cfg)
}

fn config(cmd: Command) -> Result<RunConfig> {
    Ok(match cmd {
        Command::Fit(a) => base(CommandKind::Fit, a.common, None)?,
        Command::Region(a) => {
            let mut c = base(CommandKind::Region, a.common, a.tracing.rtol)?;
            c.slices = a.tracing.slices;
            c.ring_points = a.tracing.ring_points;
            c
        }
        Command::Bands(a) => {
            let mut c = base(CommandKind::Bands, a.common, a.tracing.rtol)?;
            c.slices = a.tracing.slices;
            c.ring_points = a.tracing.ring_points;
            c.xmin = a.xmin;
            c.xmax = a.xmax;
            c.points = a.points;
            c.assume_injective = a.assume_injective;
            c
        }
        Command::Geodesics(a) => {
            let mut c = base(CommandKind::Geodesics, a.common, a.rtol)?;
            c.count = a.count;
            c.length = a.length;
            c
        }
        Command::Bench(a) => {
            let mut c = base(CommandKind::Bench, a.common, a.rtol)?;
            c.grids = a.grid;
            c
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match config(cli.command).and_then(run) {
        Ok(report) => {
            for l in &report.lines {
                println!("{l}");
            }
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

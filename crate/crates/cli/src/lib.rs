//! The `momfit` command-line frontend.
//!
//! Exit codes: 0 when a fit separates (or covers) its data, 2 when the
//! classes are not separable at the requested degree, 3 when the support
//! selection stops without separating, 1 on usage, I/O and solver errors.

mod commands;
pub mod plot;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{exit_code, EXIT_ERROR, EXIT_INFEASIBLE, EXIT_ITERATION_LIMIT, EXIT_OK};

#[derive(Debug, Parser)]
#[command(
    name = "momfit",
    version,
    about = "Fit covering and separating polynomial level sets to point clouds"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimum-volume covering ellipsoid (degree 2) or quartic (degree 4).
    Cover(CoverArgs),
    /// Two-class separator with θ ≥ 0 on class 1 and θ ≤ 0 on class 2.
    Separate(SeparateArgs),
    /// Sample Gaussian clusters described by a TOML file into a CSV.
    Gen(GenArgs),
    /// Draw points and the zero level set of a fitted model as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitMode {
    /// Support selection over moment relaxations.
    Moment,
    /// One inequality per point, solved directly.
    PerPoint,
    /// ℓ1-norm linear program, one inequality per point.
    Lp,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Degree of θ.
    #[arg(long, default_value_t = 2, value_parser = parse_degree)]
    pub degree: usize,
    /// Relaxation order r (defaults to the degree).
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long, value_enum, default_value_t = FitMode::Moment)]
    pub mode: FitMode,
    /// Keep every point that has entered a support.
    #[arg(long)]
    pub accumulate_support: bool,
    /// Jitter every point by this radius before fitting.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Seed of the jitter directions.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub max_outer: Option<usize>,
    /// Model JSON to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also draw the fit (2-D data only).
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// TOML file with fit and solver settings.
    #[arg(long)]
    pub solver_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CoverArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// The input has a trailing class column; only class 1 is covered.
    #[arg(long)]
    pub labels: bool,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Args)]
pub struct SeparateArgs {
    /// Class 1, or both classes with `--labels`.
    #[arg(long)]
    pub input: PathBuf,
    /// Class 2.
    #[arg(long, conflicts_with = "labels", required_unless_present = "labels")]
    pub input2: Option<PathBuf>,
    #[arg(long)]
    pub labels: bool,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Cluster description (TOML).
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed of the cluster file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Append the cluster number as a class column (at most two clusters).
    #[arg(long)]
    pub labels: bool,
    /// Center at the mean and scale into the unit ball.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Model JSON written by `cover` or `separate`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, conflicts_with = "labels")]
    pub input2: Option<PathBuf>,
    #[arg(long)]
    pub labels: bool,
    #[arg(long)]
    pub svg: PathBuf,
}

fn parse_degree(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(d @ (2 | 4)) => Ok(d),
        Ok(d) if d % 2 == 1 => Err(format!(
            "odd degree {d} has no log-det objective; use 2 or 4"
        )),
        Ok(d) => Err(format!("degree {d} is not supported; use 2 or 4")),
        Err(e) => Err(e.to_string()),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(code) => code,
        // reader went away, e.g. `momfit ... | head`
        Err(e) if is_broken_pipe(&e) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<std::io::Error>()
            .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
    })
}

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Near-field MIMO-SAR imaging through a dielectric interface.
#[derive(Debug, Parser)]
#[command(name = "mimosar", version, about)]
struct Cli {
    /// Worker thread cap (0 = all cores).
    #[arg(long, global = true, env = "MIMOSAR_THREADS", default_value_t = 0)]
    threads: usize,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesise an echo tensor for a list of point targets.
    Simulate(SimulateArgs),
    /// Reconstruct an image from an echo tensor.
    Reconstruct(ReconstructArgs),
    /// Image entropy, peak and projections of a stored image.
    Metrics(MetricsArgs),
    /// Run several reconstructors on one echo and tabulate the results.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// TOML file with `[[target]]` entries.
    #[arg(long)]
    pub targets: PathBuf,
    /// Signal-to-noise ratio in dB; omit for a noiseless echo.
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Store samples in double precision.
    #[arg(long)]
    pub double: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    Ibp,
    Dtfda,
    Enhanced,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Ibp => "ibp",
            Algo::Dtfda => "dtfda",
            Algo::Enhanced => "enhanced",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Regularisation weight for the enhanced reconstructor.
    #[arg(long, conflicts_with = "lambda_auto")]
    pub lambda: Option<f64>,
    /// Pick the regularisation weight by entropy minimisation.
    #[arg(long)]
    pub lambda_auto: bool,
    /// Number of log-spaced candidates for `--lambda-auto`.
    #[arg(long, default_value_t = 8)]
    pub lambda_candidates: usize,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 50)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Back-projection sample stride `tx,rx,scan,freq`.
    #[arg(long, value_parser = parse_stride)]
    pub stride: Option<mimosar::ibp::Stride>,
}

fn parse_stride(s: &str) -> Result<mimosar::ibp::Stride, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [tx, rx, scan, freq] if parts.iter().all(|v| *v > 0) => Ok(mimosar::ibp::Stride { tx, rx, scan, freq }),
        _ => Err("expected four positive integers `tx,rx,scan,freq`".into()),
    }
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub echo: PathBuf,
    #[arg(long, value_enum)]
    pub algo: Algo,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Report image entropy (always computed; kept for script compatibility).
    #[arg(long)]
    pub entropy: bool,
    /// Compute entropy on one section `axis=index` instead of the volume.
    #[arg(long, value_parser = parse_section)]
    pub section: Option<(mimosar::metrics::ImageAxis, usize)>,
    /// Export one section `axis=index` as PNG (repeatable, needs --out-prefix).
    #[arg(long, value_parser = parse_section)]
    pub export_section: Vec<(mimosar::metrics::ImageAxis, usize)>,
    /// Axis for the maximum projection.
    #[arg(long)]
    pub projection: Option<mimosar::metrics::ImageAxis>,
    /// Displayed dynamic range in dB.
    #[arg(long, default_value_t = 30.0)]
    pub range: f64,
    /// Write `<prefix>.txt` and PNG rasters instead of printing only.
    #[arg(long)]
    pub out_prefix: Option<PathBuf>,
}

fn parse_section(s: &str) -> Result<(mimosar::metrics::ImageAxis, usize), String> {
    let (axis, index) = s.split_once('=').ok_or("expected `axis=index`")?;
    Ok((axis.parse()?, index.trim().parse().map_err(|e| format!("{e}"))?))
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub echo: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Algo::Dtfda, Algo::Enhanced])]
    pub algos: Vec<Algo>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            log::warn!("could not cap worker threads: {e}");
        }
    }

    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Compare(a) => commands::compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}

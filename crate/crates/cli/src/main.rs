use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod checks;
mod commands;
mod config;
#[cfg(test)]
mod tests;

use config::RunConfig;

/// Failure classes, one per exit code.
#[derive(Debug)]
pub enum CliError {
    Verification(String),
    Config(String),
    Mismatch(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) | CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Mismatch(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Mismatch(m) => write!(f, "input mismatch: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<diffblend::Error> for CliError {
    fn from(e: diffblend::Error) -> Self {
        use diffblend::Error as E;
        let msg = e.to_string();
        if e.is_numeric() {
            return CliError::Numeric(msg);
        }
        match e.root() {
            E::Io(_) => CliError::Io(msg),
            _ => CliError::Mismatch(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "diffblend", version, about = "Slice-blended diffusion reconstruction for 3D sparse-view CT")]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Single source of randomness for the command.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker thread cap.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Config override, repeatable: `--set recon.eta=0.5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic phantom.
    Phantom {
        /// Phantom spec (a config file using `phantom.*` keys).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate parallel-beam measurements of a volume.
    Project {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the geometry; defaults to `<out>.geom`.
        #[arg(long)]
        geometry_out: Option<PathBuf>,
    },
    /// Filtered backprojection baseline.
    Fbp {
        #[arg(long)]
        sino: PathBuf,
        #[arg(long)]
        geometry: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a patch denoiser on a phantom family or given volumes.
    Train {
        #[arg(long)]
        out: PathBuf,
        /// Loss curve; defaults to `<out>.loss.csv`.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        /// Training volumes; the configured phantom family when absent.
        #[arg(long, value_delimiter = ',')]
        data: Vec<PathBuf>,
    },
    /// Diffusion reconstruction. Without `--sino` the configured desk
    /// benchmark phantom is simulated and used as reference.
    Reconstruct {
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        views: Option<usize>,
        #[arg(long, requires = "geometry")]
        sino: Option<PathBuf>,
        #[arg(long)]
        geometry: Option<PathBuf>,
        /// Denoiser checkpoint; the fitted Gaussian oracle when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Metrics CSV; needs a reference.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Compare a volume against a reference.
    Eval {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the analytic verification suites.
    OracleCheck,
}

fn run(cli: Cli, w: &mut dyn Write, fault: bool) -> Result<(), CliError> {
    let mut cfg = match (&cli.command, &cli.config) {
        (Command::Phantom { spec: Some(s), .. }, None) => RunConfig::load(Some(s))?,
        (_, path) => RunConfig::load(path.as_deref())?,
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override {kv:?} is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.seed = cli.seed;
    cfg.threads = cli.threads.max(1);
    match cli.command {
        Command::Phantom { out, .. } => commands::phantom(w, &cfg, &out),
        Command::Project { input, out, geometry_out } => {
            let g = geometry_out.unwrap_or_else(|| commands::with_suffix(&out, "geom"));
            commands::project(w, &cfg, &input, &out, &g)
        }
        Command::Fbp { sino, geometry, out } => commands::fbp(w, &cfg, &sino, &geometry, &out),
        Command::Train { out, loss_csv, data } => {
            let l = loss_csv.unwrap_or_else(|| commands::with_suffix(&out, "loss.csv"));
            commands::train(w, &cfg, &data, &out, &l)
        }
        Command::Reconstruct {
            method,
            views,
            sino,
            geometry,
            checkpoint,
            reference,
            out,
            metrics,
            diagnostics,
        } => {
            if let Some(m) = method {
                cfg.set("recon.method", &m)?;
            }
            if let Some(v) = views {
                cfg.set("geometry.views", &v.to_string())?;
            }
            let paths = commands::ReconPaths {
                sino,
                geometry,
                checkpoint,
                reference,
                out,
                metrics,
                diagnostics,
            };
            commands::reconstruct(w, &cfg, &paths)
        }
        Command::Eval { input, reference, out } => commands::eval(w, &input, &reference, &out),
        Command::OracleCheck => checks::run_all(w, fault),
    }
}

fn main() -> ExitCode {
    let fault = std::env::var("DIFFBLEND_FAULT").is_ok_and(|v| v == "adjoint");
    let stdout = std::io::stdout();
    match run(Cli::parse(), &mut stdout.lock(), fault) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("diffblend: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

//! `ompath`: config-driven Onsager-Machlup experiments. Exit codes:
//! 0 success, 1 numerical/convergence failure, 2 usage error.

mod config;
mod run;

use clap::{Parser, Subcommand};
use ompath::OmError;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "ompath",
    version,
    about = "Onsager-Machlup functionals, most probable paths, and Monte Carlo \
             validation for second-order systems under fractional noise"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat key-value TOML config; flags override file keys.
    #[arg(long, global = true)]
    config: Option<String>,
    /// Output directory (default ompath-out).
    #[arg(long, global = true)]
    out: Option<String>,
    /// Cap on worker threads; results are independent of this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    force: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    k: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    sigma: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    sigma0: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    amp: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    omega: Option<f64>,
    #[arg(long, global = true, value_name = "HURST", allow_hyphen_values = true)]
    h: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    x0: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    y0: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    x1: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    y1: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    n_paths: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    epsilon: Option<f64>,
    /// Strictly decreasing small-ball radii.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    radii: Option<Vec<f64>>,
    #[arg(long, global = true)]
    tube_mode: Option<String>,
    #[arg(long, global = true)]
    center: Option<String>,
    #[arg(long, global = true)]
    path1: Option<String>,
    #[arg(long, global = true)]
    path2: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a model configuration against Assumption (A).
    Check,
    /// Compute the most probable transition path.
    Mpp,
    /// Simulate an ensemble of the degenerate SDE and write the mean path.
    Simulate,
    /// Estimate a tube probability around a reference path.
    Tube,
    /// Compare the MC tube-probability log-ratio with Delta J.
    Ratio,
    /// Small-ball scaling regression for the noise norm.
    Smallball,
    /// Run a canned reference experiment.
    Example {
        /// pendulum | duffing
        which: String,
    },
}

impl Cli {
    fn resolved_config(&self) -> Result<RunConfig, OmError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { cfg.$field = v.clone(); })*
            };
        }
        macro_rules! set_opt {
            ($($field:ident),*) => {
                $(if self.$field.is_some() { cfg.$field = self.$field.clone(); })*
            };
        }
        set!(force, gamma, sigma, sigma0, amp, omega, h, n, x0, y0, seed, n_paths);
        set!(tube_mode, center, path1, path2);
        set_opt!(k, beta, x1, y1, epsilon, out, threads);
        if let Some(r) = &self.radii {
            cfg.radii = r.clone();
        }
        Ok(cfg)
    }
}

fn dispatch(cli: &Cli, cfg: &RunConfig) -> Result<i32, OmError> {
    match &cli.command {
        Command::Check => run::cmd_check(cfg),
        Command::Mpp => run::cmd_mpp(cfg),
        Command::Simulate => run::cmd_simulate(cfg),
        Command::Tube => run::cmd_tube(cfg),
        Command::Ratio => run::cmd_ratio(cfg),
        Command::Smallball => run::cmd_smallball(cfg),
        Command::Example { which } => run::cmd_example(which, cfg),
    }
}

fn main() {
    let cli = Cli::parse();
    let code = (|| -> Result<i32, OmError> {
        let cfg = cli.resolved_config()?;
        if let Some(t) = cfg.threads {
            if t == 0 {
                return Err(OmError::invalid("threads must be positive"));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
                .map_err(|e| OmError::invalid(format!("thread pool setup failed: {e}")))?;
        }
        dispatch(&cli, &cfg)
    })()
    .unwrap_or_else(|e| {
        eprintln!("error: {e}");
        match e {
            OmError::InvalidArgument(_) => 2,
            OmError::NumericalFailure { .. } => 1,
        }
    });
    std::process::exit(code);
}

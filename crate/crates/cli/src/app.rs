//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;

use sepreg_core::problems::kl_decompose;
use sepreg_core::{Family, TikhonovVariant};

use crate::config::{parse_list, parse_usize_list, ExperimentConfig, ProblemKind};
use crate::experiment::{execute_baselines, execute_fit, execute_sample, execute_select, RunSummary};

#[derive(Parser)]
#[command(name = "sepreg", version, about = "Regularized low-rank separated surrogates")]
struct Cli {
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select (r, M) and fit a surrogate for every (N, seed).
    Fit(ExperimentArgs),
    /// Select (r, M) on a dataset file.
    Select(ExperimentArgs),
    /// Monte Carlo and polynomial chaos regression on the same datasets.
    Baselines(ExperimentArgs),
    /// Write the datasets of a built-in problem as CSV.
    Sample(ExperimentArgs),
    /// Print the KL eigenvalues of the Gaussian covariance.
    KlInfo(KlArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Hermite,
    Legendre,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Hermite => Family::HermiteProbabilists,
            FamilyArg::Legendre => Family::Legendre,
        }
    }
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    problem: Option<ProblemKind>,
    /// Sample sizes, e.g. `200,600` or `100-110`.
    #[arg(long)]
    n: Option<String>,
    /// Seeds, e.g. `0-4`.
    #[arg(long)]
    seeds: Option<String>,
    /// Ranks 1..=r_max are tried.
    #[arg(long)]
    r_max: Option<usize>,
    /// Fit this rank only, without selecting over ranks.
    #[arg(long, conflicts_with = "r_max")]
    rank: Option<usize>,
    #[arg(long)]
    m_grid: Option<String>,
    #[arg(long)]
    no_regularization: bool,
    /// Penalize with diag(s) instead of the second moment.
    #[arg(long)]
    l_identity: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    threads: Option<usize>,
    /// Leave wall_time_s empty so reruns are byte-identical.
    #[arg(long)]
    no_wall_time: bool,
    /// Dataset CSV (header y1..yd,u).
    #[arg(long, alias = "data")]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    /// Manufactured problem without measurement noise.
    #[arg(long)]
    noiseless: bool,
    #[arg(long)]
    reference_samples: Option<usize>,
    #[arg(long)]
    pc_degree: Option<usize>,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(p) = self.problem {
            c.problem = p;
        }
        if let Some(n) = &self.n {
            c.sample_sizes = parse_usize_list(n)?;
        }
        if let Some(s) = &self.seeds {
            c.seeds = parse_list(s)?;
        }
        if let Some(r) = self.r_max {
            if r == 0 {
                bail!("--r-max must be at least 1");
            }
            c.r_grid = (1..=r).collect();
        }
        if let Some(r) = self.rank {
            if r == 0 {
                bail!("--rank must be at least 1");
            }
            c.r_grid = vec![r];
        }
        if let Some(m) = &self.m_grid {
            c.m_grid = parse_usize_list(m)?;
        }
        if self.no_regularization {
            c.regularization = false;
        }
        if self.l_identity {
            c.tikhonov = TikhonovVariant::ScaledIdentity;
        }
        if let Some(o) = &self.out {
            c.output_dir = o.clone();
        }
        if let Some(t) = self.threads {
            c.threads = t;
        }
        if self.no_wall_time {
            c.record_wall_time = false;
        }
        if let Some(d) = &self.dataset {
            c.dataset = Some(d.clone());
            if self.problem.is_none() {
                c.problem = ProblemKind::ExternalDataset;
            }
        }
        if let Some(f) = self.family {
            c.family = Some(f.into());
        }
        if self.noiseless {
            c.noisy = false;
        }
        if let Some(n) = self.reference_samples {
            c.reference_samples = n;
        }
        if let Some(p) = self.pc_degree {
            c.pc_degree = Some(p);
        }
        Ok(c)
    }
}

#[derive(Args)]
struct KlArgs {
    #[arg(long, default_value_t = 1.0 / 14.0)]
    corr_length: f64,
    #[arg(long, default_value_t = 40)]
    dims: usize,
    #[arg(long, default_value_t = 512)]
    grid: usize,
}

#[derive(serde::Serialize)]
struct KlInfo {
    corr_length: f64,
    grid: usize,
    eigenvalues: Vec<f64>,
    trace: f64,
    energy_fraction: f64,
}

/// Exit code 0 on success, 2 when some runs failed, 1 on a fatal error.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "error",
        1 => "warn",
        2 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(cli.command) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failed) => {
            eprintln!("{failed} run(s) failed; see the report for details");
            ExitCode::from(2)
        }
        Err(e) => {
            error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn print_summary(summary: &RunSummary) {
    println!("config {}", summary.config_hash);
    if let Some(r) = &summary.reference {
        println!("reference ({}) mean {:.6e} std {:.6e}", r.source, r.mean, r.std);
    }
    for row in &summary.rows {
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3e}"));
        let int = |v: Option<usize>| v.map_or("-".to_string(), |v| v.to_string());
        println!(
            "N {:>6} seed {:>4} r {:>2} M {:>2} mean {} std {} mean_err {} std_err {}",
            row.n,
            row.seed,
            int(row.r),
            int(row.m),
            cell(row.mean_est),
            cell(row.std_est),
            cell(row.mean_rel_err),
            cell(row.std_rel_err)
        );
    }
}

fn dispatch(command: Command) -> Result<usize> {
    match command {
        Command::Fit(args) => {
            let summary = execute_fit(&args.resolve()?, args.force)?;
            print_summary(&summary);
            Ok(summary.failures.len())
        }
        Command::Baselines(args) => {
            let summary = execute_baselines(&args.resolve()?, args.force)?;
            print_summary(&summary);
            Ok(summary.failures.len())
        }
        Command::Sample(args) => {
            for path in execute_sample(&args.resolve()?, args.force)? {
                println!("{}", path.display());
            }
            Ok(0)
        }
        Command::Select(args) => {
            let mut config = args.resolve()?;
            config.problem = ProblemKind::ExternalDataset;
            let report = execute_select(&config, args.force)?;
            let entry = report.chosen_entry();
            println!(
                "r {} M {} ei_max {:.4e} mean {:.6e} std {:.6e}",
                entry.rank,
                entry.degree,
                entry.ei_max,
                report.chosen_model().mean(),
                report.chosen_model().std_dev()
            );
            Ok(report.failures.len())
        }
        Command::KlInfo(args) => {
            let kl = kl_decompose(args.corr_length, args.dims, args.grid)?;
            let info = KlInfo {
                corr_length: args.corr_length,
                grid: args.grid,
                eigenvalues: kl.eigenvalues.clone(),
                trace: kl.trace(),
                energy_fraction: kl.energy_fraction(),
            };
            println!("{}", serde_json::to_string_pretty(&info)?);
            Ok(0)
        }
    }
}


//! The `fit`, `baselines` and `sample` drivers and their output files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use sepreg_core::problems::baselines::total_degree_count;
use sepreg_core::problems::elliptic::EllipticSettings;
use sepreg_core::problems::{mc_estimate, pc_regression_baseline, EllipticProblem, ManufacturedSpec, Sampler};
use sepreg_core::{fit_fixed, select_model, FitConfig, SampleSet, SelectionReport, SeparatedModel};

use crate::config::{ExperimentConfig, ProblemKind};
use crate::dataset::{read_dataset, write_dataset};

pub const ERROR_COLUMNS: [&str; 10] = [
    "N",
    "seed",
    "r",
    "M",
    "mean_est",
    "std_est",
    "mean_rel_err",
    "std_rel_err",
    "ei_max",
    "wall_time_s",
];

/// Statistics the error columns are measured against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    /// `analytic`, `monte-carlo` or `user`.
    pub source: String,
    pub mean: f64,
    pub std: f64,
    pub stderr_mean: Option<f64>,
    pub stderr_std: Option<f64>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
}

/// One line of `errors.csv` and of the baseline files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub r: Option<usize>,
    #[serde(rename = "M")]
    pub m: Option<usize>,
    pub mean_est: Option<f64>,
    pub std_est: Option<f64>,
    pub mean_rel_err: Option<f64>,
    pub std_rel_err: Option<f64>,
    pub ei_max: Option<f64>,
    pub wall_time_s: Option<f64>,
}

impl ErrorRow {
    fn empty(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            r: None,
            m: None,
            mean_est: None,
            std_est: None,
            mean_rel_err: None,
            std_rel_err: None,
            ei_max: None,
            wall_time_s: None,
        }
    }

    fn with_estimates(mut self, mean: f64, std: f64, reference: Option<&Reference>) -> Self {
        self.mean_est = Some(mean);
        self.std_est = Some(std);
        if let Some(r) = reference {
            self.mean_rel_err = Some(relative_error(mean, r.mean));
            self.std_rel_err = Some(relative_error(std, r.std));
        }
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            bail!("row with N = 0");
        }
        let fields = [
            ("mean_est", self.mean_est),
            ("std_est", self.std_est),
            ("mean_rel_err", self.mean_rel_err),
            ("std_rel_err", self.std_rel_err),
            ("wall_time_s", self.wall_time_s),
        ];
        for (name, v) in fields {
            if let Some(v) = v {
                if !v.is_finite() {
                    bail!("N = {}, seed = {}: {name} is {v}", self.n, self.seed);
                }
            }
        }
        if let Some(ei) = self.ei_max {
            if ei.is_nan() || ei < 0.0 {
                bail!("N = {}, seed = {}: ei_max is {ei}", self.n, self.seed);
            }
        }
        Ok(())
    }
}

pub fn relative_error(estimate: f64, reference: f64) -> f64 {
    (estimate - reference).abs() / reference.abs()
}

/// A run that produced no estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub method: String,
    pub message: String,
}

pub enum Problem {
    Manufactured(ManufacturedSpec),
    Elliptic(Box<EllipticProblem>),
    External(SampleSet),
}

impl Problem {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        Ok(match config.problem {
            ProblemKind::Manufactured => Problem::Manufactured(ManufacturedSpec {
                noisy: config.noisy,
                ..ManufacturedSpec::default()
            }),
            ProblemKind::Elliptic => {
                Problem::Elliptic(Box::new(EllipticProblem::new(EllipticSettings::default())?))
            }
            ProblemKind::ExternalDataset => {
                let path = config.dataset.as_ref().ok_or_else(|| anyhow!("no dataset path"))?;
                let family = config.family.ok_or_else(|| anyhow!("no input family"))?;
                Problem::External(read_dataset(path, family)?)
            }
        })
    }

    /// The first `n` samples of stream `seed`; an external dataset ignores the seed.
    pub fn data(&self, n: usize, seed: u64) -> Result<SampleSet> {
        Ok(match self {
            Problem::Manufactured(spec) => spec.sample(n, seed)?,
            Problem::Elliptic(p) => p.sample(n, seed)?,
            Problem::External(data) => {
                if n > data.len() {
                    bail!("dataset has {} rows, {n} requested", data.len());
                }
                data.head(n)?
            }
        })
    }

    pub fn reference(&self, config: &ExperimentConfig) -> Result<Option<Reference>> {
        Ok(match self {
            Problem::Manufactured(spec) => Some(Reference {
                source: "analytic".into(),
                mean: spec.mean(),
                std: spec.std_dev(),
                stderr_mean: None,
                stderr_std: None,
                samples: None,
                seed: None,
            }),
            Problem::Elliptic(p) => Some(elliptic_reference(p, config.reference_samples, config.reference_seed)?),
            Problem::External(_) => config.known_statistics.map(|k| Reference {
                source: "user".into(),
                mean: k.mean,
                std: k.std,
                stderr_mean: None,
                stderr_std: None,
                samples: None,
                seed: None,
            }),
        })
    }
}

/// Monte Carlo reference for the elliptic problem; samples are solved in
/// parallel but reduced in index order.
pub fn elliptic_reference(problem: &EllipticProblem, n: usize, seed: u64) -> Result<Reference> {
    info!("computing a {n}-sample Monte Carlo reference");
    let values: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|j| problem.sample_one(seed, j).map(|s| s.1))
        .collect::<std::result::Result<_, _>>()?;
    let est = mc_estimate(&values)?;
    Ok(Reference {
        source: "monte-carlo".into(),
        mean: est.mean,
        std: est.std,
        stderr_mean: Some(est.stderr_mean),
        stderr_std: Some(est.stderr_std),
        samples: Some(n),
        seed: Some(seed),
    })
}

pub fn fit_config(config: &ExperimentConfig, seed: u64) -> FitConfig {
    let mut fit = FitConfig::new(config.r_max(), config.m_grid.iter().copied().max().unwrap_or(1), seed);
    fit.regularize = config.regularization;
    fit.tikhonov = config.tikhonov;
    fit
}

/// Result of one `(N, seed)` selection.
pub struct FitRun {
    pub row: ErrorRow,
    pub model: Option<SeparatedModel>,
    pub selection: Option<SelectionReport>,
    pub failure: Option<RunFailure>,
}

pub fn fit_one(problem: &Problem, config: &ExperimentConfig, reference: Option<&Reference>, n: usize, seed: u64) -> FitRun {
    let start = Instant::now();
    let outcome = problem.data(n, seed).and_then(|data| {
        if config.regularization {
            let report = select_model(&data, &config.r_grid, &config.m_grid, &fit_config(config, seed))?;
            let model = report.chosen_model().clone();
            let ei = report.chosen_entry().ei_max;
            Ok((report.chosen, model, Some(ei), Some(report)))
        } else {
            // Validation guarantees a single pair here.
            let (r, m) = (config.r_grid[0], config.m_grid[0]);
            let (model, _) = fit_fixed(&data, r, &FitConfig::new(r, m, seed).unregularized(), seed)?;
            Ok(((r, m), model, None, None))
        }
    });
    let elapsed = start.elapsed().as_secs_f64();
    let mut row = ErrorRow::empty(n, seed);
    if config.record_wall_time {
        row.wall_time_s = Some(elapsed);
    }
    match outcome {
        Ok(((r, m), model, ei, selection)) => {
            let mut row = row.with_estimates(model.mean(), model.std_dev(), reference);
            row.r = Some(r);
            row.m = Some(m);
            row.ei_max = ei;
            FitRun {
                row,
                model: Some(model),
                selection,
                failure: None,
            }
        }
        Err(e) => {
            warn!("N = {n}, seed = {seed}: {e:#}");
            FitRun {
                row,
                model: None,
                selection: None,
                failure: Some(RunFailure {
                    n,
                    seed,
                    method: "separated".into(),
                    message: format!("{e:#}"),
                }),
            }
        }
    }
}

fn run_grid(config: &ExperimentConfig) -> Vec<(usize, u64)> {
    config
        .sample_sizes
        .iter()
        .flat_map(|&n| config.seeds.iter().map(move |&s| (n, s)))
        .collect()
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub command: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub sample_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub reference: Option<Reference>,
    pub rows: Vec<ErrorRow>,
    pub failures: Vec<RunFailure>,
}

/// Refuses to clobber earlier outputs unless `force` is set.
fn claim_outputs(dir: &Path, files: &[PathBuf], force: bool) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    if !force {
        if let Some(existing) = files.iter().find(|f| f.exists()) {
            bail!("refusing to overwrite {} (pass --force)", existing.display());
        }
    }
    Ok(())
}

/// Writes JSON and checks that it parses back to the same document.
pub fn write_json<T: Serialize + DeserializeOwned>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    let back: T = serde_json::from_str(&text).with_context(|| format!("validating {}", path.display()))?;
    if serde_json::to_string_pretty(&back)? != text {
        bail!("{} does not round-trip", path.display());
    }
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Writes rows under the fixed header and reads them back as a check.
pub fn write_rows(path: &Path, rows: &[ErrorRow]) -> Result<()> {
    for row in rows {
        row.validate()?;
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(ERROR_COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    drop(w);
    let back = read_rows(path)?;
    if back.len() != rows.len() || back.iter().zip(rows).any(|(a, b)| a != b) {
        bail!("{} does not read back to the rows written", path.display());
    }
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<ErrorRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != ERROR_COLUMNS {
        bail!("{}: header {:?} does not match {:?}", path.display(), header, ERROR_COLUMNS);
    }
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.with_context(|| format!("{} line {}", path.display(), i + 2)))
        .collect()
}

fn run_dir(out: &Path, n: usize, seed: u64) -> PathBuf {
    out.join("runs").join(format!("N{n}_seed{seed}"))
}

/// `fit`: model selection for every `(N, seed)`.
pub fn execute_fit(config: &ExperimentConfig, force: bool) -> Result<RunSummary> {
    config.validate()?;
    let out = &config.output_dir;
    let grid = run_grid(config);
    let mut files = vec![out.join("errors.csv"), out.join("report.json"), out.join("reference.json")];
    for &(n, s) in &grid {
        files.push(run_dir(out, n, s).join("model.json"));
    }
    claim_outputs(out, &files, force)?;

    let problem = Problem::build(config)?;
    let pool = thread_pool(config.threads)?;
    let (reference, runs) = pool.install(|| -> Result<_> {
        let reference = problem.reference(config)?;
        let runs: Vec<FitRun> = grid
            .par_iter()
            .map(|&(n, s)| fit_one(&problem, config, reference.as_ref(), n, s))
            .collect();
        Ok((reference, runs))
    })?;

    let hash = config.hash();
    if let Some(r) = &reference {
        write_json(&out.join("reference.json"), r)?;
    }
    for run in &runs {
        let dir = run_dir(out, run.row.n, run.row.seed);
        if let Some(model) = &run.model {
            fs::create_dir_all(&dir)?;
            write_json(&dir.join("model.json"), model)?;
        }
        if let Some(sel) = &run.selection {
            write_json(
                &dir.join("selection.json"),
                &RunSelection {
                    config_hash: hash.clone(),
                    n: run.row.n,
                    seed: run.row.seed,
                    selection: sel.clone(),
                },
            )?;
        }
    }
    let rows: Vec<ErrorRow> = runs.iter().map(|r| r.row.clone()).collect();
    write_rows(&out.join("errors.csv"), &rows)?;
    let summary = RunSummary {
        command: "fit".into(),
        config_hash: hash,
        config: config.clone(),
        sample_sizes: config.sample_sizes.clone(),
        seeds: config.seeds.clone(),
        reference,
        rows,
        failures: runs.into_iter().filter_map(|r| r.failure).collect(),
    };
    write_json(&out.join("report.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSelection {
    pub config_hash: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub selection: SelectionReport,
}

/// Largest total degree whose basis fits in `N` samples, preferring at
/// least two samples per coefficient.
pub fn auto_pc_degree(dims: usize, n: usize) -> Option<usize> {
    let fits = |factor: usize| (1..=8).rev().find(|&p| factor * total_degree_count(dims, p) <= n);
    fits(2).or_else(|| fits(1))
}

pub struct BaselineRuns {
    pub mc: Vec<ErrorRow>,
    pub pc: Vec<ErrorRow>,
    pub failures: Vec<RunFailure>,
}

pub fn baseline_one(
    problem: &Problem,
    config: &ExperimentConfig,
    reference: Option<&Reference>,
    n: usize,
    seed: u64,
) -> (ErrorRow, ErrorRow, Vec<RunFailure>) {
    let mut failures = Vec::new();
    let mut mc = ErrorRow::empty(n, seed);
    let mut pc = ErrorRow::empty(n, seed);
    let data = match problem.data(n, seed) {
        Ok(d) => d,
        Err(e) => {
            for method in ["mc", "pc"] {
                failures.push(RunFailure {
                    n,
                    seed,
                    method: method.into(),
                    message: format!("{e:#}"),
                });
            }
            return (mc, pc, failures);
        }
    };

    let start = Instant::now();
    match mc_estimate(data.outputs()) {
        Ok(est) => {
            mc = mc.with_estimates(est.mean, est.std, reference);
            if config.record_wall_time {
                mc.wall_time_s = Some(start.elapsed().as_secs_f64());
            }
        }
        Err(e) => failures.push(RunFailure {
            n,
            seed,
            method: "mc".into(),
            message: e.to_string(),
        }),
    }

    let start = Instant::now();
    let degree = config.pc_degree.or_else(|| auto_pc_degree(data.dims(), n));
    let fit = match degree {
        Some(p) => pc_regression_baseline(&data, p).map_err(anyhow::Error::from),
        None => Err(anyhow!(
            "N = {n} is below the {} coefficients of even a total-degree-1 basis",
            total_degree_count(data.dims(), 1)
        )),
    };
    match fit {
        Ok(fit) => {
            pc = pc.with_estimates(fit.mean, fit.std, reference);
            pc.m = Some(fit.total_degree);
            if config.record_wall_time {
                pc.wall_time_s = Some(start.elapsed().as_secs_f64());
            }
        }
        Err(e) => {
            warn!("PC baseline at N = {n}, seed = {seed}: {e:#}");
            failures.push(RunFailure {
                n,
                seed,
                method: "pc".into(),
                message: format!("{e:#}"),
            });
        }
    }
    (mc, pc, failures)
}

/// `baselines`: Monte Carlo and chaos regression on the same datasets.
pub fn execute_baselines(config: &ExperimentConfig, force: bool) -> Result<RunSummary> {
    config.validate()?;
    let out = &config.output_dir;
    let files = [
        out.join("baselines_mc.csv"),
        out.join("baselines_pc.csv"),
        out.join("baselines_report.json"),
        out.join("reference.json"),
    ];
    let problem = Problem::build(config)?;
    let grid = run_grid(config);
    let pool = thread_pool(config.threads)?;
    let reference_path = out.join("reference.json");
    // A reference written by an earlier `fit` with the same settings is reused.
    let cached = match (&problem, reference_path.exists()) {
        (Problem::Elliptic(_), true) => {
            let text = fs::read_to_string(&reference_path)?;
            let r: Reference = serde_json::from_str(&text)?;
            (r.samples == Some(config.reference_samples) && r.seed == Some(config.reference_seed)).then_some(r)
        }
        _ => None,
    };
    let claim: Vec<PathBuf> = files
        .iter()
        .filter(|f| !(cached.is_some() && **f == reference_path))
        .cloned()
        .collect();
    claim_outputs(out, &claim, force)?;

    let (reference, runs) = pool.install(|| -> Result<_> {
        let reference = match cached {
            Some(r) => Some(r),
            None => problem.reference(config)?,
        };
        let runs: Vec<_> = grid
            .par_iter()
            .map(|&(n, s)| baseline_one(&problem, config, reference.as_ref(), n, s))
            .collect();
        Ok((reference, runs))
    })?;

    let mut result = BaselineRuns {
        mc: Vec::new(),
        pc: Vec::new(),
        failures: Vec::new(),
    };
    for (mc, pc, f) in runs {
        result.mc.push(mc);
        result.pc.push(pc);
        result.failures.extend(f);
    }
    if let Some(r) = &reference {
        write_json(&reference_path, r)?;
    }
    write_rows(&out.join("baselines_mc.csv"), &result.mc)?;
    write_rows(&out.join("baselines_pc.csv"), &result.pc)?;
    let mut rows = result.mc.clone();
    rows.extend(result.pc.iter().cloned());
    let summary = RunSummary {
        command: "baselines".into(),
        config_hash: config.hash(),
        config: config.clone(),
        sample_sizes: config.sample_sizes.clone(),
        seeds: config.seeds.clone(),
        reference,
        rows,
        failures: result.failures,
    };
    write_json(&out.join("baselines_report.json"), &summary)?;
    Ok(summary)
}

/// `sample`: one CSV per `(N, seed)`.
pub fn execute_sample(config: &ExperimentConfig, force: bool) -> Result<Vec<PathBuf>> {
    config.validate()?;
    if config.problem == ProblemKind::ExternalDataset {
        bail!("sample needs a built-in problem");
    }
    let out = &config.output_dir;
    let grid = run_grid(config);
    let files: Vec<PathBuf> = grid
        .iter()
        .map(|&(n, s)| out.join(format!("data_N{n}_seed{s}.csv")))
        .collect();
    claim_outputs(out, &files, force)?;
    let problem = Problem::build(config)?;
    for (&(n, s), path) in grid.iter().zip(&files) {
        write_dataset(path, &problem.data(n, s)?)?;
    }
    Ok(files)
}

/// `select`: model selection on a whole dataset file.
pub fn execute_select(config: &ExperimentConfig, force: bool) -> Result<SelectionReport> {
    config.validate()?;
    if !config.regularization {
        bail!("select ranks pairs by the error indicator, which needs regularization; use fit --dataset instead");
    }
    let path = config.dataset.as_ref().ok_or_else(|| anyhow!("select needs --dataset"))?;
    let family = config.family.ok_or_else(|| anyhow!("select needs --family"))?;
    let data = read_dataset(path, family)?;
    let out = &config.output_dir;
    claim_outputs(out, &[out.join("selection.json"), out.join("model.json")], force)?;
    let seed = config.seeds[0];
    let report = select_model(&data, &config.r_grid, &config.m_grid, &fit_config(config, seed))?;
    write_json(&out.join("model.json"), report.chosen_model())?;
    write_json(
        &out.join("selection.json"),
        &RunSelection {
            config_hash: config.hash(),
            n: data.len(),
            seed,
            selection: report.clone(),
        },
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auto_degree_prefers_two_samples_per_coefficient() {
        assert_eq!(auto_pc_degree(10, 1000), Some(3));
        assert_eq!(auto_pc_degree(40, 600), Some(1));
        assert_eq!(auto_pc_degree(40, 60), Some(1));
        assert_eq!(auto_pc_degree(40, 30), None);
    }

    #[test]
    fn relative_errors() {
        assert_eq!(relative_error(1.1, 1.0), 0.10000000000000009);
        assert_eq!(relative_error(-0.5, -1.0), 0.5);
    }
}

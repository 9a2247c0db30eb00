//! Choice of the separation rank `r` and degree `M` by the smallest
//! `EI_max`, the largest error indicator over the last sweep at each rank.

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::als::{fit_ranks, max_indicator, FitConfig, FitDiagnostics};
use crate::error::{Error, Result};
use crate::model::{SampleSet, SeparatedModel};

/// `EI_max` of rank `r`: the largest indicator over the final sweep.
pub fn ei_max_for_rank(diagnostics: &FitDiagnostics, r: usize) -> Result<f64> {
    let rank = diagnostics.rank(r).ok_or(Error::MissingRecords(r))?;
    if rank.final_sweep.is_empty() {
        return Err(Error::MissingRecords(r));
    }
    Ok(max_indicator(&rank.final_sweep))
}

/// Seed of the fit at degree `degree`, derived from the base seed.
pub fn degree_seed(base: u64, degree: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ (degree as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEntry {
    pub rank: usize,
    pub degree: usize,
    #[serde(with = "crate::serde_float")]
    pub ei_max: f64,
    #[serde(with = "crate::serde_float")]
    pub residual_norm: f64,
    pub sweeps: usize,
    pub init_seed: u64,
    pub model: Option<SeparatedModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeFailure {
    pub degree: usize,
    pub completed_ranks: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub base_seed: u64,
    pub r_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    /// Grid order: `M` outer, `r` inner.
    pub entries: Vec<SelectionEntry>,
    pub failures: Vec<DegreeFailure>,
    /// `(r, M)`.
    pub chosen: (usize, usize),
}

impl SelectionReport {
    pub fn entry(&self, r: usize, m: usize) -> Option<&SelectionEntry> {
        self.entries.iter().find(|e| e.rank == r && e.degree == m)
    }

    pub fn chosen_entry(&self) -> &SelectionEntry {
        self.entry(self.chosen.0, self.chosen.1)
            .expect("chosen pair is always in the grid")
    }

    pub fn chosen_model(&self) -> &SeparatedModel {
        self.chosen_entry()
            .model
            .as_ref()
            .expect("chosen pair always has a finite indicator and a model")
    }
}

/// Smallest finite `EI_max`, ties to smaller `r` then smaller `M`.
pub fn argmin_pair(entries: &[SelectionEntry]) -> Option<(usize, usize)> {
    entries
        .iter()
        .filter(|e| e.ei_max.is_finite())
        .min_by(|a, b| {
            a.ei_max
                .total_cmp(&b.ei_max)
                .then(a.rank.cmp(&b.rank))
                .then(a.degree.cmp(&b.degree))
        })
        .map(|e| (e.rank, e.degree))
}

fn validate_grid(name: &str, grid: &[usize]) -> Result<Vec<usize>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} is empty")));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    Ok(sorted)
}

/// Runs one fit at degree `M`, returning one entry per rank of `r_grid`.
pub fn fit_degree(
    data: &SampleSet,
    r_grid: &[usize],
    degree: usize,
    config: &FitConfig,
) -> Result<(Vec<SelectionEntry>, Option<DegreeFailure>)> {
    let r_max = *r_grid.iter().max().ok_or(Error::InvalidArgument("r_grid is empty".into()))?;
    let seed = degree_seed(config.rng_seed, degree);
    let cfg = FitConfig {
        rank_max: r_max,
        degree,
        ..config.clone()
    };
    let diagnostics = fit_ranks(data, r_max, &cfg, seed)?;
    let entries = r_grid
        .iter()
        .map(|&r| match diagnostics.rank(r) {
            Some(rank) => SelectionEntry {
                rank: r,
                degree,
                ei_max: ei_max_for_rank(&diagnostics, r).unwrap_or(f64::INFINITY),
                residual_norm: rank.residual_norm(),
                sweeps: rank.sweeps,
                init_seed: seed,
                model: Some(rank.model.clone()),
            },
            None => SelectionEntry {
                rank: r,
                degree,
                ei_max: f64::INFINITY,
                residual_norm: f64::NAN,
                sweeps: 0,
                init_seed: seed,
                model: None,
            },
        })
        .collect();
    let failure = diagnostics.failure.map(|message| DegreeFailure {
        degree,
        completed_ranks: diagnostics.ranks.len(),
        message,
    });
    Ok((entries, failure))
}

/// Fits every degree of `m_grid` up to the largest rank of `r_grid` and
/// picks the pair with the smallest `EI_max`.
pub fn select_model(data: &SampleSet, r_grid: &[usize], m_grid: &[usize], config: &FitConfig) -> Result<SelectionReport> {
    let per_degree = |m: usize| fit_degree(data, r_grid, m, config);
    select_with(r_grid, m_grid, config, per_degree)
}

/// [`select_model`] with a caller-supplied per-degree fit, so the degrees
/// can be fitted concurrently; results are assembled in grid order.
pub fn select_with<F>(r_grid: &[usize], m_grid: &[usize], config: &FitConfig, fit: F) -> Result<SelectionReport>
where
    F: Fn(usize) -> Result<(Vec<SelectionEntry>, Option<DegreeFailure>)>,
{
    let r_grid = validate_grid("r_grid", r_grid)?;
    let m_grid = validate_grid("m_grid", m_grid)?;
    if r_grid[0] == 0 {
        return Err(Error::InvalidArgument("ranks must be >= 1".into()));
    }
    let mut entries = Vec::with_capacity(r_grid.len() * m_grid.len());
    let mut failures = Vec::new();
    for &m in &m_grid {
        match fit(m) {
            Ok((e, f)) => {
                entries.extend(e);
                failures.extend(f);
            }
            Err(err) => {
                warn!("degree {m} failed: {err}");
                failures.push(DegreeFailure {
                    degree: m,
                    completed_ranks: 0,
                    message: err.to_string(),
                });
                entries.extend(r_grid.iter().map(|&r| SelectionEntry {
                    rank: r,
                    degree: m,
                    ei_max: f64::INFINITY,
                    residual_norm: f64::NAN,
                    sweeps: 0,
                    init_seed: degree_seed(config.rng_seed, m),
                    model: None,
                }));
            }
        }
    }
    let chosen = argmin_pair(&entries).ok_or(Error::SelectionFailure)?;
    info!("selected r = {}, M = {}", chosen.0, chosen.1);
    Ok(SelectionReport {
        base_seed: config.rng_seed,
        r_grid,
        m_grid,
        entries,
        failures,
        chosen,
    })
}

//! Experiment configuration: a JSON file, with command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sepreg_core::{Family, TikhonovVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Manufactured,
    Elliptic,
    ExternalDataset,
}

/// Known mean and standard deviation of an external dataset's output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnownStatistics {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub sample_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub r_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    pub regularization: bool,
    pub tikhonov: TikhonovVariant,
    pub output_dir: PathBuf,
    /// Add measurement noise to the manufactured function.
    pub noisy: bool,
    /// CSV file for `external-dataset`.
    pub dataset: Option<PathBuf>,
    /// Input family of an external dataset.
    pub family: Option<Family>,
    /// Reference statistics of an external dataset, if known.
    pub known_statistics: Option<KnownStatistics>,
    /// Monte Carlo reference size for the elliptic problem.
    pub reference_samples: usize,
    pub reference_seed: u64,
    /// Total degree of the chaos baseline; chosen from N when absent.
    pub pc_degree: Option<usize>,
    pub threads: usize,
    pub record_wall_time: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: ProblemKind::Manufactured,
            sample_sizes: vec![1000],
            seeds: vec![0],
            r_grid: (1..=5).collect(),
            m_grid: vec![1, 2, 3, 4],
            regularization: true,
            tikhonov: TikhonovVariant::SecondMoment,
            output_dir: PathBuf::from("out"),
            noisy: true,
            dataset: None,
            family: None,
            known_statistics: None,
            reference_samples: 200_000,
            reference_seed: 0x00c0_ffee,
            pc_degree: None,
            threads: 1,
            record_wall_time: true,
        }
    }
}

/// Keys that do not change any number in the outputs.
const UNHASHED: [&str; 3] = ["output_dir", "threads", "record_wall_time"];

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_sizes.is_empty() || self.seeds.is_empty() || self.r_grid.is_empty() || self.m_grid.is_empty() {
            bail!("sample_sizes, seeds, r_grid and m_grid must all be non-empty");
        }
        if self.sample_sizes.contains(&0) {
            bail!("sample sizes must be positive");
        }
        if self.r_grid.contains(&0) {
            bail!("ranks must be at least 1");
        }
        if !self.regularization && (self.r_grid.len() > 1 || self.m_grid.len() > 1) {
            bail!("without regularization the error indicator is undefined; fix the pair with --rank and a single --m-grid value");
        }
        if self.threads == 0 {
            bail!("threads must be at least 1");
        }
        if self.problem == ProblemKind::ExternalDataset {
            if self.dataset.is_none() {
                bail!("external-dataset needs a dataset path");
            }
            if self.family.is_none() {
                bail!("external-dataset needs the input family (hermite or legendre)");
            }
        }
        if self.problem == ProblemKind::Elliptic && self.reference_samples < 2 {
            bail!("reference_samples must be at least 2");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of every setting that affects results.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            for key in UNHASHED {
                map.remove(key);
            }
        }
        let text = serde_json::to_string(&value).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn r_max(&self) -> usize {
        self.r_grid.iter().copied().max().unwrap_or(1)
    }
}

/// Parses `1,2,5` or a range `1-5`.
pub fn parse_list(text: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once('-') {
            let a: u64 = a.trim().parse().with_context(|| format!("bad range start in '{part}'"))?;
            let b: u64 = b.trim().parse().with_context(|| format!("bad range end in '{part}'"))?;
            if b < a {
                bail!("empty range '{part}'");
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().with_context(|| format!("cannot parse '{part}'"))?);
        }
    }
    if out.is_empty() {
        bail!("empty list '{text}'");
    }
    Ok(out)
}

pub fn parse_usize_list(text: &str) -> Result<Vec<usize>> {
    parse_list(text)?
        .into_iter()
        .map(|v| usize::try_from(v).context("value too large"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_and_ranges() {
        assert_eq!(parse_list("1,2, 5").unwrap(), vec![1, 2, 5]);
        assert_eq!(parse_list("0-3").unwrap(), vec![0, 1, 2, 3]);
        assert!(parse_list("3-1").is_err());
        assert!(parse_list("").is_err());
    }

    #[test]
    fn hash_ignores_output_location_and_threads() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            output_dir: "elsewhere".into(),
            threads: 8,
            record_wall_time: false,
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig {
            seeds: vec![1],
            ..a.clone()
        };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"problem": "elliptic", "sample_sizes": [200, 600]}"#).unwrap();
        assert_eq!(cfg.problem, ProblemKind::Elliptic);
        assert_eq!(cfg.sample_sizes, vec![200, 600]);
        assert_eq!(cfg.r_grid, vec![1, 2, 3, 4, 5]);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"unknown": 1}"#).is_err());
    }
}

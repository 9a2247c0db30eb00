//! Plain Monte Carlo and total-degree polynomial chaos regression.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Sampler;
use crate::basis::{BasisSpec, Family};
use crate::error::{Error, Result};
use crate::model::SampleSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation, `n - 1` denominator.
    pub std: f64,
    pub stderr_mean: f64,
    /// Delta-method standard error of `std` from the fourth central moment.
    pub stderr_std: f64,
}

pub fn mc_estimate(values: &[f64]) -> Result<McEstimate> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InvalidArgument("Monte Carlo needs at least two samples".into()));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / nf;
    let var = m2 / (nf - 1.0);
    let std = var.sqrt();
    let stderr_mean = std / nf.sqrt();
    let pop_var = m2 / nf;
    let var_of_var = ((m4 - pop_var * pop_var) / nf).max(0.0);
    let stderr_std = if std > 0.0 { var_of_var.sqrt() / (2.0 * std) } else { 0.0 };
    Ok(McEstimate {
        n,
        mean,
        std,
        stderr_mean,
        stderr_std,
    })
}

/// Monte Carlo statistics of `n` draws of `sampler` from stream `seed`.
pub fn mc_baseline<S: Sampler + ?Sized>(sampler: &S, n: usize, seed: u64) -> Result<McEstimate> {
    let data = sampler.sample(n, seed)?;
    mc_estimate(data.outputs())
}

/// Multi-indices `α ∈ ℕ^d` with `|α|₁ ≤ p`, in graded order, stored sparsely
/// as `(dimension, degree)` pairs.
pub fn total_degree_indices(d: usize, p: usize) -> Vec<Vec<(usize, usize)>> {
    let mut out = vec![Vec::new()];
    for total in 1..=p {
        let mut current = Vec::new();
        extend_indices(d, 0, total, &mut current, &mut out);
    }
    out
}

fn extend_indices(d: usize, start: usize, remaining: usize, current: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
    if remaining == 0 {
        out.push(current.clone());
        return;
    }
    for k in start..d {
        for deg in (1..=remaining).rev() {
            current.push((k, deg));
            extend_indices(d, k + 1, remaining - deg, current, out);
            current.pop();
        }
    }
}

/// `binomial(d + p, p)` without overflow for the sizes used here.
pub fn total_degree_count(d: usize, p: usize) -> usize {
    let mut c: u128 = 1;
    for i in 1..=p as u128 {
        c = c * (d as u128 + i) / i;
    }
    c as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcFit {
    pub family: Family,
    pub total_degree: usize,
    pub indices: Vec<Vec<(usize, usize)>>,
    pub coefficients: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl PcFit {
    pub fn evaluate(&self, y: &[f64]) -> Result<f64> {
        let spec = BasisSpec::new(self.family, self.total_degree);
        let psi: Vec<Vec<f64>> = y.iter().map(|&v| spec.eval(v)).collect::<Result<_>>()?;
        Ok(self
            .indices
            .iter()
            .zip(&self.coefficients)
            .map(|(idx, c)| c * idx.iter().map(|&(k, deg)| psi[k][deg]).product::<f64>())
            .sum())
    }
}

/// Least-squares fit of the orthonormal total-degree-`p` basis.
pub fn pc_regression_baseline(data: &SampleSet, p: usize) -> Result<PcFit> {
    let d = data.dims();
    let count = total_degree_count(d, p);
    let n = data.len();
    if n < count {
        return Err(Error::TooFewSamples {
            samples: n,
            unknowns: count,
        });
    }
    if n < 2 * count {
        warn!("polynomial chaos fit with {n} samples for {count} coefficients is nearly square");
    }
    let indices = total_degree_indices(d, p);
    debug_assert_eq!(indices.len(), count);
    let spec = BasisSpec::new(data.family(), p);
    let mut psi = vec![0.0; d * (p + 1)];
    let mut phi = DMatrix::zeros(n, count);
    for j in 0..n {
        for k in 0..d {
            BasisSpec::fill_unchecked(spec.family, data.input(j, k), &mut psi[k * (p + 1)..(k + 1) * (p + 1)]);
        }
        for (col, idx) in indices.iter().enumerate() {
            phi[(j, col)] = idx.iter().map(|&(k, deg)| psi[k * (p + 1) + deg]).product::<f64>();
        }
    }
    let svd = phi.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::Conditioning {
            min_eigenvalue: smin * smin,
        });
    }
    let u = DVector::from_column_slice(data.outputs());
    let coef = svd
        .solve(&u, 0.0)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let coefficients: Vec<f64> = coef.iter().copied().collect();
    let mean = coefficients[0];
    let std = coefficients[1..].iter().map(|c| c * c).sum::<f64>().sqrt();
    Ok(PcFit {
        family: data.family(),
        total_degree: p,
        indices,
        coefficients,
        mean,
        std,
    })
}

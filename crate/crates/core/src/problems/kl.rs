//! Karhunen–Loève modes of the Gaussian kernel `exp(-(x1 - x2)² / l_c²)` on
//! `(0, 1)`, by the Nyström method on a Gauss–Legendre grid.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::basis::{gauss_rule, Family};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlExpansion {
    pub corr_length: f64,
    /// Grid nodes on `(0, 1)`.
    pub nodes: Vec<f64>,
    /// Grid weights, summing to one.
    pub weights: Vec<f64>,
    /// Every Nyström eigenvalue, non-increasing.
    pub all_eigenvalues: Vec<f64>,
    /// The leading `d` eigenvalues.
    pub eigenvalues: Vec<f64>,
    /// `modes[k][j] = φ_k(nodes[j])`.
    pub modes: Vec<Vec<f64>>,
}

pub fn gaussian_kernel(x1: f64, x2: f64, corr_length: f64) -> f64 {
    let t = (x1 - x2) / corr_length;
    (-t * t).exp()
}

/// Leading `d` modes on an `n_grid`-point grid.
pub fn kl_decompose(corr_length: f64, d: usize, n_grid: usize) -> Result<KlExpansion> {
    if !(corr_length > 0.0 && corr_length.is_finite()) {
        return Err(Error::InvalidArgument(format!("correlation length {corr_length}")));
    }
    if d == 0 || n_grid < 4 * d {
        return Err(Error::InvalidArgument(format!(
            "n_grid = {n_grid} must be at least 4 d = {}",
            4 * d
        )));
    }
    let rule = gauss_rule(Family::Legendre, n_grid)?;
    let nodes: Vec<f64> = rule.nodes.iter().map(|t| 0.5 * (t + 1.0)).collect();
    let weights = rule.weights.clone();
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();

    // W^{1/2} C W^{1/2}, symmetric.
    let m = DMatrix::from_fn(n_grid, n_grid, |i, j| {
        sw[i] * gaussian_kernel(nodes[i], nodes[j], corr_length) * sw[j]
    });
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n_grid).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let all_eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    let found = all_eigenvalues.iter().take_while(|&&g| g > 0.0).count();
    if found < d {
        return Err(Error::Resolution { found, wanted: d });
    }

    let modes = order[..d]
        .iter()
        .map(|&i| {
            let v = eig.eigenvectors.column(i);
            let mut phi: Vec<f64> = (0..n_grid).map(|j| v[j] / sw[j]).collect();
            // Sign: first clearly nonzero value from the left is positive.
            let peak = phi.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            if let Some(first) = phi.iter().find(|p| p.abs() > 1e-3 * peak) {
                if *first < 0.0 {
                    phi.iter_mut().for_each(|p| *p = -*p);
                }
            }
            phi
        })
        .collect();

    Ok(KlExpansion {
        corr_length,
        nodes,
        weights,
        eigenvalues: all_eigenvalues[..d].to_vec(),
        all_eigenvalues,
        modes,
    })
}

impl KlExpansion {
    pub fn dims(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `φ_k(x)` by Nyström interpolation, `(1/γ_k) Σ_j w_j C(x, x_j) φ_k(x_j)`.
    pub fn mode(&self, k: usize, x: f64) -> f64 {
        let s: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .zip(&self.modes[k])
            .map(|((&xj, &w), &p)| w * gaussian_kernel(x, xj, self.corr_length) * p)
            .sum();
        s / self.eigenvalues[k]
    }

    /// All `d` modes at `x`.
    pub fn modes_at(&self, x: f64) -> Vec<f64> {
        let kernel: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&xj, &w)| w * gaussian_kernel(x, xj, self.corr_length))
            .collect();
        self.modes
            .iter()
            .zip(&self.eigenvalues)
            .map(|(phi, g)| kernel.iter().zip(phi).map(|(a, b)| a * b).sum::<f64>() / g)
            .collect()
    }

    /// `Σ_k γ_k` over the whole grid; tends to `∫ C(x, x) dx = 1`.
    pub fn trace(&self) -> f64 {
        self.all_eigenvalues.iter().sum()
    }

    /// Fraction of the trace carried by the leading `d` modes.
    pub fn energy_fraction(&self) -> f64 {
        self.eigenvalues.iter().sum::<f64>() / self.trace()
    }
}

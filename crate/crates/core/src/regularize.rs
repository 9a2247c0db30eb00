//! Tikhonov regularization of a direction solve.
//!
//! The penalty `‖L c‖²` is built so that it equals the second moment of the
//! current surrogate: `LᵀL = B` with
//!
//! ```text
//! B(l, l') = s_l s_l' Π_{i≠k} ⟨c_i^l, c_i^l'⟩ · I_{M+1}.
//! ```
//!
//! λ is picked by generalized cross validation on a log grid spanning the
//! generalized singular values of `(A, L)`. Since `L` is square and invertible
//! these are the singular values of `A L⁻¹`; after one thin QR of `A` and one
//! SVD of `R L⁻¹`, every grid point costs `O(p)`.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, SeparatedModel};

/// Which Tikhonov matrix to use in a regularized direction solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TikhonovVariant {
    /// Cholesky factor of the second-moment matrix `B`.
    #[default]
    SecondMoment,
    /// `diag(s_1..s_r) ⊗ I_{M+1}`; kept for comparison, it ignores the
    /// factors in the other directions.
    ScaledIdentity,
}

/// Outcome of regularizing one direction solve.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizationState {
    /// Upper-triangular Tikhonov matrix with `LᵀL = B`.
    pub cholesky_l: DMatrix<f64>,
    pub lambda: f64,
    pub sigma_hat: f64,
    /// `+∞` when the indicator is undefined.
    pub error_indicator: f64,
    pub hat_trace: f64,
    /// `‖L⁻¹‖₂`.
    pub l_inv_norm: f64,
}

/// Second-moment matrix of direction `k` (0-based).
pub fn build_b(model: &SeparatedModel, k: usize) -> DMatrix<f64> {
    let r = model.rank();
    let m1 = model.basis().len();
    let s = model.scales();
    let mut b = DMatrix::zeros(r * m1, r * m1);
    for l in 0..r {
        for lp in l..r {
            let mut w = s[l] * s[lp];
            for i in (0..model.dims()).filter(|&i| i != k) {
                w *= dot(model.factor(i, l), model.factor(i, lp));
            }
            for a in 0..m1 {
                b[(l * m1 + a, lp * m1 + a)] = w;
                b[(lp * m1 + a, l * m1 + a)] = w;
            }
        }
    }
    b
}

/// Upper-triangular `L` with `LᵀL = B`.
pub fn tikhonov_factor(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let min_eig = || {
        SymmetricEigen::new(b.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    };
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Tikhonov matrix"));
    }
    match b.clone().cholesky() {
        Some(chol) => {
            let l = chol.l().transpose();
            // A pivot that lost all significant digits to cancellation means B is
            // singular to working precision even though the factorization ran.
            let cancelled = (0..l.nrows()).any(|i| l[(i, i)] * l[(i, i)] <= 64.0 * f64::EPSILON * b[(i, i)]);
            if cancelled {
                return Err(Error::DegenerateModel {
                    min_eigenvalue: min_eig(),
                });
            }
            Ok(l)
        }
        None => Err(Error::DegenerateModel {
            min_eigenvalue: min_eig(),
        }),
    }
}

/// `diag(s_l)` repeated over the `M + 1` coefficients of each term.
pub fn scaled_identity(model: &SeparatedModel) -> DMatrix<f64> {
    let m1 = model.basis().len();
    let diag: Vec<f64> = model
        .scales()
        .iter()
        .flat_map(|&s| std::iter::repeat_n(s, m1))
        .collect();
    DMatrix::from_diagonal(&DVector::from_vec(diag))
}

/// Tikhonov matrix of direction `k` for the chosen variant.
pub fn tikhonov_matrix(model: &SeparatedModel, k: usize, variant: TikhonovVariant) -> Result<DMatrix<f64>> {
    match variant {
        TikhonovVariant::SecondMoment => tikhonov_factor(&build_b(model, k)),
        TikhonovVariant::ScaledIdentity => Ok(scaled_identity(model)),
    }
}

/// `‖L⁻¹‖₂` for an invertible upper-triangular `L`, through `L⁻¹` from a
/// triangular solve.
pub fn inverse_norm(l: &DMatrix<f64>) -> f64 {
    let n = l.nrows();
    let Some(inv) = l.solve_upper_triangular(&DMatrix::identity(n, n)) else {
        return f64::INFINITY;
    };
    if inv.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let gram = &inv * inv.transpose();
    SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .copied()
        .fold(0.0f64, f64::max)
        .sqrt()
}

/// Spectral data of `(A, L, u)` that makes the GCV function cheap to scan.
#[derive(Debug, Clone)]
pub struct GcvSpectrum {
    n: usize,
    /// Generalized singular values, descending.
    sigma: Vec<f64>,
    /// Projections of `Qᵀu` on the left singular vectors.
    beta: Vec<f64>,
    /// `‖u‖²` not reachable by `A` at any λ.
    floor: f64,
}

impl GcvSpectrum {
    pub fn new(a: &DMatrix<f64>, u: &DVector<f64>, l: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let p = a.ncols();
        if u.len() != n || l.nrows() != p || l.ncols() != p {
            return Err(Error::DimensionMismatch { expected: n, got: u.len() });
        }
        let qr = a.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let qtu = q.tr_mul(u);
        let floor = (u - &q * &qtu).norm_squared();
        // W = R L⁻¹, i.e. Wᵀ = L⁻ᵀ Rᵀ.
        let wt = l
            .tr_solve_upper_triangular(&r.transpose())
            .ok_or(Error::NonFinite("R L^-1"))?;
        let w = wt.transpose();
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("R L^-1"));
        }
        let svd = w.svd(true, false);
        let uw = svd.u.as_ref().expect("left vectors requested");
        let beta_full = uw.tr_mul(&qtu);
        let mut pairs: Vec<(f64, f64)> = svd
            .singular_values
            .iter()
            .copied()
            .zip(beta_full.iter().copied())
            .collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        // Part of Qᵀu outside the column space of U_W (only when N < p).
        let extra = (qtu.norm_squared() - beta_full.norm_squared()).max(0.0);
        Ok(Self {
            n,
            sigma: pairs.iter().map(|x| x.0).collect(),
            beta: pairs.iter().map(|x| x.1).collect(),
            floor: floor + extra,
        })
    }

    pub fn gamma_max(&self) -> f64 {
        self.sigma.first().copied().unwrap_or(0.0)
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.sigma
    }

    /// `tr(H_λ) = Σ σ²/(σ² + λ²)`.
    pub fn hat_trace(&self, lambda: f64) -> f64 {
        let l2 = lambda * lambda;
        self.sigma.iter().map(|s| s * s / (s * s + l2)).sum()
    }

    /// `‖A c_λ - u‖²`.
    pub fn residual_sq(&self, lambda: f64) -> f64 {
        let l2 = lambda * lambda;
        let filtered: f64 = self
            .sigma
            .iter()
            .zip(&self.beta)
            .map(|(s, b)| {
                let g = l2 / (s * s + l2);
                g * g * b * b
            })
            .sum();
        filtered + self.floor
    }

    pub fn gcv(&self, lambda: f64) -> f64 {
        let denom = self.n as f64 - self.hat_trace(lambda);
        self.n as f64 * self.residual_sq(lambda) / (denom * denom)
    }

    /// `grid_size` log-spaced values over `[1e-8 γ_max, γ_max]`, ascending.
    pub fn lambda_grid(&self, grid_size: usize) -> Vec<f64> {
        let top = self.gamma_max();
        if grid_size == 1 {
            return vec![top * 1e-8];
        }
        (0..grid_size)
            .map(|i| top * 10f64.powf(-8.0 + 8.0 * i as f64 / (grid_size - 1) as f64))
            .collect()
    }
}

/// Result of a GCV scan.
#[derive(Debug, Clone, PartialEq)]
pub struct GcvSelection {
    pub lambda: f64,
    pub hat_trace: f64,
    pub grid: Vec<f64>,
    pub gcv_values: Vec<f64>,
}

/// Scans GCV over the grid and returns the minimizer (first index on ties).
pub fn gcv_select_lambda(
    a: &DMatrix<f64>,
    u: &DVector<f64>,
    l: &DMatrix<f64>,
    grid_size: usize,
) -> Result<GcvSelection> {
    let spectrum = GcvSpectrum::new(a, u, l)?;
    select_from_spectrum(&spectrum, grid_size)
}

pub fn select_from_spectrum(spectrum: &GcvSpectrum, grid_size: usize) -> Result<GcvSelection> {
    if grid_size == 0 {
        return Err(Error::InvalidArgument("lambda grid must not be empty".into()));
    }
    if !(spectrum.gamma_max() > 0.0) || !spectrum.gamma_max().is_finite() {
        return Err(Error::GcvSelection);
    }
    let grid = spectrum.lambda_grid(grid_size);
    let gcv_values: Vec<f64> = grid.iter().map(|&lam| spectrum.gcv(lam)).collect();

    debug_assert!(grid.windows(2).all(|w| {
        let (a, b) = (spectrum.residual_sq(w[0]), spectrum.residual_sq(w[1]));
        b >= a - 1e-12 * a.max(f64::MIN_POSITIVE)
    }));

    let mut best: Option<usize> = None;
    for (i, v) in gcv_values.iter().enumerate() {
        if v.is_finite() && best.is_none_or(|b| *v < gcv_values[b]) {
            best = Some(i);
        }
    }
    let idx = best.ok_or(Error::GcvSelection)?;
    Ok(GcvSelection {
        lambda: grid[idx],
        hat_trace: spectrum.hat_trace(grid[idx]),
        grid,
        gcv_values,
    })
}

/// `σ̂ = sqrt(‖A c - u‖² / (N - tr H))`; `None` when `N ≤ tr H`.
pub fn sigma_hat(a: &DMatrix<f64>, u: &DVector<f64>, c: &DVector<f64>, hat_trace: f64) -> Option<f64> {
    sigma_hat_from_residual((a * c - u).norm_squared(), u.len(), hat_trace)
}

pub fn sigma_hat_from_residual(residual_sq: f64, n: usize, hat_trace: f64) -> Option<f64> {
    let dof = n as f64 - hat_trace;
    if dof > 0.0 && residual_sq.is_finite() {
        Some((residual_sq / dof).sqrt())
    } else {
        None
    }
}

/// `EI = √N λ⁻¹ ‖L⁻¹‖₂ σ̂ / ‖c_λ‖₂`, `+∞` when undefined.
pub fn error_indicator(lambda: f64, l_inv_norm: f64, sigma_hat: Option<f64>, c_norm: f64, n: usize) -> f64 {
    let Some(sigma) = sigma_hat else {
        warn!("error indicator undefined: N <= tr(H)");
        return f64::INFINITY;
    };
    if lambda <= 0.0 || c_norm <= 0.0 || !l_inv_norm.is_finite() {
        warn!("error indicator undefined (lambda = {lambda:e}, |c| = {c_norm:e})");
        return f64::INFINITY;
    }
    (n as f64).sqrt() / lambda * l_inv_norm * sigma / c_norm
}

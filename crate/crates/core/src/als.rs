//! Alternating least squares over the input directions.
//!
//! For direction `k` every other factor is frozen and the `r (M + 1)`
//! coefficients of `u_k^1..u_k^r` solve a linear least-squares problem with
//! design matrix
//!
//! ```text
//! A_k(j, (l, α)) = s_l ψ_α(y_k^(j)) Π_{i≠k} u_i^l(y_i^(j)).
//! ```
//!
//! After each solve the new factors are rescaled to unit empirical norm and the
//! norms are absorbed into `s_l`. A sweep visits `k = 1..d` once; the rank
//! grows by one fresh random term whenever sweeps stop reducing the residual.
//!
//! The exclusion products are kept as a running prefix (directions already
//! updated this sweep) times a suffix computed at the start of the sweep, so a
//! sweep costs `O(r d N)` for them and never divides by a factor value.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::model::{empirical_norm, SampleSet, SeparatedModel};
use crate::regularize::{
    error_indicator, inverse_norm, select_from_spectrum, sigma_hat_from_residual, tikhonov_matrix,
    GcvSpectrum, RegularizationState, TikhonovVariant,
};

pub const DEFAULT_INIT_SPREAD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub rank_max: usize,
    pub degree: usize,
    pub max_sweeps_per_rank: usize,
    /// A sweep that lowers `‖u - u_r‖_D` by less than this fraction ends the rank.
    pub sweep_tol: f64,
    pub regularize: bool,
    pub lambda_grid_size: usize,
    pub tikhonov: TikhonovVariant,
    /// New terms start at `ψ_0 + init_spread · z`, `z ~ N(0, I)`, in every
    /// direction; `None` draws all coefficients i.i.d. standard normal.
    pub init_spread: Option<f64>,
    pub rng_seed: u64,
}

impl FitConfig {
    pub fn new(rank_max: usize, degree: usize, rng_seed: u64) -> Self {
        Self {
            rank_max,
            degree,
            max_sweeps_per_rank: 50,
            sweep_tol: 1e-4,
            regularize: true,
            lambda_grid_size: 50,
            tikhonov: TikhonovVariant::SecondMoment,
            init_spread: Some(DEFAULT_INIT_SPREAD),
            rng_seed,
        }
    }

    pub fn unregularized(mut self) -> Self {
        self.regularize = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank_max == 0 {
            return Err(Error::InvalidArgument("rank_max must be >= 1".into()));
        }
        if self.max_sweeps_per_rank == 0 {
            return Err(Error::InvalidArgument("max_sweeps_per_rank must be >= 1".into()));
        }
        if !(self.sweep_tol > 0.0 && self.sweep_tol < 1.0) {
            return Err(Error::InvalidArgument(format!("sweep_tol {} not in (0, 1)", self.sweep_tol)));
        }
        if let Some(spread) = self.init_spread {
            if !(spread >= 0.0 && spread.is_finite()) {
                return Err(Error::InvalidArgument(format!("init_spread {spread} must be finite and >= 0")));
            }
        }
        if self.regularize && self.lambda_grid_size == 0 {
            return Err(Error::InvalidArgument("lambda_grid_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Cached per-sample basis and factor values for one data set.
#[derive(Debug, Clone)]
pub struct FitWorkspace {
    n: usize,
    dims: usize,
    m1: usize,
    rank: usize,
    outputs: DVector<f64>,
    /// `ψ_α(y_k^(j))` at `(k * n + j) * m1 + α`.
    basis_values: Vec<f64>,
    /// `u_k^l(y_k^(j))` at `(k * n + j) * rank + l`.
    factor_values: Vec<f64>,
}

impl FitWorkspace {
    pub fn new(data: &SampleSet, model: &SeparatedModel) -> Result<Self> {
        if data.dims() != model.dims() {
            return Err(Error::DimensionMismatch {
                expected: model.dims(),
                got: data.dims(),
            });
        }
        if data.family() != model.basis().family {
            return Err(Error::InvalidArgument(format!(
                "data drawn for the {} family but the model uses {}",
                data.family(),
                model.basis().family
            )));
        }
        let n = data.len();
        let dims = data.dims();
        let spec = model.basis();
        let m1 = spec.len();
        let mut basis_values = vec![0.0; dims * n * m1];
        for k in 0..dims {
            for j in 0..n {
                let o = (k * n + j) * m1;
                BasisSpec::fill_unchecked(spec.family, data.input(j, k), &mut basis_values[o..o + m1]);
            }
        }
        let mut ws = Self {
            n,
            dims,
            m1,
            rank: 0,
            outputs: DVector::from_column_slice(data.outputs()),
            basis_values,
            factor_values: Vec::new(),
        };
        ws.refresh_all(model);
        Ok(ws)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn outputs(&self) -> &DVector<f64> {
        &self.outputs
    }

    #[inline]
    fn psi(&self, k: usize, j: usize) -> &[f64] {
        let o = (k * self.n + j) * self.m1;
        &self.basis_values[o..o + self.m1]
    }

    #[inline]
    pub fn factor_value(&self, k: usize, j: usize, l: usize) -> f64 {
        self.factor_values[(k * self.n + j) * self.rank + l]
    }

    /// Recomputes every cached factor value (also after a rank change).
    pub fn refresh_all(&mut self, model: &SeparatedModel) {
        self.rank = model.rank();
        self.factor_values = vec![0.0; self.dims * self.n * self.rank];
        for k in 0..self.dims {
            self.refresh_direction(model, k);
        }
    }

    /// Recomputes the factor values of direction `k`.
    pub fn refresh_direction(&mut self, model: &SeparatedModel, k: usize) {
        debug_assert_eq!(self.rank, model.rank());
        for j in 0..self.n {
            let psi_o = (k * self.n + j) * self.m1;
            let psi = &self.basis_values[psi_o..psi_o + self.m1];
            let fo = (k * self.n + j) * self.rank;
            for l in 0..self.rank {
                self.factor_values[fo + l] = model.factor_value(k, l, psi);
            }
        }
    }

    /// `u_r(y^(j))` for every sample.
    pub fn predictions(&self, model: &SeparatedModel) -> Vec<f64> {
        (0..self.n)
            .map(|j| {
                (0..self.rank)
                    .map(|l| {
                        let mut p = model.scales()[l];
                        for k in 0..self.dims {
                            p *= self.factor_value(k, j, l);
                        }
                        p
                    })
                    .sum()
            })
            .collect()
    }

    /// `‖u - u_r‖_D`.
    pub fn residual_norm(&self, model: &SeparatedModel) -> f64 {
        let pred = self.predictions(model);
        let diff: Vec<f64> = pred.iter().zip(self.outputs.iter()).map(|(p, u)| u - p).collect();
        empirical_norm(&diff)
    }

    /// `Π_{i≠k} u_i^l(y_i^(j))`, laid out `j * rank + l`, by a direct loop.
    pub fn exclusion_products(&self, k: usize) -> Vec<f64> {
        let mut out = vec![1.0; self.n * self.rank];
        for i in (0..self.dims).filter(|&i| i != k) {
            for j in 0..self.n {
                for l in 0..self.rank {
                    out[j * self.rank + l] *= self.factor_value(i, j, l);
                }
            }
        }
        out
    }

    /// Suffix products `Π_{i>k} u_i^l`, one `n × rank` block per direction.
    fn suffix_products(&self) -> Vec<f64> {
        let block = self.n * self.rank;
        let mut suffix = vec![1.0; self.dims * block];
        for k in (0..self.dims.saturating_sub(1)).rev() {
            for j in 0..self.n {
                for l in 0..self.rank {
                    let idx = j * self.rank + l;
                    suffix[k * block + idx] = suffix[(k + 1) * block + idx] * self.factor_value(k + 1, j, l);
                }
            }
        }
        suffix
    }

    /// All exclusion products by prefix/suffix products, for every direction.
    pub fn exclusion_products_prefix_suffix(&self) -> Vec<Vec<f64>> {
        let block = self.n * self.rank;
        let suffix = self.suffix_products();
        let mut prefix = vec![1.0; block];
        let mut out = Vec::with_capacity(self.dims);
        for k in 0..self.dims {
            out.push(
                prefix
                    .iter()
                    .zip(&suffix[k * block..(k + 1) * block])
                    .map(|(a, b)| a * b)
                    .collect(),
            );
            self.extend_prefix(&mut prefix, k);
        }
        out
    }

    fn extend_prefix(&self, prefix: &mut [f64], k: usize) {
        for j in 0..self.n {
            for l in 0..self.rank {
                prefix[j * self.rank + l] *= self.factor_value(k, j, l);
            }
        }
    }

    /// Design matrix of direction `k` given its exclusion products.
    fn design_matrix(&self, model: &SeparatedModel, k: usize, exclusion: &[f64]) -> Result<DMatrix<f64>> {
        let r = self.rank;
        let m1 = self.m1;
        let scales = model.scales();
        let mut a = DMatrix::zeros(self.n, r * m1);
        for l in 0..r {
            for alpha in 0..m1 {
                let col = l * m1 + alpha;
                let mut column = a.column_mut(col);
                for j in 0..self.n {
                    column[j] = scales[l] * self.psi(k, j)[alpha] * exclusion[j * r + l];
                }
            }
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design matrix"));
        }
        Ok(a)
    }

    /// Empirical norms `‖u_k^l‖_D` of the current factors of direction `k`.
    fn factor_norms(&self, k: usize) -> Vec<f64> {
        let mut sums = vec![0.0; self.rank];
        for j in 0..self.n {
            for (l, s) in sums.iter_mut().enumerate() {
                let v = self.factor_value(k, j, l);
                *s += v * v;
            }
        }
        sums.iter().map(|s| (s / self.n as f64).sqrt()).collect()
    }
}

/// Design matrix `A_k` (0-based `k`) built from the cached factor values.
pub fn assemble_design_matrix(ws: &FitWorkspace, model: &SeparatedModel, k: usize) -> Result<DMatrix<f64>> {
    if k >= model.dims() {
        return Err(Error::DimensionMismatch {
            expected: model.dims(),
            got: k,
        });
    }
    if ws.rank != model.rank() {
        return Err(Error::InvalidArgument("workspace rank does not match the model".into()));
    }
    ws.design_matrix(model, k, &ws.exclusion_products(k))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSolveResult {
    /// Raw solution, ordered `(l, α)`, before normalization.
    pub coeffs: Vec<f64>,
    /// `None` in unregularized mode.
    pub regularization: Option<RegularizationState>,
    /// `‖A c - u‖₂ / √N`.
    pub residual_norm: f64,
}

/// Solves `(AᵀA + λ² LᵀL) c = Aᵀu` for direction `k`, with `λ` and `L`
/// from GCV and the configured Tikhonov matrix, or `λ = 0` when
/// regularization is off.
pub fn solve_direction(
    a: &DMatrix<f64>,
    u: &DVector<f64>,
    model: &SeparatedModel,
    k: usize,
    config: &FitConfig,
) -> Result<DirectionSolveResult> {
    let n = a.nrows();
    let ata = a.tr_mul(a);
    let atu = a.tr_mul(u);

    if !config.regularize {
        let c = solve_unregularized(&ata, &atu)?;
        let residual = (a * &c - u).norm();
        return Ok(DirectionSolveResult {
            coeffs: c.as_slice().to_vec(),
            regularization: None,
            residual_norm: residual / (n as f64).sqrt(),
        });
    }

    if config.tikhonov == TikhonovVariant::SecondMoment && model.is_degenerate() {
        return Err(Error::DegenerateModel { min_eigenvalue: 0.0 });
    }
    let l = tikhonov_matrix(model, k, config.tikhonov)?;
    let spectrum = GcvSpectrum::new(a, u, &l)?;
    let selection = select_from_spectrum(&spectrum, config.lambda_grid_size)?;
    let lambda = selection.lambda;
    let c = solve_normal_equation(&ata, &atu, &l, lambda);
    let residual_sq = (a * &c - u).norm_squared();
    let sigma = sigma_hat_from_residual(residual_sq, n, selection.hat_trace);
    let l_inv_norm = inverse_norm(&l);
    let ei = error_indicator(lambda, l_inv_norm, sigma, c.norm(), n);
    Ok(DirectionSolveResult {
        coeffs: c.as_slice().to_vec(),
        regularization: Some(RegularizationState {
            cholesky_l: l,
            lambda,
            sigma_hat: sigma.unwrap_or(f64::INFINITY),
            error_indicator: ei,
            hat_trace: selection.hat_trace,
            l_inv_norm,
        }),
        residual_norm: (residual_sq / n as f64).sqrt(),
    })
}

/// `(AᵀA + λ² LᵀL)⁻¹ Aᵀu` for a given `λ > 0` and invertible `L`.
pub fn tikhonov_solve(a: &DMatrix<f64>, u: &DVector<f64>, l: &DMatrix<f64>, lambda: f64) -> DVector<f64> {
    solve_normal_equation(&a.tr_mul(a), &a.tr_mul(u), l, lambda)
}

fn solve_normal_equation(ata: &DMatrix<f64>, atu: &DVector<f64>, l: &DMatrix<f64>, lambda: f64) -> DVector<f64> {
    let system = ata + l.tr_mul(l) * (lambda * lambda);
    solve_spd(&system, atu)
}

fn solve_unregularized(ata: &DMatrix<f64>, atu: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = ata.clone().cholesky() {
        return Ok(refine(ata, atu, chol.solve(atu), |r| chol.solve(r)));
    }
    let eig = SymmetricEigen::new(ata.clone());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let trace = ata.trace();
    if !(min > 1e-12 * trace) {
        return Err(Error::Conditioning { min_eigenvalue: min });
    }
    Ok(pseudo_solve(&eig, atu, 1e-12 * trace))
}

/// Cholesky solve of an SPD system; falls back to a thresholded eigen solve
/// when roundoff makes the factorization fail.
fn solve_spd(m: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if let Some(chol) = m.clone().cholesky() {
        return refine(m, b, chol.solve(b), |r| chol.solve(r));
    }
    warn!("Cholesky of the regularized normal matrix failed; using an eigen pseudo-solve");
    let eig = SymmetricEigen::new(m.clone());
    pseudo_solve(&eig, b, 1e-12 * m.trace())
}

/// One step of iterative refinement.
fn refine<F: Fn(&DVector<f64>) -> DVector<f64>>(m: &DMatrix<f64>, b: &DVector<f64>, x: DVector<f64>, solve: F) -> DVector<f64> {
    let r = b - m * &x;
    let dx = solve(&r);
    let refined = &x + dx;
    if (b - m * &refined).norm() < r.norm() {
        refined
    } else {
        x
    }
}

fn pseudo_solve(eig: &SymmetricEigen<f64, nalgebra::Dyn>, b: &DVector<f64>, threshold: f64) -> DVector<f64> {
    let proj = eig.eigenvectors.tr_mul(b);
    let scaled = DVector::from_iterator(
        proj.len(),
        proj.iter()
            .zip(eig.eigenvalues.iter())
            .map(|(p, &e)| if e > threshold { p / e } else { 0.0 }),
    );
    &eig.eigenvectors * scaled
}

/// Rescales the factors of direction `k` to unit empirical norm on `data`,
/// absorbing the norms into the scales.
pub fn normalize_direction(model: &SeparatedModel, k: usize, data: &SampleSet) -> Result<SeparatedModel> {
    let ws = FitWorkspace::new(data, model)?;
    let mut out = model.clone();
    normalize_in_place(&mut out, k, &ws.factor_norms(k))?;
    Ok(out)
}

fn normalize_in_place(model: &mut SeparatedModel, k: usize, norms: &[f64]) -> Result<()> {
    if let Some(l) = norms.iter().position(|&nrm| !(nrm > 0.0 && nrm.is_finite())) {
        return Err(Error::DegenerateFactor { dim: k, term: l });
    }
    for (l, &nrm) in norms.iter().enumerate() {
        model.scales_mut()[l] *= nrm;
        for c in model.factor_mut(k, l) {
            *c /= nrm;
        }
    }
    Ok(())
}

/// Summary of one direction solve, as persisted in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionRecord {
    pub direction: usize,
    pub lambda: f64,
    #[serde(with = "crate::serde_float")]
    pub sigma_hat: f64,
    #[serde(with = "crate::serde_float")]
    pub error_indicator: f64,
    #[serde(with = "crate::serde_float")]
    pub hat_trace: f64,
    #[serde(with = "crate::serde_float")]
    pub l_inv_norm: f64,
    pub residual_norm: f64,
}

impl DirectionRecord {
    fn from_solve(k: usize, solve: &DirectionSolveResult) -> Self {
        match &solve.regularization {
            Some(reg) => Self {
                direction: k,
                lambda: reg.lambda,
                sigma_hat: reg.sigma_hat,
                error_indicator: reg.error_indicator,
                hat_trace: reg.hat_trace,
                l_inv_norm: reg.l_inv_norm,
                residual_norm: solve.residual_norm,
            },
            None => Self {
                direction: k,
                lambda: 0.0,
                sigma_hat: f64::INFINITY,
                error_indicator: f64::INFINITY,
                hat_trace: f64::NAN,
                l_inv_norm: f64::INFINITY,
                residual_norm: solve.residual_norm,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub model: SeparatedModel,
    /// `‖u - u_r‖_D` after the sweep.
    pub residual_norm: f64,
    /// Residual after each direction solve, in order.
    pub direction_residuals: Vec<f64>,
    /// One entry per direction; `None` in unregularized mode.
    pub states: Vec<Option<RegularizationState>>,
    pub records: Vec<DirectionRecord>,
    /// Terms that had to be re-drawn after collapsing to zero.
    pub reinitialized: usize,
}

/// One pass over all directions, starting from `model`.
pub fn sweep(data: &SampleSet, model: &SeparatedModel, config: &FitConfig) -> Result<SweepOutcome> {
    let mut ws = FitWorkspace::new(data, model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    sweep_with(&mut ws, model.clone(), config, &mut rng)
}

pub(crate) fn sweep_with(
    ws: &mut FitWorkspace,
    mut model: SeparatedModel,
    config: &FitConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SweepOutcome> {
    let dims = model.dims();
    let block = ws.n * ws.rank;
    let mut suffix = ws.suffix_products();
    let mut prefix = vec![1.0; block];
    let mut states = Vec::with_capacity(dims);
    let mut records = Vec::with_capacity(dims);
    let mut direction_residuals = Vec::with_capacity(dims);
    let mut reinitialized = 0;
    let mut residual = f64::NAN;

    for k in 0..dims {
        let exclusion: Vec<f64> = prefix
            .iter()
            .zip(&suffix[k * block..(k + 1) * block])
            .map(|(a, b)| a * b)
            .collect();
        let a = ws.design_matrix(&model, k, &exclusion)?;
        let solve = solve_direction(&a, &ws.outputs, &model, k, config)?;
        residual = solve.residual_norm;
        direction_residuals.push(residual);
        records.push(DirectionRecord::from_solve(k, &solve));

        model.direction_mut(k).copy_from_slice(&solve.coeffs);
        ws.refresh_direction(&model, k);
        let norms = ws.factor_norms(k);
        let dead: Vec<usize> = (0..ws.rank).filter(|&l| !(norms[l] > 0.0 && norms[l].is_finite())).collect();
        if dead.is_empty() {
            normalize_in_place(&mut model, k, &norms)?;
            ws.refresh_direction(&model, k);
            ws.extend_prefix(&mut prefix, k);
        } else {
            // Keep the rank: re-draw collapsed terms and rebuild the running products.
            for &l in &dead {
                warn!("term {l} collapsed in direction {k}; reinitializing");
                let factors = random_factors(rng, dims, model.basis().len(), config.init_spread);
                for (i, f) in factors.iter().enumerate() {
                    model.factor_mut(i, l).copy_from_slice(f);
                }
                model.scales_mut()[l] = 1.0;
                reinitialized += 1;
            }
            for i in 0..dims {
                ws.refresh_direction(&model, i);
                normalize_in_place(&mut model, i, &ws.factor_norms(i))?;
                ws.refresh_direction(&model, i);
            }
            suffix = ws.suffix_products();
            prefix = vec![1.0; block];
            for i in 0..=k {
                ws.extend_prefix(&mut prefix, i);
            }
            residual = ws.residual_norm(&model);
        }
        states.push(solve.regularization);
    }

    Ok(SweepOutcome {
        model,
        residual_norm: residual,
        direction_residuals,
        states,
        records,
        reinitialized,
    })
}

fn random_factors(rng: &mut ChaCha8Rng, dims: usize, m1: usize, spread: Option<f64>) -> Vec<Vec<f64>> {
    (0..dims)
        .map(|_| {
            let mut c: Vec<f64> = (0..m1).map(|_| StandardNormal.sample(rng)).collect();
            if let Some(spread) = spread {
                c.iter_mut().for_each(|v| *v *= spread);
                c[0] += 1.0;
            }
            c
        })
        .collect()
}

/// Per-rank record of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDiagnostics {
    pub rank: usize,
    pub sweeps: usize,
    pub converged: bool,
    /// `‖u - u_r‖_D` after each sweep at this rank.
    pub residual_trace: Vec<f64>,
    /// Residual after every direction solve at this rank.
    #[serde(skip)]
    pub direction_residuals: Vec<f64>,
    /// The `d` direction solves of the final sweep at this rank.
    pub final_sweep: Vec<DirectionRecord>,
    #[serde(with = "crate::serde_float")]
    pub ei_max: f64,
    pub model: SeparatedModel,
}

impl RankDiagnostics {
    pub fn residual_norm(&self) -> f64 {
        self.residual_trace.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub init_seed: u64,
    pub ranks: Vec<RankDiagnostics>,
    /// Error that stopped the rank increase early, if any.
    pub failure: Option<String>,
}

impl FitDiagnostics {
    pub fn rank(&self, r: usize) -> Option<&RankDiagnostics> {
        self.ranks.iter().find(|d| d.rank == r)
    }
}

/// Largest of the final-sweep indicators.
pub(crate) fn max_indicator(records: &[DirectionRecord]) -> f64 {
    records.iter().map(|r| r.error_indicator).fold(f64::NEG_INFINITY, |a, b| {
        if a.is_nan() || b.is_nan() {
            f64::INFINITY
        } else {
            a.max(b)
        }
    })
}

/// Runs the rank-increase loop up to rank `r`, keeping whatever ranks
/// completed if a later one fails.
pub fn fit_ranks(data: &SampleSet, r: usize, config: &FitConfig, init_seed: u64) -> Result<FitDiagnostics> {
    config.validate()?;
    if r == 0 {
        return Err(Error::InvalidArgument("rank must be >= 1".into()));
    }
    let basis = BasisSpec::new(data.family(), config.degree);
    let unknowns = r * basis.len();
    if data.len() < unknowns {
        warn!(
            "N = {} samples for {} unknowns per direction; expect an ill-posed fit",
            data.len(),
            unknowns
        );
    }
    let dims = data.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);

    let first = random_factors(&mut rng, dims, basis.len(), config.init_spread).concat();
    let mut model = SeparatedModel::from_flat(basis, dims, vec![1.0], first)?;
    let mut ws = FitWorkspace::new(data, &model)?;
    normalize_all(&mut ws, &mut model)?;

    let mut diagnostics = FitDiagnostics {
        init_seed,
        ranks: Vec::with_capacity(r),
        failure: None,
    };
    let data_norm = empirical_norm(data.outputs());

    for rank in 1..=r {
        if rank > 1 {
            let factors = random_factors(&mut rng, dims, basis.len(), config.init_spread);
            model.push_term(1.0, &factors);
            ws.refresh_all(&model);
            if let Err(e) = normalize_all(&mut ws, &mut model) {
                diagnostics.failure = Some(e.to_string());
                break;
            }
        }
        match fit_at_rank(&mut ws, &mut model, config, &mut rng, data_norm) {
            Ok(rank_diag) => {
                debug!(
                    "rank {rank}: {} sweeps, residual {:e}, EI_max {:e}",
                    rank_diag.sweeps,
                    rank_diag.residual_norm(),
                    rank_diag.ei_max
                );
                diagnostics.ranks.push(rank_diag);
            }
            Err(e) => {
                warn!("fit stopped at rank {rank}: {e}");
                diagnostics.failure = Some(e.to_string());
                break;
            }
        }
    }
    Ok(diagnostics)
}

fn normalize_all(ws: &mut FitWorkspace, model: &mut SeparatedModel) -> Result<()> {
    for k in 0..model.dims() {
        normalize_in_place(model, k, &ws.factor_norms(k))?;
        ws.refresh_direction(model, k);
    }
    Ok(())
}

fn fit_at_rank(
    ws: &mut FitWorkspace,
    model: &mut SeparatedModel,
    config: &FitConfig,
    rng: &mut ChaCha8Rng,
    data_norm: f64,
) -> Result<RankDiagnostics> {
    let mut previous = ws.residual_norm(model);
    let mut trace = Vec::new();
    let mut direction_residuals = Vec::new();
    let mut records = Vec::new();
    let mut converged = false;

    for _ in 0..config.max_sweeps_per_rank {
        let before = previous;
        let outcome = sweep_with(ws, model.clone(), config, rng)?;
        if !config.regularize && outcome.reinitialized == 0 {
            let mut last = before;
            for &res in &outcome.direction_residuals {
                debug_assert!(
                    res <= last * (1.0 + 1e-10) + 1e-14 * data_norm,
                    "unregularized ALS residual increased: {last:e} -> {res:e}"
                );
                last = res;
            }
        }
        *model = outcome.model;
        direction_residuals.extend_from_slice(&outcome.direction_residuals);
        records = outcome.records;
        let residual = outcome.residual_norm;
        trace.push(residual);
        previous = residual;

        if residual <= 1e-14 * data_norm || before - residual < config.sweep_tol * before {
            converged = true;
            break;
        }
    }

    let ei_max = max_indicator(&records);
    Ok(RankDiagnostics {
        rank: model.rank(),
        sweeps: trace.len(),
        converged,
        residual_trace: trace,
        direction_residuals,
        final_sweep: records,
        ei_max,
        model: model.clone(),
    })
}

/// Fits a rank-`r` surrogate, growing the rank from one.
pub fn fit_fixed(
    data: &SampleSet,
    r: usize,
    config: &FitConfig,
    init_seed: u64,
) -> Result<(SeparatedModel, FitDiagnostics)> {
    let diagnostics = fit_ranks(data, r, config, init_seed)?;
    if let Some(msg) = &diagnostics.failure {
        return Err(failure_error(msg, &diagnostics));
    }
    let model = diagnostics
        .ranks
        .last()
        .map(|d| d.model.clone())
        .ok_or(Error::MissingRecords(1))?;
    Ok((model, diagnostics))
}

fn failure_error(msg: &str, diagnostics: &FitDiagnostics) -> Error {
    Error::InvalidArgument(format!(
        "fit failed after {} completed rank(s): {msg}",
        diagnostics.ranks.len()
    ))
}

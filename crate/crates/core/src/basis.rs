//! Orthonormal univariate polynomial families and their Gauss rules.
//!
//! Both families are evaluated through the three-term recurrence of the
//! orthonormal polynomials,
//!
//! ```text
//! y ψ_n(y) = b_{n+1} ψ_{n+1}(y) + b_n ψ_{n-1}(y),
//! ```
//!
//! so every iterate already has unit norm against the density and stays O(1)
//! on the bulk of the domain. Gauss rules come from the eigenvalues of the
//! Jacobi matrix built from the same `b_n` (Golub–Welsch), with a Newton
//! polish of the nodes and Christoffel-function weights.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polynomial family, tied to the density of the inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// Orthonormal w.r.t. the standard Gaussian density `exp(-y²/2)/√(2π)`.
    #[serde(rename = "hermite")]
    HermiteProbabilists,
    /// Orthonormal w.r.t. the uniform density `1/2` on `[-1, 1]`.
    #[serde(rename = "legendre")]
    Legendre,
}

impl Family {
    /// Off-diagonal entry `b_n` (n ≥ 1) of the Jacobi matrix.
    #[inline]
    fn jacobi_offdiag(self, n: usize) -> f64 {
        let n = n as f64;
        match self {
            Family::HermiteProbabilists => n.sqrt(),
            Family::Legendre => n / (4.0 * n * n - 1.0).sqrt(),
        }
    }

    pub fn check_domain(self, y: f64) -> Result<()> {
        if !y.is_finite() {
            return Err(Error::NonFinite("basis input"));
        }
        if self == Family::Legendre && !(-1.0..=1.0).contains(&y) {
            return Err(Error::Domain { value: y });
        }
        Ok(())
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::HermiteProbabilists => "hermite",
            Family::Legendre => "legendre",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hermite" | "hermite-probabilists" | "gaussian" => Ok(Family::HermiteProbabilists),
            "legendre" | "uniform" => Ok(Family::Legendre),
            other => Err(Error::InvalidArgument(format!("unknown basis family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub family: Family,
    pub max_degree: usize,
}

impl BasisSpec {
    pub fn new(family: Family, max_degree: usize) -> Self {
        Self { family, max_degree }
    }

    /// Number of basis functions, `M + 1`.
    #[inline]
    pub fn len(&self) -> usize {
        self.max_degree + 1
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Writes `ψ_0(y), …, ψ_{out.len()-1}(y)` into `out` without domain checks.
    pub fn fill_unchecked(family: Family, y: f64, out: &mut [f64]) {
        if out.is_empty() {
            return;
        }
        out[0] = 1.0;
        if out.len() == 1 {
            return;
        }
        out[1] = y / family.jacobi_offdiag(1);
        for n in 1..out.len() - 1 {
            let b_n = family.jacobi_offdiag(n);
            let b_next = family.jacobi_offdiag(n + 1);
            out[n + 1] = (y * out[n] - b_n * out[n - 1]) / b_next;
        }
    }

    /// Evaluates all `M + 1` basis functions at `y` into `out`.
    pub fn eval_into(&self, y: f64, out: &mut [f64]) -> Result<()> {
        self.family.check_domain(y)?;
        if out.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: out.len(),
            });
        }
        Self::fill_unchecked(self.family, y, out);
        Ok(())
    }

    pub fn eval(&self, y: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(y, &mut out)?;
        Ok(out)
    }
}

/// Values `ψ_0(y), …, ψ_M(y)` of the orthonormal family at `y`.
pub fn eval_basis(spec: BasisSpec, y: f64) -> Result<Vec<f64>> {
    spec.eval(y)
}

/// Gauss rule against the probability density of a family; weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ_i w_i f(x_i)`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// `n_points`-point Gauss rule for the density of `spec.family`, exact for
/// polynomials up to degree `2 n_points - 1`. The degree in `spec` is ignored.
pub fn gauss_quadrature(spec: BasisSpec, n_points: usize) -> Result<Quadrature> {
    gauss_rule(spec.family, n_points)
}

pub fn gauss_rule(family: Family, n_points: usize) -> Result<Quadrature> {
    if n_points == 0 {
        return Err(Error::InvalidArgument("quadrature needs at least one point".into()));
    }
    let n = n_points;
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let b = family.jacobi_offdiag(i);
        jacobi[(i, i - 1)] = b;
        jacobi[(i - 1, i)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.total_cmp(b));

    let mut psi = vec![0.0; n + 1];
    let mut dpsi = vec![0.0; n + 1];
    for x in nodes.iter_mut() {
        // A couple of Newton steps on ψ_n bring the eigenvalues to full accuracy.
        for _ in 0..3 {
            values_and_derivatives(family, *x, &mut psi, &mut dpsi);
            let step = psi[n] / dpsi[n];
            if !step.is_finite() {
                break;
            }
            *x -= step;
            if step.abs() <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
                break;
            }
        }
    }
    // Both densities are symmetric about zero.
    let mirrored: Vec<f64> = (0..n).map(|i| 0.5 * (nodes[i] - nodes[n - 1 - i])).collect();
    let nodes = mirrored;

    let mut weights = Vec::with_capacity(n);
    let mut vals = vec![0.0; n];
    for &x in &nodes {
        BasisSpec::fill_unchecked(family, x, &mut vals);
        let christoffel: f64 = vals.iter().map(|v| v * v).sum();
        weights.push(1.0 / christoffel);
    }
    Ok(Quadrature { nodes, weights })
}

fn values_and_derivatives(family: Family, y: f64, psi: &mut [f64], dpsi: &mut [f64]) {
    psi[0] = 1.0;
    dpsi[0] = 0.0;
    if psi.len() == 1 {
        return;
    }
    let b1 = family.jacobi_offdiag(1);
    psi[1] = y / b1;
    dpsi[1] = 1.0 / b1;
    for n in 1..psi.len() - 1 {
        let b_n = family.jacobi_offdiag(n);
        let b_next = family.jacobi_offdiag(n + 1);
        psi[n + 1] = (y * psi[n] - b_n * psi[n - 1]) / b_next;
        dpsi[n + 1] = (psi[n] + y * dpsi[n] - b_n * dpsi[n - 1]) / b_next;
    }
}

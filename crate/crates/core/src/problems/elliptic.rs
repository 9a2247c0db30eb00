//! `-(a(x, y) u')' = 1` on `(0, 1)`, `u(0) = u(1) = 0`, with
//!
//! ```text
//! a(x, y) = ā + σ_a Σ_k √γ_k φ_k(x) y_k,   y ~ U[-1, 1]^d,
//! ```
//!
//! solved by continuous finite elements on a uniform mesh.

use serde::{Deserialize, Serialize};

use super::kl::{kl_decompose, KlExpansion};
use super::{collect_samples, sample_rng, Sampler};
use crate::basis::{gauss_rule, Family};
use crate::error::{Error, Result};
use crate::model::{draw_input, SampleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElementOrder {
    Linear,
    Quadratic,
}

impl ElementOrder {
    fn degree(self) -> usize {
        match self {
            ElementOrder::Linear => 1,
            ElementOrder::Quadratic => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticSettings {
    pub corr_length: f64,
    pub dims: usize,
    pub mean_coeff: f64,
    pub sigma_a: f64,
    pub mesh_elements: usize,
    pub element_order: ElementOrder,
    pub kl_grid: usize,
    pub query_point: f64,
}

impl Default for EllipticSettings {
    fn default() -> Self {
        Self {
            corr_length: 1.0 / 14.0,
            dims: 40,
            mean_coeff: 0.1,
            sigma_a: 0.021,
            mesh_elements: 128,
            element_order: ElementOrder::Quadratic,
            kl_grid: 512,
            query_point: 0.5,
        }
    }
}

const GAUSS_POINTS: usize = 4;

#[derive(Debug, Clone)]
pub struct EllipticProblem {
    settings: EllipticSettings,
    kl: KlExpansion,
    /// Quadrature points, element by element.
    quad_x: Vec<f64>,
    /// Physical quadrature weights.
    quad_w: Vec<f64>,
    /// Reference coordinates in `[0, 1]` of the element rule.
    ref_xi: Vec<f64>,
    /// `σ_a √γ_k φ_k(x_q)` at `q * d + k`.
    coeff_table: Vec<f64>,
}

impl EllipticProblem {
    pub fn new(settings: EllipticSettings) -> Result<Self> {
        let kl = kl_decompose(settings.corr_length, settings.dims, settings.kl_grid)?;
        Self::with_kl(settings, kl)
    }

    /// Reuses an existing expansion, which must have `settings.dims` modes.
    pub fn with_kl(settings: EllipticSettings, kl: KlExpansion) -> Result<Self> {
        if kl.dims() != settings.dims {
            return Err(Error::DimensionMismatch {
                expected: settings.dims,
                got: kl.dims(),
            });
        }
        if settings.mesh_elements == 0 {
            return Err(Error::InvalidArgument("mesh needs at least one element".into()));
        }
        if !(0.0..=1.0).contains(&settings.query_point) {
            return Err(Error::InvalidArgument(format!(
                "query point {} outside [0, 1]",
                settings.query_point
            )));
        }
        let rule = gauss_rule(Family::Legendre, GAUSS_POINTS)?;
        let ref_xi: Vec<f64> = rule.nodes.iter().map(|t| 0.5 * (t + 1.0)).collect();
        let ne = settings.mesh_elements;
        let h = 1.0 / ne as f64;
        let mut quad_x = Vec::with_capacity(ne * GAUSS_POINTS);
        let mut quad_w = Vec::with_capacity(ne * GAUSS_POINTS);
        for e in 0..ne {
            let x0 = e as f64 * h;
            for (xi, w) in ref_xi.iter().zip(&rule.weights) {
                quad_x.push(x0 + h * xi);
                quad_w.push(h * w);
            }
        }
        let d = settings.dims;
        let amplitude: Vec<f64> = kl.eigenvalues.iter().map(|g| settings.sigma_a * g.sqrt()).collect();
        let mut coeff_table = Vec::with_capacity(quad_x.len() * d);
        for &x in &quad_x {
            let phi = kl.modes_at(x);
            coeff_table.extend(phi.iter().zip(&amplitude).map(|(p, a)| p * a));
        }
        Ok(Self {
            settings,
            kl,
            quad_x,
            quad_w,
            ref_xi,
            coeff_table,
        })
    }

    pub fn settings(&self) -> &EllipticSettings {
        &self.settings
    }

    pub fn kl(&self) -> &KlExpansion {
        &self.kl
    }

    /// `a(x, y)` at an arbitrary point.
    pub fn coefficient(&self, x: f64, y: &[f64]) -> f64 {
        let phi = self.kl.modes_at(x);
        self.settings.mean_coeff
            + self
                .kl
                .eigenvalues
                .iter()
                .zip(&phi)
                .zip(y)
                .map(|((g, p), yk)| self.settings.sigma_a * g.sqrt() * p * yk)
                .sum::<f64>()
    }

    fn check_input(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.settings.dims {
            return Err(Error::DimensionMismatch {
                expected: self.settings.dims,
                got: y.len(),
            });
        }
        for &v in y {
            Family::Legendre.check_domain(v)?;
        }
        Ok(())
    }

    /// `a` at every quadrature point of the mesh.
    pub fn coefficient_at_quadrature(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_input(y)?;
        let d = self.settings.dims;
        let mut a = Vec::with_capacity(self.quad_x.len());
        for (q, &x) in self.quad_x.iter().enumerate() {
            let row = &self.coeff_table[q * d..(q + 1) * d];
            let v = self.settings.mean_coeff + row.iter().zip(y).map(|(c, yk)| c * yk).sum::<f64>();
            if !(v > 0.0) {
                return Err(Error::Positivity { x, value: v });
            }
            a.push(v);
        }
        Ok(a)
    }

    /// Nodal values, boundary nodes included, ordered left to right.
    pub fn solve_nodal(&self, y: &[f64]) -> Result<Vec<f64>> {
        let a = self.coefficient_at_quadrature(y)?;
        let p = self.settings.element_order.degree();
        let ne = self.settings.mesh_elements;
        let h = 1.0 / ne as f64;
        let n_nodes = p * ne + 1;
        let n = n_nodes - 2;
        if n == 0 {
            return Ok(vec![0.0; n_nodes]);
        }
        let mut band = BandMatrix::zeros(n, p);
        let mut rhs = vec![0.0; n];
        let load: &[f64] = match p {
            1 => &[0.5, 0.5],
            _ => &[1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
        };
        let mut grads = [0.0; 3];
        for e in 0..ne {
            let mut local = [[0.0; 3]; 3];
            for (g, &xi) in self.ref_xi.iter().enumerate() {
                let q = e * GAUSS_POINTS + g;
                shape_gradients(p, xi, h, &mut grads);
                let aw = a[q] * self.quad_w[q];
                for i in 0..=p {
                    for j in 0..=p {
                        local[i][j] += aw * grads[i] * grads[j];
                    }
                }
            }
            for i in 0..=p {
                let gi = e * p + i;
                if gi == 0 || gi == n_nodes - 1 {
                    continue;
                }
                rhs[gi - 1] += h * load[i];
                for j in i..=p {
                    let gj = e * p + j;
                    if gj == 0 || gj == n_nodes - 1 {
                        continue;
                    }
                    band.add(gi - 1, gj - 1, local[i][j]);
                }
            }
        }
        band.cholesky_solve(&mut rhs)?;
        let mut nodal = Vec::with_capacity(n_nodes);
        nodal.push(0.0);
        nodal.extend(rhs);
        nodal.push(0.0);
        Ok(nodal)
    }

    /// The finite element solution at `x`.
    pub fn solve_at(&self, y: &[f64], x: f64) -> Result<f64> {
        let nodal = self.solve_nodal(y)?;
        Ok(self.interpolate(&nodal, x))
    }

    fn interpolate(&self, nodal: &[f64], x: f64) -> f64 {
        let p = self.settings.element_order.degree();
        let ne = self.settings.mesh_elements;
        let h = 1.0 / ne as f64;
        let e = ((x / h).floor() as usize).min(ne - 1);
        let xi = (x - e as f64 * h) / h;
        let v = &nodal[e * p..=e * p + p];
        match p {
            1 => v[0] * (1.0 - xi) + v[1] * xi,
            _ => {
                v[0] * (1.0 - xi) * (1.0 - 2.0 * xi) + v[1] * 4.0 * xi * (1.0 - xi) + v[2] * xi * (2.0 * xi - 1.0)
            }
        }
    }

    /// `u(x_query, y)`.
    pub fn solve(&self, y: &[f64]) -> Result<f64> {
        let u = self.solve_at(y, self.settings.query_point)?;
        if !(u > 0.0) {
            // Positive forcing and zero boundary values force u > 0 inside.
            return Err(Error::NonPositiveSolution { value: u });
        }
        Ok(u)
    }
}

/// `u(0.5, y)` with the problem's query point.
pub fn elliptic_solve(problem: &EllipticProblem, y: &[f64]) -> Result<f64> {
    problem.solve(y)
}

fn shape_gradients(p: usize, xi: f64, h: f64, out: &mut [f64; 3]) {
    match p {
        1 => {
            out[0] = -1.0 / h;
            out[1] = 1.0 / h;
        }
        _ => {
            out[0] = (4.0 * xi - 3.0) / h;
            out[1] = (4.0 - 8.0 * xi) / h;
            out[2] = (4.0 * xi - 1.0) / h;
        }
    }
}

/// Symmetric band matrix, upper band stored row by row.
struct BandMatrix {
    n: usize,
    bw: usize,
    /// `(i, i + o)` at `i * (bw + 1) + o`.
    data: Vec<f64>,
}

impl BandMatrix {
    fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.data[i * (self.bw + 1) + (j - i)] += v;
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.bw + 1) + (j - i)]
    }

    /// In-place `RᵀR` factorization followed by the two triangular solves.
    fn cholesky_solve(&mut self, b: &mut [f64]) -> Result<()> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        for i in 0..n {
            let mut d = self.get(i, i);
            for k in i.saturating_sub(bw)..i {
                let r = self.get(k, i);
                d -= r * r;
            }
            if !(d > 0.0) {
                return Err(Error::Conditioning { min_eigenvalue: d });
            }
            let d = d.sqrt();
            self.data[i * w] = d;
            for j in i + 1..(i + w).min(n) {
                let mut s = self.get(i, j);
                for k in j.saturating_sub(bw)..i {
                    s -= self.get(k, i) * self.get(k, j);
                }
                self.data[i * w + (j - i)] = s / d;
            }
        }
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.get(k, i) * b[k];
            }
            b[i] = s / self.get(i, i);
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..(i + w).min(n) {
                s -= self.get(i, j) * b[j];
            }
            b[i] = s / self.get(i, i);
        }
        Ok(())
    }
}

impl Sampler for EllipticProblem {
    fn dims(&self) -> usize {
        self.settings.dims
    }

    fn sample_one(&self, seed: u64, j: u64) -> Result<(Vec<f64>, f64)> {
        let mut rng = sample_rng(seed, j);
        let y: Vec<f64> = (0..self.settings.dims)
            .map(|_| draw_input(Family::Legendre, &mut rng))
            .collect();
        let u = self.solve(&y)?;
        Ok((y, u))
    }

    fn sample(&self, n: usize, seed: u64) -> Result<SampleSet> {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be >= 1".into()));
        }
        collect_samples(self, n, seed, Family::Legendre)
    }
}

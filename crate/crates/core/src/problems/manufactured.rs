//! Ten-dimensional polynomial test function in standard Gaussian inputs,
//!
//! ```text
//! u(y) = s0 + s1 ψ3(y1) ψ3(y2) + s2 ψ2(y3) + s3 ψ2(y8) + s4 ψ3(y9) + ε,
//! ```
//!
//! with `ε ~ N(0, noise_std²)`.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{collect_samples, sample_rng, Sampler};
use crate::basis::{BasisSpec, Family};
use crate::error::{Error, Result};
use crate::model::{draw_input, SampleSet, SeparatedModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedSpec {
    pub coefficients: [f64; 5],
    pub noise_std: f64,
    pub dims: usize,
    pub noisy: bool,
}

impl Default for ManufacturedSpec {
    fn default() -> Self {
        let r2 = std::f64::consts::SQRT_2;
        Self {
            coefficients: [0.55, r2 / 2.0, -r2 / 4.0, -r2 / 4.0, -0.1],
            noise_std: 0.0005,
            dims: 10,
            noisy: true,
        }
    }
}

/// `(dimension, degree)` of the non-constant terms, 0-based dimensions.
const TERMS: [&[(usize, usize)]; 4] = [&[(0, 3), (1, 3)], &[(2, 2)], &[(7, 2)], &[(8, 3)]];

impl ManufacturedSpec {
    pub fn noiseless() -> Self {
        Self {
            noisy: false,
            ..Self::default()
        }
    }

    pub fn mean(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn variance(&self) -> f64 {
        self.coefficients[1..].iter().map(|s| s * s).sum()
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Noise-free value.
    pub fn evaluate(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims,
                got: y.len(),
            });
        }
        let spec = BasisSpec::new(Family::HermiteProbabilists, 3);
        let mut u = self.coefficients[0];
        for (s, term) in self.coefficients[1..].iter().zip(TERMS) {
            let mut p = *s;
            for &(k, deg) in term {
                p *= spec.eval(y[k])?[deg];
            }
            u += p;
        }
        Ok(u)
    }

    /// The noise-free function as a rank-5, degree-3 separated model, signs
    /// folded into the first factor of each term.
    pub fn exact_model(&self) -> SeparatedModel {
        let basis = BasisSpec::new(Family::HermiteProbabilists, 3);
        let m1 = basis.len();
        let mut coeffs = vec![vec![vec![0.0; m1]; 5]; self.dims];
        for k in 0..self.dims {
            coeffs[k][0][0] = 1.0;
        }
        let mut scales = vec![self.coefficients[0].abs()];
        if self.coefficients[0] < 0.0 {
            coeffs[0][0][0] = -1.0;
        }
        for (l, (s, term)) in self.coefficients[1..].iter().zip(TERMS).enumerate() {
            let l = l + 1;
            scales.push(s.abs());
            for k in 0..self.dims {
                coeffs[k][l][0] = 1.0;
            }
            for &(k, deg) in term {
                coeffs[k][l][0] = 0.0;
                coeffs[k][l][deg] = 1.0;
            }
            if *s < 0.0 {
                let (k, deg) = term[0];
                coeffs[k][l][deg] = -1.0;
            }
        }
        SeparatedModel::from_nested(basis, scales, coeffs).expect("valid encoding")
    }
}

impl Sampler for ManufacturedSpec {
    fn dims(&self) -> usize {
        self.dims
    }

    fn sample_one(&self, seed: u64, j: u64) -> Result<(Vec<f64>, f64)> {
        let mut rng = sample_rng(seed, j);
        let y: Vec<f64> = (0..self.dims)
            .map(|_| draw_input(Family::HermiteProbabilists, &mut rng))
            .collect();
        let mut u = self.evaluate(&y)?;
        if self.noisy {
            let noise = Normal::new(0.0, self.noise_std)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            u += noise.sample(&mut rng);
        }
        Ok((y, u))
    }

    fn sample(&self, n: usize, seed: u64) -> Result<SampleSet> {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be >= 1".into()));
        }
        collect_samples(self, n, seed, Family::HermiteProbabilists)
    }
}

/// `n` draws of the manufactured function with the default coefficients.
pub fn manufactured_sample(n: usize, seed: u64, noisy: bool) -> Result<SampleSet> {
    let spec = ManufacturedSpec {
        noisy,
        ..ManufacturedSpec::default()
    };
    spec.sample(n, seed)
}

//! The separated (canonical, rank-r) surrogate and the sample sets it is fit to.
//!
//! A model of rank `r` in `d` dimensions is
//!
//! ```text
//! u_r(y) = Σ_l s_l Π_k u_k^l(y_k),    u_k^l(y) = Σ_α c[k][l][α] ψ_α(y).
//! ```
//!
//! Coefficients are stored dimension-major, so the `r (M + 1)` unknowns of one
//! alternating direction form a contiguous slab.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::basis::{gauss_rule, BasisSpec, Family};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDocument", into = "ModelDocument")]
pub struct SeparatedModel {
    dims: usize,
    rank: usize,
    basis: BasisSpec,
    scales: Vec<f64>,
    coeffs: Vec<f64>,
}

/// On-disk layout of a model.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelDocument {
    dims: usize,
    rank: usize,
    family: Family,
    max_degree: usize,
    scales: Vec<f64>,
    coeffs: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<ModelDocument> for SeparatedModel {
    type Error = Error;

    fn try_from(doc: ModelDocument) -> Result<Self> {
        let model = SeparatedModel::from_nested(
            BasisSpec::new(doc.family, doc.max_degree),
            doc.scales,
            doc.coeffs,
        )?;
        if model.dims != doc.dims || model.rank != doc.rank {
            return Err(Error::InvalidArgument(format!(
                "header says d={}, r={} but coefficients are d={}, r={}",
                doc.dims, doc.rank, model.dims, model.rank
            )));
        }
        Ok(model)
    }
}

impl From<SeparatedModel> for ModelDocument {
    fn from(m: SeparatedModel) -> Self {
        let coeffs = (0..m.dims)
            .map(|k| (0..m.rank).map(|l| m.factor(k, l).to_vec()).collect())
            .collect();
        ModelDocument {
            dims: m.dims,
            rank: m.rank,
            family: m.basis.family,
            max_degree: m.basis.max_degree,
            scales: m.scales,
            coeffs,
        }
    }
}

impl SeparatedModel {
    /// Builds a model from a flat dimension-major coefficient vector
    /// (`index = (k * rank + l) * (M + 1) + α`).
    pub fn from_flat(basis: BasisSpec, dims: usize, scales: Vec<f64>, coeffs: Vec<f64>) -> Result<Self> {
        let rank = scales.len();
        if dims == 0 || rank == 0 {
            return Err(Error::InvalidArgument("a model needs d >= 1 and r >= 1".into()));
        }
        let expected = dims * rank * basis.len();
        if coeffs.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: coeffs.len(),
            });
        }
        if let Some(s) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidArgument(format!("scales must be positive and finite, got {s}")));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("model coefficients"));
        }
        Ok(Self {
            dims,
            rank,
            basis,
            scales,
            coeffs,
        })
    }

    /// Builds a model from `coeffs[k][l][α]`.
    pub fn from_nested(basis: BasisSpec, scales: Vec<f64>, coeffs: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let dims = coeffs.len();
        let rank = scales.len();
        let mut flat = Vec::with_capacity(dims * rank * basis.len());
        for (k, per_dim) in coeffs.iter().enumerate() {
            if per_dim.len() != rank {
                return Err(Error::InvalidArgument(format!(
                    "dimension {k} has {} terms, expected {rank}",
                    per_dim.len()
                )));
            }
            for factor in per_dim {
                if factor.len() != basis.len() {
                    return Err(Error::DimensionMismatch {
                        expected: basis.len(),
                        got: factor.len(),
                    });
                }
                flat.extend_from_slice(factor);
            }
        }
        Self::from_flat(basis, dims, scales, flat)
    }

    /// Rank-one constant model `value` (all factors `ψ_0`).
    pub fn constant(basis: BasisSpec, dims: usize, value: f64) -> Result<Self> {
        let mut coeffs = vec![0.0; dims * basis.len()];
        for k in 0..dims {
            coeffs[k * basis.len()] = 1.0;
        }
        let (scale, sign) = if value < 0.0 { (-value, -1.0) } else { (value, 1.0) };
        coeffs[0] = sign;
        if scale == 0.0 {
            return Err(Error::InvalidArgument("constant model must be nonzero".into()));
        }
        Self::from_flat(basis, dims, vec![scale], coeffs)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn basis(&self) -> BasisSpec {
        self.basis
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    #[inline]
    fn offset(&self, k: usize, l: usize) -> usize {
        (k * self.rank + l) * self.basis.len()
    }

    /// Coefficients `c[k][l][·]` of one factor.
    #[inline]
    pub fn factor(&self, k: usize, l: usize) -> &[f64] {
        let o = self.offset(k, l);
        &self.coeffs[o..o + self.basis.len()]
    }

    pub(crate) fn factor_mut(&mut self, k: usize, l: usize) -> &mut [f64] {
        let o = self.offset(k, l);
        let len = self.basis.len();
        &mut self.coeffs[o..o + len]
    }

    /// All coefficients of direction `k`, ordered `(l, α)`.
    pub fn direction(&self, k: usize) -> &[f64] {
        let len = self.rank * self.basis.len();
        &self.coeffs[k * len..(k + 1) * len]
    }

    pub(crate) fn direction_mut(&mut self, k: usize) -> &mut [f64] {
        let len = self.rank * self.basis.len();
        &mut self.coeffs[k * len..(k + 1) * len]
    }

    pub(crate) fn scales_mut(&mut self) -> &mut [f64] {
        &mut self.scales
    }

    /// Replaces the coefficients of direction `k`.
    pub fn with_direction(mut self, k: usize, coeffs: &[f64]) -> Result<Self> {
        if k >= self.dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims,
                got: k,
            });
        }
        if coeffs.len() != self.rank * self.basis.len() {
            return Err(Error::DimensionMismatch {
                expected: self.rank * self.basis.len(),
                got: coeffs.len(),
            });
        }
        self.direction_mut(k).copy_from_slice(coeffs);
        Ok(self)
    }

    /// Appends a term; `coeffs[k]` holds the new factor in dimension `k`.
    pub(crate) fn push_term(&mut self, scale: f64, factors: &[Vec<f64>]) {
        let m1 = self.basis.len();
        let new_rank = self.rank + 1;
        let mut coeffs = Vec::with_capacity(self.dims * new_rank * m1);
        for k in 0..self.dims {
            coeffs.extend_from_slice(self.direction(k));
            coeffs.extend_from_slice(&factors[k]);
        }
        self.coeffs = coeffs;
        self.scales.push(scale);
        self.rank = new_rank;
    }

    /// Value of factor `u_k^l` given precomputed basis values at `y_k`.
    #[inline]
    pub fn factor_value(&self, k: usize, l: usize, psi: &[f64]) -> f64 {
        dot(self.factor(k, l), psi)
    }

    pub fn evaluate(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims,
                got: y.len(),
            });
        }
        let mut psi = vec![0.0; self.basis.len()];
        let mut terms = self.scales.clone();
        for (k, &yk) in y.iter().enumerate() {
            self.basis.eval_into(yk, &mut psi)?;
            for (l, t) in terms.iter_mut().enumerate() {
                *t *= self.factor_value(k, l, &psi);
            }
        }
        Ok(terms.iter().sum())
    }

    /// `E[u_r] = Σ_l s_l Π_k c[k][l][0]`.
    pub fn mean(&self) -> f64 {
        (0..self.rank)
            .map(|l| self.scales[l] * (0..self.dims).map(|k| self.factor(k, l)[0]).product::<f64>())
            .sum()
    }

    /// `E[u_r²]` from the orthonormality of the basis.
    pub fn second_moment(&self) -> f64 {
        self.inner(self).expect("a model is compatible with itself")
    }

    /// `E[u_r v_r]` for two models on the same basis and dimension.
    pub fn inner(&self, other: &SeparatedModel) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims,
                got: other.dims,
            });
        }
        if self.basis != other.basis {
            return Err(Error::InvalidArgument("models use different bases".into()));
        }
        let mut total = 0.0;
        for l in 0..self.rank {
            for m in 0..other.rank {
                let mut prod = self.scales[l] * other.scales[m];
                for k in 0..self.dims {
                    prod *= dot(self.factor(k, l), other.factor(k, m));
                }
                total += prod;
            }
        }
        Ok(total)
    }

    /// Variance `E[u_r²] - E[u_r]²`, clamped at zero.
    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        (self.second_moment() - mean * mean).max(0.0)
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Relative `L²(ρ)` distance `‖self - other‖ / ‖other‖`.
    pub fn relative_l2_distance(&self, other: &SeparatedModel) -> Result<f64> {
        let aa = self.second_moment();
        let bb = other.second_moment();
        let ab = self.inner(other)?;
        Ok(((aa + bb - 2.0 * ab).max(0.0) / bb).sqrt())
    }

    /// True when every coefficient is zero, so that `E[u_r²] = 0`.
    pub fn is_degenerate(&self) -> bool {
        self.second_moment() <= 0.0
    }

    /// `E[u_r^m]` by per-dimension Gauss quadrature of products of `m` factors,
    /// summed over all `r^m` term tuples.
    pub fn moment(&self, m: usize, quad_points: usize) -> Result<f64> {
        if m == 0 {
            return Err(Error::InvalidArgument("moment order must be >= 1".into()));
        }
        let degree = m * self.basis.max_degree;
        let required = (degree + 2) / 2;
        if quad_points < required {
            return Err(Error::QuadraturePrecision {
                quad_points,
                degree,
                required,
            });
        }
        let rule = gauss_rule(self.basis.family, quad_points)?;
        let q = rule.len();
        let mut psi = vec![0.0; self.basis.len()];
        // values[(k * rank + l) * q + node]
        let mut values = vec![0.0; self.dims * self.rank * q];
        for (node, &x) in rule.nodes.iter().enumerate() {
            BasisSpec::fill_unchecked(self.basis.family, x, &mut psi);
            for k in 0..self.dims {
                for l in 0..self.rank {
                    values[(k * self.rank + l) * q + node] = self.factor_value(k, l, &psi);
                }
            }
        }

        let mut tuple = vec![0usize; m];
        let mut weighted = vec![0.0; q];
        let mut total = 0.0;
        loop {
            let mut term: f64 = tuple.iter().map(|&l| self.scales[l]).product();
            for k in 0..self.dims {
                weighted.copy_from_slice(&rule.weights);
                for &l in &tuple {
                    let row = &values[(k * self.rank + l) * q..(k * self.rank + l + 1) * q];
                    for (w, v) in weighted.iter_mut().zip(row) {
                        *w *= v;
                    }
                }
                term *= weighted.iter().sum::<f64>();
            }
            total += term;

            // Advance the odometer over term tuples.
            let mut pos = 0;
            loop {
                if pos == m {
                    return Ok(total);
                }
                tuple[pos] += 1;
                if tuple[pos] < self.rank {
                    break;
                }
                tuple[pos] = 0;
                pos += 1;
            }
        }
    }

    /// Draws `n` inputs from the basis density and evaluates the model on them.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> SampleSet {
        let mut inputs = Vec::with_capacity(n * self.dims);
        let mut outputs = Vec::with_capacity(n);
        let mut y = vec![0.0; self.dims];
        for _ in 0..n {
            for v in y.iter_mut() {
                *v = draw_input(self.basis.family, rng);
            }
            outputs.push(self.evaluate(&y).expect("drawn inputs lie in the domain"));
            inputs.extend_from_slice(&y);
        }
        SampleSet::new(self.dims, inputs, outputs, self.basis.family).expect("finite samples")
    }
}

/// One draw from the density associated with `family`.
pub fn draw_input<R: Rng + ?Sized>(family: Family, rng: &mut R) -> f64 {
    match family {
        Family::HermiteProbabilists => StandardNormal.sample(rng),
        Family::Legendre => Uniform::new_inclusive(-1.0, 1.0)
            .expect("valid bounds")
            .sample(rng),
    }
}

/// Root-mean-square `sqrt((1/N) Σ v_j²)`, the empirical norm `‖·‖_D`.
pub fn empirical_norm(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `N` input points in `d` dimensions with their scalar outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    dims: usize,
    inputs: Vec<f64>,
    outputs: Vec<f64>,
    family: Family,
}

impl SampleSet {
    /// `inputs` is row-major `N × d`.
    pub fn new(dims: usize, inputs: Vec<f64>, outputs: Vec<f64>, family: Family) -> Result<Self> {
        if dims == 0 {
            return Err(Error::InvalidArgument("sample set needs d >= 1".into()));
        }
        if outputs.is_empty() {
            return Err(Error::InvalidArgument("sample set needs N >= 1".into()));
        }
        if inputs.len() != outputs.len() * dims {
            return Err(Error::DimensionMismatch {
                expected: outputs.len() * dims,
                got: inputs.len(),
            });
        }
        if outputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample outputs"));
        }
        for &y in &inputs {
            family.check_domain(y)?;
        }
        Ok(Self {
            dims,
            inputs,
            outputs,
            family,
        })
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.inputs[j * self.dims..(j + 1) * self.dims]
    }

    #[inline]
    pub fn input(&self, j: usize, k: usize) -> f64 {
        self.inputs[j * self.dims + k]
    }

    /// Same inputs, outputs replaced.
    pub fn with_outputs(&self, outputs: Vec<f64>) -> Result<Self> {
        Self::new(self.dims, self.inputs.clone(), outputs, self.family)
    }

    /// First `n` samples.
    pub fn head(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        Self::new(
            self.dims,
            self.inputs[..n * self.dims].to_vec(),
            self.outputs[..n].to_vec(),
            self.family,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hermite(m: usize) -> BasisSpec {
        BasisSpec::new(Family::HermiteProbabilists, m)
    }

    fn random_model(rng: &mut ChaCha8Rng, dims: usize, rank: usize, basis: BasisSpec) -> SeparatedModel {
        let scales = (0..rank).map(|_| rng.random_range(0.1..2.0)).collect();
        let coeffs = (0..dims * rank * basis.len())
            .map(|_| StandardNormal.sample(rng))
            .collect();
        SeparatedModel::from_flat(basis, dims, scales, coeffs).unwrap()
    }

    /// Direct triple loop, independent of the factor/slab helpers.
    fn naive_eval(model: &SeparatedModel, y: &[f64]) -> f64 {
        let spec = model.basis();
        let m1 = spec.len();
        let mut total = 0.0;
        for l in 0..model.rank() {
            let mut prod = model.scales()[l];
            for (k, &yk) in y.iter().enumerate() {
                let psi = spec.eval(yk).unwrap();
                let mut f = 0.0;
                for a in 0..m1 {
                    f += model.coeffs()[(k * model.rank() + l) * m1 + a] * psi[a];
                }
                prod *= f;
            }
            total += prod;
        }
        total
    }

    #[test]
    fn constant_factors() {
        let spec = hermite(2);
        let mut coeffs = vec![0.0; 3 * 3];
        for k in 0..3 {
            coeffs[k * 3] = 1.0;
        }
        let model = SeparatedModel::from_flat(spec, 3, vec![2.0], coeffs).unwrap();
        assert_abs_diff_eq!(model.evaluate(&[0.3, -1.2, 4.0]).unwrap(), 2.0, epsilon = 1e-15);
        assert!(matches!(model.evaluate(&[0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn evaluate_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = random_model(&mut rng, 6, 4, hermite(3));
        for _ in 0..100 {
            let y: Vec<f64> = (0..6).map(|_| StandardNormal.sample(&mut rng)).collect();
            let a = model.evaluate(&y).unwrap();
            let b = naive_eval(&model, &y);
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn mean_and_second_moment_simple() {
        let spec = hermite(2);
        let model = SeparatedModel::constant(spec, 4, 0.55).unwrap();
        assert_abs_diff_eq!(model.mean(), 0.55, epsilon = 1e-15);

        let a = 1.0 / 3f64.sqrt();
        let coeffs = vec![a; 2 * 3];
        let model = SeparatedModel::from_flat(spec, 2, vec![3.0], coeffs).unwrap();
        assert_abs_diff_eq!(model.second_moment(), 9.0, epsilon = 1e-13);
    }

    #[test]
    fn moment_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let model = random_model(&mut rng, 4, 3, hermite(3));
            let m1 = model.moment(1, 2).unwrap();
            let m2 = model.moment(2, 4).unwrap();
            assert!((m1 - model.mean()).abs() <= 1e-12 * model.mean().abs().max(1.0));
            let s = model.second_moment();
            assert!((m2 - s).abs() <= 1e-12 * s.max(1.0));
        }
    }

    #[test]
    fn moment_rejects_insufficient_rule() {
        let model = SeparatedModel::constant(hermite(3), 2, 1.0).unwrap();
        assert!(matches!(model.moment(4, 6), Err(Error::QuadraturePrecision { required: 7, .. })));
        assert!(model.moment(4, 7).is_ok());
        assert!(model.moment(0, 7).is_err());
    }

    #[test]
    fn empirical_norm_values() {
        assert_abs_diff_eq!(empirical_norm(&[1.0, 1.0, 1.0, 1.0]), 1.0);
        assert_abs_diff_eq!(empirical_norm(&[2.0, 0.0]), 2f64.sqrt(), epsilon = 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..97).map(|_| rng.random_range(-3.0..3.0)).collect();
        let oracle = (v.iter().map(|x| x * x).sum::<f64>() / 97.0).sqrt();
        assert!((empirical_norm(&v) - oracle).abs() <= 1e-15 * oracle.max(1.0));
    }

    #[test]
    fn rejects_bad_models() {
        let spec = hermite(1);
        assert!(SeparatedModel::from_flat(spec, 2, vec![-1.0], vec![0.0; 4]).is_err());
        assert!(SeparatedModel::from_flat(spec, 2, vec![1.0], vec![0.0; 3]).is_err());
        assert!(SeparatedModel::from_flat(spec, 0, vec![1.0], vec![]).is_err());
        let zero = SeparatedModel::from_flat(spec, 2, vec![1.0], vec![0.0; 4]).unwrap();
        assert!(zero.is_degenerate());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let model = random_model(&mut rng, 3, 2, BasisSpec::new(Family::Legendre, 4));
        let text = serde_json::to_string(&model).unwrap();
        let back: SeparatedModel = serde_json::from_str(&text).unwrap();
        assert_eq!(model, back);
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(doc["family"], "legendre");
        assert_eq!(doc["coeffs"].as_array().unwrap().len(), 3);
        assert_eq!(doc["coeffs"][0].as_array().unwrap().len(), 2);
        assert_eq!(doc["coeffs"][0][0].as_array().unwrap().len(), 5);
    }

    #[test]
    fn sample_set_validation() {
        assert!(SampleSet::new(2, vec![0.0, 2.0], vec![1.0], Family::Legendre).is_err());
        assert!(SampleSet::new(2, vec![0.0, 2.0], vec![1.0], Family::HermiteProbabilists).is_ok());
        assert!(SampleSet::new(2, vec![0.0], vec![1.0], Family::HermiteProbabilists).is_err());
        assert!(SampleSet::new(1, vec![0.0], vec![f64::NAN], Family::HermiteProbabilists).is_err());
        assert!(SampleSet::new(1, vec![], vec![], Family::HermiteProbabilists).is_err());
    }
}

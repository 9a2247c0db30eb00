//! Built-in test problems and reference estimators.

pub mod baselines;
pub mod elliptic;
pub mod kl;
pub mod manufactured;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::SampleSet;

pub use baselines::{mc_baseline, mc_estimate, pc_regression_baseline, McEstimate, PcFit};
pub use elliptic::EllipticProblem;
pub use kl::{kl_decompose, KlExpansion};
pub use manufactured::{manufactured_sample, ManufacturedSpec};

/// A function of random inputs that can be sampled reproducibly.
pub trait Sampler {
    fn dims(&self) -> usize;

    /// Output at input index `j` of the stream `seed`; sample `j` does not
    /// depend on how many others are drawn or in which order.
    fn sample_one(&self, seed: u64, j: u64) -> Result<(Vec<f64>, f64)>;

    fn sample(&self, n: usize, seed: u64) -> Result<SampleSet>;
}

/// Generator for sample `j` of stream `seed`.
pub fn sample_rng(seed: u64, j: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j);
    rng
}

/// Assembles `n` samples `0..n` into a set.
pub(crate) fn collect_samples<S: Sampler + ?Sized>(
    sampler: &S,
    n: usize,
    seed: u64,
    family: crate::basis::Family,
) -> Result<SampleSet> {
    let dims = sampler.dims();
    let mut inputs = Vec::with_capacity(n * dims);
    let mut outputs = Vec::with_capacity(n);
    for j in 0..n as u64 {
        let (y, u) = sampler.sample_one(seed, j)?;
        inputs.extend(y);
        outputs.push(u);
    }
    SampleSet::new(dims, inputs, outputs, family)
}

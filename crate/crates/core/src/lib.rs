//! Low-rank separated surrogates fitted to scattered samples of
//! high-dimensional functions.
//!
//! A surrogate `u_r(y) = Σ_l s_l Π_k u_k^l(y_k)` is built by alternating
//! least squares over the input directions, with each direction solve
//! regularized by a Tikhonov penalty equal to the surrogate's second moment.
//! The separation rank and polynomial degree are chosen by a perturbation
//! based error indicator.

pub mod als;
pub mod basis;
pub mod error;
pub mod model;
pub mod problems;
pub mod regularize;
pub mod select;
pub mod serde_float;

pub use als::{fit_fixed, FitConfig, FitDiagnostics};
pub use basis::{BasisSpec, Family};
pub use error::{Error, Result};
pub use model::{empirical_norm, SampleSet, SeparatedModel};
pub use regularize::{RegularizationState, TikhonovVariant};
pub use select::{select_model, SelectionReport};

//! Progressive curriculum selection for sim-to-real training sets.
//!
//! A category's training embeddings are modeled as a multivariate Gaussian.
//! Candidate virtual instances are scored by their minimum squared
//! Mahalanobis distance over several resized variants, sampled with weight
//! `exp(−gap/τ)` and, once transformed by an external generator, moved into
//! the training set. Repeating this grows the training set outward from the
//! real data.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision used by the loop.

pub mod gap;
pub mod gaussian;
pub mod io;
pub mod linalg;
pub mod ptl;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod synth;

pub use gap::{min_gap, score_pool, GapError, GapScore, MultiScaleFeatures, Scale, ScaleMode};
pub use gaussian::{
    fit_gaussian, gda_posterior, lda_linearize, mahalanobis_sq, sigmoid, FeatureSet,
    FeatureVector, GaussianClassModel, LinearHead, ModelError, PriorPair,
};
pub use linalg::{cholesky_decompose, regularize_spd, solve_spd, CholeskyFactor, LinalgError, SpdMatrix};
pub use ptl::{run, run_iteration, set_update, PtlConfig, PtlError, PtlState, SelectionManifest};
pub use sampler::{inclusion_probabilities, select_candidates, weight, SamplerConfig, SamplerError};
pub use scalar::Scalar;

pub type SpdMatrix64 = SpdMatrix<f64>;
pub type SpdMatrix32 = SpdMatrix<f32>;
pub type CholeskyFactor64 = CholeskyFactor<f64>;
pub type FeatureVector64 = FeatureVector<f64>;
pub type FeatureVector32 = FeatureVector<f32>;
pub type FeatureSet64 = FeatureSet<f64>;
pub type GaussianModel64 = GaussianClassModel<f64>;
pub type GaussianModel32 = GaussianClassModel<f32>;
pub type MultiScaleFeatures64 = MultiScaleFeatures<f64>;
pub type GapScore64 = GapScore<f64>;

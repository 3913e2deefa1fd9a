//! Per-category Gaussian model of the embedding space.
//!
//! A category is summarised by the population mean and covariance of its
//! training embeddings. The domain gap of a new embedding is its squared
//! Mahalanobis distance to that Gaussian. The two-class shared-covariance
//! (LDA) kernel at the bottom of this module shows that such a Gaussian
//! representation is exactly what a sigmoid-headed linear classifier induces.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{cholesky_decompose, regularize_spd, CholeskyFactor, LinalgError, SpdMatrix};
use crate::scalar::{dot, norm_sq, Scalar};

/// Default ridge scale applied to fitted covariances.
pub const DEFAULT_RIDGE_SCALE: f64 = 1e-6;
/// Default embedding dimension.
pub const DEFAULT_DIM: usize = 32;
/// Number of times the ridge is multiplied by ten after a failed factorization.
pub const RIDGE_ESCALATIONS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("empty set: a feature set needs at least 2 members, got {0}")]
    EmptySet(usize),
    #[error("covariance is singular even with ridge scale {ridge_scale}")]
    SingularCovariance { ridge_scale: f64 },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("duplicate instance id {0}")]
    DuplicateId(u64),
    #[error("instance {0} has a non-finite value")]
    NonFiniteValue(u64),
    #[error("feature dimension must be at least 1")]
    ZeroDim,
    #[error("priors must be strictly positive")]
    InvalidPrior,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// One embedding `f(x)` together with the instance it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FeatureVector<T> {
    pub instance_id: u64,
    pub values: Vec<T>,
}

impl<T: Scalar> FeatureVector<T> {
    pub fn new(instance_id: u64, values: Vec<T>) -> Self {
        Self { instance_id, values }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn cast<U: Scalar>(&self) -> FeatureVector<U> {
        FeatureVector {
            instance_id: self.instance_id,
            values: self
                .values
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }
}

/// Embeddings of one category with unique ids and a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet<T> {
    category: String,
    dim: usize,
    members: Vec<FeatureVector<T>>,
}

impl<T: Scalar> FeatureSet<T> {
    pub fn new(
        category: impl Into<String>,
        dim: usize,
        members: Vec<FeatureVector<T>>,
    ) -> Result<Self, ModelError> {
        if dim == 0 {
            return Err(ModelError::ZeroDim);
        }
        let mut seen = HashSet::with_capacity(members.len());
        for m in &members {
            if m.dim() != dim {
                return Err(ModelError::DimensionMismatch {
                    expected: dim,
                    found: m.dim(),
                });
            }
            if !seen.insert(m.instance_id) {
                return Err(ModelError::DuplicateId(m.instance_id));
            }
            if m.values.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteValue(m.instance_id));
            }
        }
        Ok(Self {
            category: category.into(),
            dim,
            members,
        })
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn members(&self) -> &[FeatureVector<T>] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Fitted `(μ, Σ)` of one category, with Σ held in factored form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GaussianClassModel<T> {
    pub category: String,
    pub mean: Vec<T>,
    pub covariance: SpdMatrix<T>,
    pub factor: CholeskyFactor<T>,
    pub sample_count: usize,
    pub ridge_scale_used: T,
}

/// Fit the population mean and covariance (divide by N) of `d`.
///
/// The covariance is regularized with `ridge_scale`. If it still cannot be
/// factored the ridge is multiplied by ten, at most [`RIDGE_ESCALATIONS`]
/// times, before giving up with [`ModelError::SingularCovariance`].
pub fn fit_gaussian<T: Scalar>(
    d: &FeatureSet<T>,
    ridge_scale: T,
) -> Result<GaussianClassModel<T>, ModelError> {
    let n = d.len();
    if n < 2 {
        return Err(ModelError::EmptySet(n));
    }
    let dim = d.dim;
    let inv_n = T::from_usize(n).unwrap().recip();

    let mut mean = vec![T::zero(); dim];
    for m in &d.members {
        for (acc, &v) in mean.iter_mut().zip(&m.values) {
            *acc = *acc + v;
        }
    }
    for v in &mut mean {
        *v = *v * inv_n;
    }

    let mut cov = vec![T::zero(); dim * dim];
    let mut centered = vec![T::zero(); dim];
    for m in &d.members {
        for ((c, &v), &mu) in centered.iter_mut().zip(&m.values).zip(&mean) {
            *c = v - mu;
        }
        for i in 0..dim {
            let ci = centered[i];
            for j in 0..=i {
                cov[i * dim + j] = cov[i * dim + j] + ci * centered[j];
            }
        }
    }
    for i in 0..dim {
        for j in 0..=i {
            let v = cov[i * dim + j] * inv_n;
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
    }
    let sample_cov = SpdMatrix::new(dim, cov)?;

    let ten = T::from_f64_lossy(10.0);
    let mut ridge = ridge_scale;
    for attempt in 0..=RIDGE_ESCALATIONS {
        let covariance = regularize_spd(&sample_cov, ridge);
        match cholesky_decompose(&covariance) {
            Ok(factor) => {
                if attempt > 0 {
                    log::debug!("covariance needed ridge escalation to {ridge}");
                }
                return Ok(GaussianClassModel {
                    category: d.category.clone(),
                    mean,
                    covariance,
                    factor,
                    sample_count: n,
                    ridge_scale_used: ridge,
                });
            }
            Err(LinalgError::NotPositiveDefinite { .. }) if attempt < RIDGE_ESCALATIONS => {
                ridge = ridge * ten;
            }
            Err(LinalgError::NotPositiveDefinite { .. }) => break,
            Err(e) => return Err(e.into()),
        }
    }
    Err(ModelError::SingularCovariance {
        ridge_scale: ridge.to_f64_lossy(),
    })
}

impl<T: Scalar> GaussianClassModel<T> {
    #[inline]
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Squared Mahalanobis distance `(x−μ)ᵀΣ⁻¹(x−μ)` of a raw vector.
    pub fn mahalanobis_sq_values(&self, x: &[T]) -> Result<T, ModelError> {
        if x.len() != self.dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let diff: Vec<T> = x.iter().zip(&self.mean).map(|(&a, &b)| a - b).collect();
        Ok(self.factor.quadratic_form(&diff)?)
    }

    /// Euclidean norm of the mean, used in manifest summaries.
    pub fn mean_norm(&self) -> T {
        norm_sq(&self.mean).sqrt()
    }
}

/// Squared Mahalanobis distance of `x` to `model` (the domain gap of one
/// embedding). No square root is taken.
pub fn mahalanobis_sq<T: Scalar>(
    model: &GaussianClassModel<T>,
    x: &FeatureVector<T>,
) -> Result<T, ModelError> {
    model.mahalanobis_sq_values(&x.values)
}

/// Linear sigmoid head `p(y=1|x) = σ(w·x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LinearHead<T> {
    pub weights: Vec<T>,
    pub bias: T,
}

impl<T: Scalar> LinearHead<T> {
    pub fn logit(&self, x: &[T]) -> Result<T, ModelError> {
        if x.len() != self.weights.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.weights.len(),
                found: x.len(),
            });
        }
        Ok(dot(&self.weights, x) + self.bias)
    }

    pub fn probability(&self, x: &[T]) -> Result<T, ModelError> {
        Ok(sigmoid(self.logit(x)?))
    }
}

/// Unnormalized class priors `(β₀, β₁)` for background and category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorPair<T> {
    beta0: T,
    beta1: T,
}

impl<T: Scalar> PriorPair<T> {
    pub fn new(beta0: T, beta1: T) -> Result<Self, ModelError> {
        if !(beta0 > T::zero() && beta1 > T::zero()) || !beta0.is_finite() || !beta1.is_finite() {
            return Err(ModelError::InvalidPrior);
        }
        Ok(Self { beta0, beta1 })
    }

    pub fn equal() -> Self {
        Self {
            beta0: T::one(),
            beta1: T::one(),
        }
    }

    pub fn beta0(&self) -> T {
        self.beta0
    }

    pub fn beta1(&self) -> T {
        self.beta1
    }

    fn log_ratio(&self) -> T {
        (self.beta1 / self.beta0).ln()
    }
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (e + T::one())
    }
}

fn check_pair<T: Scalar>(
    model0: &GaussianClassModel<T>,
    model1: &GaussianClassModel<T>,
    shared: &SpdMatrix<T>,
) -> Result<(), ModelError> {
    let dim = model1.dim();
    for found in [model0.dim(), shared.dim()] {
        if found != dim {
            return Err(ModelError::DimensionMismatch { expected: dim, found });
        }
    }
    Ok(())
}

/// Collapse a shared-covariance two-class Gaussian model into the equivalent
/// linear head: `w = Σ⁻¹(μ₁−μ₀)`,
/// `b = −½μ₁ᵀΣ⁻¹μ₁ + ½μ₀ᵀΣ⁻¹μ₀ + ln(β₁/β₀)`.
///
/// Only the means of the two models are used; `shared` replaces both of
/// their covariances.
pub fn lda_linearize<T: Scalar>(
    model0: &GaussianClassModel<T>,
    model1: &GaussianClassModel<T>,
    shared: &SpdMatrix<T>,
    priors: &PriorPair<T>,
) -> Result<LinearHead<T>, ModelError> {
    check_pair(model0, model1, shared)?;
    let factor = cholesky_decompose(shared)?;
    let diff: Vec<T> = model1
        .mean
        .iter()
        .zip(&model0.mean)
        .map(|(&a, &b)| a - b)
        .collect();
    let weights = factor.solve(&diff)?;
    let half = T::from_f64_lossy(0.5);
    let q1 = factor.quadratic_form(&model1.mean)?;
    let q0 = factor.quadratic_form(&model0.mean)?;
    let bias = -half * q1 + half * q0 + priors.log_ratio();
    Ok(LinearHead { weights, bias })
}

/// Posterior `P(y=1|x)` of the two-class shared-covariance Gaussian model,
/// computed directly from the two class-conditional log densities and the
/// priors (the normalizing constants cancel under a shared covariance).
pub fn gda_posterior<T: Scalar>(
    model0: &GaussianClassModel<T>,
    model1: &GaussianClassModel<T>,
    shared: &SpdMatrix<T>,
    priors: &PriorPair<T>,
    x: &FeatureVector<T>,
) -> Result<T, ModelError> {
    check_pair(model0, model1, shared)?;
    if x.dim() != shared.dim() {
        return Err(ModelError::DimensionMismatch {
            expected: shared.dim(),
            found: x.dim(),
        });
    }
    let factor = cholesky_decompose(shared)?;
    let centered = |mu: &[T]| -> Vec<T> { x.values.iter().zip(mu).map(|(&a, &b)| a - b).collect() };
    let half = T::from_f64_lossy(0.5);
    let log_joint1 = priors.beta1.ln() - half * factor.quadratic_form(&centered(&model1.mean))?;
    let log_joint0 = priors.beta0.ln() - half * factor.quadratic_form(&centered(&model0.mean))?;
    Ok(sigmoid(log_joint1 - log_joint0))
}

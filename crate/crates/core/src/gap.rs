//! Multi-scale domain gap: the minimum squared Mahalanobis distance of an
//! instance over its resized variants.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaussian::{GaussianClassModel, ModelError};
use crate::scalar::Scalar;

/// Side length in pixels of a resized instance. Scale `0` denotes the
/// canonical (single-scale) embedding used for real instances.
pub type Scale = u32;

pub const CANONICAL_SCALE: Scale = 0;
pub const DEFAULT_SCALES: [Scale; 4] = [128, 256, 384, 512];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GapError {
    #[error("instance {instance_id} has no embedding at scale {scale}")]
    MissingScale { instance_id: u64, scale: Scale },
    #[error("instance {instance_id}: no scales to evaluate")]
    EmptyScaleSet { instance_id: u64 },
    #[error("instance {instance_id}: dimension mismatch (expected {expected}, got {found})")]
    DimensionMismatch {
        instance_id: u64,
        expected: usize,
        found: usize,
    },
}

/// How to treat configured scales that an instance lacks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleMode {
    /// Every configured scale must be present.
    #[default]
    Strict,
    /// Take the minimum over whichever configured scales are present.
    Partial,
}

/// Per-scale embeddings of one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MultiScaleFeatures<T> {
    pub instance_id: u64,
    pub per_scale: BTreeMap<Scale, Vec<T>>,
}

impl<T: Scalar> MultiScaleFeatures<T> {
    pub fn new(instance_id: u64) -> Self {
        Self {
            instance_id,
            per_scale: BTreeMap::new(),
        }
    }

    pub fn with_scale(mut self, scale: Scale, values: Vec<T>) -> Self {
        self.per_scale.insert(scale, values);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GapScore<T> {
    pub instance_id: u64,
    pub gap: T,
    pub argmin_scale: Scale,
}

/// Minimum squared Mahalanobis distance over `scales`. Equal gaps resolve
/// to the smallest scale.
pub fn min_gap<T: Scalar>(
    model: &GaussianClassModel<T>,
    msf: &MultiScaleFeatures<T>,
    scales: &[Scale],
    mode: ScaleMode,
) -> Result<GapScore<T>, GapError> {
    let id = msf.instance_id;
    let mut best: Option<(T, Scale)> = None;
    for &scale in scales {
        let Some(values) = msf.per_scale.get(&scale) else {
            match mode {
                ScaleMode::Strict => return Err(GapError::MissingScale { instance_id: id, scale }),
                ScaleMode::Partial => continue,
            }
        };
        let gap = model.mahalanobis_sq_values(values).map_err(|e| match e {
            ModelError::DimensionMismatch { expected, found } => GapError::DimensionMismatch {
                instance_id: id,
                expected,
                found,
            },
            other => unreachable!("mahalanobis evaluation only fails on dimension: {other}"),
        })?;
        best = match best {
            Some((g, s)) if g < gap || (g == gap && s < scale) => Some((g, s)),
            _ => Some((gap, scale)),
        };
    }
    best.map(|(gap, argmin_scale)| GapScore {
        instance_id: id,
        gap,
        argmin_scale,
    })
    .ok_or(GapError::EmptyScaleSet { instance_id: id })
}

/// Score every pool member, in parallel, preserving input order. On failure
/// the error of the earliest failing member (by position) is returned.
pub fn score_pool<T: Scalar>(
    model: &GaussianClassModel<T>,
    pool: &[MultiScaleFeatures<T>],
    scales: &[Scale],
    mode: ScaleMode,
) -> Result<Vec<GapScore<T>>, GapError> {
    let results: Vec<Result<GapScore<T>, GapError>> = pool
        .par_iter()
        .map(|m| min_gap(model, m, scales, mode))
        .collect();
    results.into_iter().collect()
}

/// Sequential counterpart of [`score_pool`].
pub fn score_pool_sequential<T: Scalar>(
    model: &GaussianClassModel<T>,
    pool: &[MultiScaleFeatures<T>],
    scales: &[Scale],
    mode: ScaleMode,
) -> Result<Vec<GapScore<T>>, GapError> {
    pool.iter().map(|m| min_gap(model, m, scales, mode)).collect()
}

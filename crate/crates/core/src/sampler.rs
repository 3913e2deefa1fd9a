//! Temperature-weighted candidate selection without replacement.
//!
//! Each candidate gets the weight `exp(−gap/τ)`. Drawing `n` candidates one
//! at a time with probability proportional to weight among those left
//! (Plackett–Luce) is realized in a single pass by perturbing the log-weight
//! `−gap/τ` with standard Gumbel noise and keeping the `n` largest keys.
//! Weights are never exponentiated on that path, so a tiny `τ` cannot
//! underflow.

use std::collections::HashSet;

use rand::distr::{Distribution, Open01};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gap::GapScore;
use crate::rng::seeded_rng;
use crate::scalar::Scalar;

pub const DEFAULT_TAU: f64 = 5.0;
pub const DEFAULT_N: usize = 100;
/// Largest pool [`inclusion_probabilities`] will enumerate.
pub const MAX_ENUMERATION_POOL: usize = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("tau must be > 0")]
    InvalidTau,
    #[error("n must be >= 1")]
    InvalidN,
    #[error("cannot select from an empty pool")]
    EmptyPool,
    #[error("duplicate instance id {0} in scores")]
    DuplicateId(u64),
    #[error("instance {0} has an invalid gap")]
    InvalidGap(u64),
    #[error("pool of {0} is too large for exact enumeration (max {MAX_ENUMERATION_POOL})")]
    PoolTooLarge(usize),
    #[error("n = {n} exceeds pool size {pool}")]
    NExceedsPool { n: usize, pool: usize },
    #[error("weights must be positive and finite")]
    InvalidWeight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub tau: f64,
    pub n: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            n: DEFAULT_N,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn new(tau: f64, n: usize, seed: u64) -> Result<Self, SamplerError> {
        let cfg = Self { tau, n, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(SamplerError::InvalidTau);
        }
        if self.n == 0 {
            return Err(SamplerError::InvalidN);
        }
        Ok(())
    }
}

/// Sampling weight `exp(−gap/τ)`.
#[inline]
pub fn weight<T: Scalar>(gap: T, tau: T) -> T {
    (-gap / tau).exp()
}

#[inline]
fn standard_gumbel<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = Open01.sample(rng);
    -(-u.ln()).ln()
}

/// Draw `min(n, |scores|)` distinct ids with Plackett–Luce law under weights
/// `exp(−gap/τ)`. The result is sorted by instance id.
pub fn select_candidates<T: Scalar>(
    scores: &[GapScore<T>],
    cfg: &SamplerConfig,
) -> Result<Vec<u64>, SamplerError> {
    cfg.validate()?;
    if scores.is_empty() {
        return Err(SamplerError::EmptyPool);
    }
    let mut seen = HashSet::with_capacity(scores.len());
    for s in scores {
        if !seen.insert(s.instance_id) {
            return Err(SamplerError::DuplicateId(s.instance_id));
        }
        let g = s.gap.to_f64_lossy();
        if !(g >= 0.0) || !g.is_finite() {
            return Err(SamplerError::InvalidGap(s.instance_id));
        }
    }

    let mut rng = seeded_rng(cfg.seed);
    let mut keyed: Vec<(f64, u64)> = scores
        .iter()
        .map(|s| (-s.gap.to_f64_lossy() / cfg.tau + standard_gumbel(&mut rng), s.instance_id))
        .collect();

    // larger key first, equal keys by ascending id
    let order = |a: &(f64, u64), b: &(f64, u64)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    let take = cfg.n.min(keyed.len());
    if take < keyed.len() {
        keyed.select_nth_unstable_by(take - 1, order);
        keyed.truncate(take);
    }
    let mut ids: Vec<u64> = keyed.into_iter().map(|(_, id)| id).collect();
    ids.sort_unstable();
    Ok(ids)
}

/// Exact probability that each item appears among the first `n` draws of
/// sequential weighted sampling without replacement, by enumerating every
/// ordered prefix of length `n`.
pub fn inclusion_probabilities(weights: &[f64], n: usize) -> Result<Vec<f64>, SamplerError> {
    if weights.is_empty() {
        return Err(SamplerError::EmptyPool);
    }
    if weights.len() > MAX_ENUMERATION_POOL {
        return Err(SamplerError::PoolTooLarge(weights.len()));
    }
    if n == 0 {
        return Err(SamplerError::InvalidN);
    }
    if n > weights.len() {
        return Err(SamplerError::NExceedsPool {
            n,
            pool: weights.len(),
        });
    }
    if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(SamplerError::InvalidWeight);
    }

    fn walk(
        weights: &[f64],
        depth: usize,
        remaining: f64,
        prob: f64,
        used: &mut [bool],
        prefix: &mut Vec<usize>,
        out: &mut [f64],
    ) {
        if depth == 0 {
            for &i in prefix.iter() {
                out[i] += prob;
            }
            return;
        }
        for i in 0..weights.len() {
            if used[i] {
                continue;
            }
            used[i] = true;
            prefix.push(i);
            walk(
                weights,
                depth - 1,
                remaining - weights[i],
                prob * weights[i] / remaining,
                used,
                prefix,
                out,
            );
            prefix.pop();
            used[i] = false;
        }
    }

    let total: f64 = weights.iter().sum();
    let mut out = vec![0.0; weights.len()];
    let mut used = vec![false; weights.len()];
    walk(weights, n, total, 1.0, &mut used, &mut Vec::with_capacity(n), &mut out);
    Ok(out)
}

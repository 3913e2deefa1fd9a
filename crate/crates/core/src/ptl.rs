//! The progressive transformation loop.
//!
//! One iteration refits the Gaussian on the current real set `R`, scores
//! every instance of the virtual pool `V` by its multi-scale gap, samples
//! `n` candidates, has the transformer backend turn them into realistic
//! instances and finally moves them from `V` to `R`:
//! `R ← R ∪ transformed`, `V ← V \ selected`.
//!
//! Every step works on a copy. A failed iteration leaves the input state
//! untouched.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gap::{score_pool, GapError, GapScore, MultiScaleFeatures, Scale, ScaleMode, CANONICAL_SCALE, DEFAULT_SCALES};
use crate::gaussian::{fit_gaussian, FeatureSet, GaussianClassModel, ModelError, DEFAULT_DIM, DEFAULT_RIDGE_SCALE};
use crate::io::adapter::{validate_outputs, AdapterError, AdapterOutputs, AdapterRequest, AdapterRole, Backend, InstanceSet};
use crate::io::json::{read_json, write_json_atomic};
use crate::io::metadata::InstanceMetadata;
use crate::rng::derive_seed;
use crate::sampler::{select_candidates, weight, SamplerConfig, SamplerError};

pub const SNAPSHOT_VERSION: u32 = 1;
pub const DEFAULT_ITERATIONS: u64 = 5;
pub const DEFAULT_CATEGORY: &str = "human";

#[derive(Debug, Error)]
pub enum PtlError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("virtual pool is empty")]
    EmptyPool,
    #[error("real set needs at least 2 instances, has {0}")]
    EmptySet(usize),
    #[error("instance {0} is not in the virtual pool")]
    UnknownId(u64),
    #[error("transformed ids do not match the selection (first difference: {0})")]
    IdMismatch(u64),
    #[error("instance {0} is in both the real set and the virtual pool")]
    IdOverlap(u64),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gap(#[from] GapError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("snapshot: {0}")]
    Snapshot(#[from] std::io::Error),
    #[error("unsupported snapshot version {0}")]
    SnapshotVersion(u32),
    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: u64,
        #[source]
        source: Box<PtlError>,
    },
}

impl PtlError {
    /// The error with any iteration wrapper removed.
    pub fn root(&self) -> &PtlError {
        match self {
            PtlError::Iteration { source, .. } => source.root(),
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    OriginalReal,
    TransformedVirtual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealInstance {
    pub origin: Origin,
    /// Iteration whose selection brought this instance in.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub added_in_iteration: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<InstanceMetadata>,
    /// Canonical-scale features reported by the transformer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transformed_features: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualInstance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<InstanceMetadata>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedCandidate {
    pub instance_id: u64,
    pub gap: f64,
    pub weight: f64,
    pub argmin_scale: Scale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub dim: usize,
    pub sample_count: usize,
    pub ridge_scale_used: f64,
    pub mean_norm: f64,
}

impl ModelSummary {
    pub fn of(model: &GaussianClassModel<f64>) -> Self {
        Self {
            dim: model.dim(),
            sample_count: model.sample_count,
            ridge_scale_used: model.ridge_scale_used,
            mean_norm: model.mean_norm(),
        }
    }
}

/// Auditable record of one selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionManifest {
    pub iteration: u64,
    pub seed: u64,
    pub tau: f64,
    pub n_requested: usize,
    pub pool_size: usize,
    pub selected: Vec<SelectedCandidate>,
    pub shortfall: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_gap_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_summary: Option<ModelSummary>,
}

impl SelectionManifest {
    /// Build a manifest by sampling from `scores`.
    pub fn select(
        iteration: u64,
        scores: &[GapScore<f64>],
        cfg: &SamplerConfig,
        model: Option<&GaussianClassModel<f64>>,
    ) -> Result<Self, SamplerError> {
        let ids = select_candidates(scores, cfg)?;
        let by_id: HashMap<u64, &GapScore<f64>> = scores.iter().map(|s| (s.instance_id, s)).collect();
        let selected = ids
            .iter()
            .map(|id| {
                let s = by_id[id];
                SelectedCandidate {
                    instance_id: *id,
                    gap: s.gap,
                    weight: weight(s.gap, cfg.tau),
                    argmin_scale: s.argmin_scale,
                }
            })
            .collect();
        let pool_gap_mean = scores.iter().map(|s| s.gap).sum::<f64>() / scores.len() as f64;
        Ok(Self {
            iteration,
            seed: cfg.seed,
            tau: cfg.tau,
            n_requested: cfg.n,
            pool_size: scores.len(),
            selected,
            shortfall: cfg.n > scores.len(),
            pool_gap_mean: Some(pool_gap_mean),
            model_summary: model.map(ModelSummary::of),
        })
    }

    pub fn selected_ids(&self) -> Vec<u64> {
        self.selected.iter().map(|c| c.instance_id).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Completed,
    PoolExhausted,
}

/// The evolving pair `(R, V)` with its selection history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtlState {
    pub format_version: u32,
    pub category: String,
    pub iteration: u64,
    pub real_set: BTreeMap<u64, RealInstance>,
    pub virtual_pool: BTreeMap<u64, VirtualInstance>,
    pub model: Option<GaussianClassModel<f64>>,
    pub history: Vec<SelectionManifest>,
    /// Gaps of the whole pool, in id order, as scored in each iteration.
    #[serde(default)]
    pub pool_gaps: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
}

/// A transformed candidate as returned by the transformer backend.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedRecord {
    pub instance_id: u64,
    pub features: Vec<f32>,
}

impl PtlState {
    pub fn new(
        category: impl Into<String>,
        real_ids: impl IntoIterator<Item = u64>,
        pool: impl IntoIterator<Item = (u64, Option<InstanceMetadata>)>,
    ) -> Result<Self, PtlError> {
        let real_set: BTreeMap<u64, RealInstance> = real_ids
            .into_iter()
            .map(|id| {
                (
                    id,
                    RealInstance {
                        origin: Origin::OriginalReal,
                        added_in_iteration: None,
                        metadata: None,
                        transformed_features: None,
                    },
                )
            })
            .collect();
        let mut virtual_pool = BTreeMap::new();
        for (id, metadata) in pool {
            if real_set.contains_key(&id) {
                return Err(PtlError::IdOverlap(id));
            }
            virtual_pool.insert(id, VirtualInstance { metadata });
        }
        Ok(Self {
            format_version: SNAPSHOT_VERSION,
            category: category.into(),
            iteration: 0,
            real_set,
            virtual_pool,
            model: None,
            history: Vec::new(),
            pool_gaps: Vec::new(),
            stop_reason: None,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PtlError> {
        let state: Self = read_json(path)?;
        if state.format_version != SNAPSHOT_VERSION {
            return Err(PtlError::SnapshotVersion(state.format_version));
        }
        Ok(state)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PtlError> {
        write_json_atomic(path, self)?;
        Ok(())
    }

    pub fn total_instances(&self) -> usize {
        self.real_set.len() + self.virtual_pool.len()
    }

    pub fn count_origin(&self, origin: Origin) -> usize {
        self.real_set.values().filter(|r| r.origin == origin).count()
    }

    /// Check the structural invariants: disjoint sets, one manifest per
    /// completed iteration, and transformed members accounted for by the
    /// manifests.
    pub fn check_invariants(&self) -> Result<(), String> {
        if let Some(id) = self.real_set.keys().find(|id| self.virtual_pool.contains_key(id)) {
            return Err(format!("instance {id} is in both sets"));
        }
        if self.history.len() as u64 != self.iteration {
            return Err(format!(
                "history has {} manifests at iteration {}",
                self.history.len(),
                self.iteration
            ));
        }
        let selected: usize = self.history.iter().map(|m| m.selected.len()).sum();
        let transformed = self.count_origin(Origin::TransformedVirtual);
        if selected != transformed {
            return Err(format!(
                "{transformed} transformed instances but manifests record {selected}"
            ));
        }
        Ok(())
    }
}

/// Loop parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtlConfig {
    pub sampler: SamplerConfig,
    pub scales: Vec<Scale>,
    #[serde(default)]
    pub scale_mode: ScaleMode,
    /// Total number of iterations a run drives the state to.
    pub iterations: u64,
    pub ridge_scale: f64,
    pub dim: usize,
    /// Pull strength forwarded to the transformer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl Default for PtlConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            scales: DEFAULT_SCALES.to_vec(),
            scale_mode: ScaleMode::Strict,
            iterations: DEFAULT_ITERATIONS,
            ridge_scale: DEFAULT_RIDGE_SCALE,
            dim: DEFAULT_DIM,
            gamma: None,
        }
    }
}

impl PtlConfig {
    pub fn validate(&self) -> Result<(), PtlError> {
        self.sampler
            .validate()
            .map_err(|e| PtlError::InvalidConfig(e.to_string()))?;
        let bad = |m: &str| Err(PtlError::InvalidConfig(m.to_owned()));
        if self.iterations == 0 {
            return bad("iterations must be >= 1");
        }
        if self.scales.is_empty() {
            return bad("at least one scale is required");
        }
        if self.scales.contains(&CANONICAL_SCALE) {
            return bad("scale 0 is reserved for canonical embeddings");
        }
        if self.scales.iter().collect::<BTreeSet<_>>().len() != self.scales.len() {
            return bad("scales must be distinct");
        }
        if !(self.ridge_scale >= 0.0) || !self.ridge_scale.is_finite() {
            return bad("ridge_scale must be >= 0");
        }
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if let Some(g) = self.gamma {
            if !(0.0..=1.0).contains(&g) {
                return bad("gamma must be in [0, 1]");
            }
        }
        Ok(())
    }

    /// Sampling seed used in `iteration`.
    pub fn iteration_seed(&self, iteration: u64) -> u64 {
        derive_seed(self.sampler.seed, iteration)
    }
}

fn call_backend<B: Backend>(backend: &mut B, request: &AdapterRequest) -> Result<AdapterOutputs, PtlError> {
    let outputs = backend.invoke(request)?;
    validate_outputs(request, &outputs).map_err(|source| AdapterError::OutputValidation {
        role: request.role,
        source,
    })?;
    Ok(outputs)
}

/// Embed the current real set at the canonical scale and fit the Gaussian.
pub fn refit_model<E: Backend>(
    state: &PtlState,
    embedder: &mut E,
    cfg: &PtlConfig,
) -> Result<GaussianClassModel<f64>, PtlError> {
    let n = state.real_set.len();
    if n < 2 {
        return Err(PtlError::EmptySet(n));
    }
    let request = AdapterRequest {
        role: AdapterRole::Embedder,
        iteration: state.iteration,
        set: InstanceSet::Real,
        instance_ids: state.real_set.keys().copied().collect(),
        scales: vec![CANONICAL_SCALE],
        dim: cfg.dim,
        seed: cfg.iteration_seed(state.iteration),
        outputs: Vec::new(),
        context_ids: Vec::new(),
        target_mean: None,
        gamma: None,
    };
    let mut outputs = call_backend(embedder, &request)?;
    let mut members: Vec<_> = outputs
        .per_scale
        .remove(&CANONICAL_SCALE)
        .unwrap_or_default()
        .iter()
        .map(|v| v.cast::<f64>())
        .collect();
    members.sort_by_key(|v| v.instance_id);
    let set = FeatureSet::new(state.category.clone(), cfg.dim, members)?;
    Ok(fit_gaussian(&set, cfg.ridge_scale)?)
}

/// Embed the virtual pool at every configured scale, in pool id order.
pub fn embed_pool<E: Backend>(
    state: &PtlState,
    embedder: &mut E,
    cfg: &PtlConfig,
) -> Result<Vec<MultiScaleFeatures<f64>>, PtlError> {
    let request = AdapterRequest {
        role: AdapterRole::Embedder,
        iteration: state.iteration,
        set: InstanceSet::Virtual,
        instance_ids: state.virtual_pool.keys().copied().collect(),
        scales: cfg.scales.clone(),
        dim: cfg.dim,
        seed: cfg.iteration_seed(state.iteration),
        outputs: Vec::new(),
        context_ids: Vec::new(),
        target_mean: None,
        gamma: None,
    };
    let outputs = call_backend(embedder, &request)?;
    let mut by_id: BTreeMap<u64, MultiScaleFeatures<f64>> = state
        .virtual_pool
        .keys()
        .map(|&id| (id, MultiScaleFeatures::new(id)))
        .collect();
    for (&scale, vectors) in &outputs.per_scale {
        for v in vectors {
            let entry = by_id.get_mut(&v.instance_id).expect("validated against request");
            entry
                .per_scale
                .insert(scale, v.values.iter().map(|&x| x as f64).collect());
        }
    }
    Ok(by_id.into_values().collect())
}

/// Move `selected_ids` from the pool into the real set as transformed
/// instances.
pub fn set_update(
    state: &PtlState,
    selected_ids: &[u64],
    transformed: Vec<TransformedRecord>,
) -> Result<PtlState, PtlError> {
    let selected: BTreeSet<u64> = selected_ids.iter().copied().collect();
    for &id in selected_ids {
        if !state.virtual_pool.contains_key(&id) {
            return Err(PtlError::UnknownId(id));
        }
    }
    let mut returned = BTreeSet::new();
    for r in &transformed {
        if !selected.contains(&r.instance_id) || !returned.insert(r.instance_id) {
            return Err(PtlError::IdMismatch(r.instance_id));
        }
    }
    if let Some(&missing) = selected.difference(&returned).next() {
        return Err(PtlError::IdMismatch(missing));
    }
    if selected.len() != selected_ids.len() {
        let mut seen = BTreeSet::new();
        let dup = selected_ids.iter().find(|id| !seen.insert(**id)).copied();
        return Err(PtlError::IdMismatch(dup.unwrap_or_default()));
    }

    let mut next = state.clone();
    for r in transformed {
        let source = next
            .virtual_pool
            .remove(&r.instance_id)
            .expect("checked membership above");
        next.real_set.insert(
            r.instance_id,
            RealInstance {
                origin: Origin::TransformedVirtual,
                added_in_iteration: Some(state.iteration),
                metadata: source.metadata,
                transformed_features: Some(r.features),
            },
        );
    }
    Ok(next)
}

/// One full iteration: refit, score, select, transform, update.
pub fn run_iteration<E: Backend, T: Backend>(
    state: &PtlState,
    cfg: &PtlConfig,
    embedder: &mut E,
    transformer: &mut T,
) -> Result<PtlState, PtlError> {
    cfg.validate()?;
    if state.virtual_pool.is_empty() {
        return Err(PtlError::EmptyPool);
    }
    let iteration = state.iteration;
    let model = refit_model(state, embedder, cfg)?;
    let pool = embed_pool(state, embedder, cfg)?;
    let scores = score_pool(&model, &pool, &cfg.scales, cfg.scale_mode)?;

    let sampler = SamplerConfig {
        seed: cfg.iteration_seed(iteration),
        ..cfg.sampler
    };
    let manifest = SelectionManifest::select(iteration, &scores, &sampler, Some(&model))?;
    let selected = manifest.selected_ids();
    log::info!(
        "iteration {iteration}: pool {} mean gap {:.4}, selected {}{}",
        scores.len(),
        manifest.pool_gap_mean.unwrap_or(f64::NAN),
        selected.len(),
        if manifest.shortfall { " (shortfall)" } else { "" }
    );

    let request = AdapterRequest {
        role: AdapterRole::Transformer,
        iteration,
        set: InstanceSet::Virtual,
        instance_ids: selected.clone(),
        scales: vec![CANONICAL_SCALE],
        dim: cfg.dim,
        seed: sampler.seed,
        outputs: Vec::new(),
        context_ids: state.real_set.keys().copied().collect(),
        target_mean: Some(model.mean.clone()),
        gamma: cfg.gamma,
    };
    let mut outputs = call_backend(transformer, &request)?;
    let transformed = outputs
        .per_scale
        .remove(&CANONICAL_SCALE)
        .unwrap_or_default()
        .into_iter()
        .map(|v| TransformedRecord {
            instance_id: v.instance_id,
            features: v.values,
        })
        .collect();

    let mut next = set_update(state, &selected, transformed)?;
    next.iteration = iteration + 1;
    next.model = Some(model);
    next.history.push(manifest);
    next.pool_gaps.push(scores.iter().map(|s| s.gap).collect());
    next.stop_reason = None;
    Ok(next)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: PtlState,
    pub iterations_run: u64,
    pub stop_reason: StopReason,
}

/// Drive `initial` until it has completed `cfg.iterations` iterations or the
/// pool runs dry. With `snapshot` set, the state is persisted after every
/// completed iteration and once more with the stop reason.
pub fn run<E: Backend, T: Backend>(
    initial: &PtlState,
    cfg: &PtlConfig,
    embedder: &mut E,
    transformer: &mut T,
    snapshot: Option<&Path>,
) -> Result<RunOutcome, PtlError> {
    cfg.validate()?;
    let mut state = initial.clone();
    let mut iterations_run = 0;
    let mut stop_reason = StopReason::Completed;
    while state.iteration < cfg.iterations {
        if state.virtual_pool.is_empty() {
            stop_reason = StopReason::PoolExhausted;
            break;
        }
        let iteration = state.iteration;
        state = run_iteration(&state, cfg, embedder, transformer).map_err(|e| PtlError::Iteration {
            iteration,
            source: Box::new(e),
        })?;
        iterations_run += 1;
        if let Some(path) = snapshot {
            state.save(path)?;
        }
    }
    state.stop_reason = Some(stop_reason);
    if let Some(path) = snapshot {
        state.save(path)?;
    }
    Ok(RunOutcome {
        state,
        iterations_run,
        stop_reason,
    })
}

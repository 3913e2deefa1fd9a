use std::sync::Arc;

use crate::gap::CANONICAL_SCALE;
use crate::gaussian::FeatureVector;
use crate::io::adapter::{AdapterError, AdapterOutputs, AdapterRequest, AdapterRole, Backend, InstanceSet};

use super::world::SyntheticWorld;

fn unknown(role: AdapterRole, id: u64) -> AdapterError {
    AdapterError::Backend {
        role,
        message: format!("unknown instance id {id}"),
    }
}

fn to_f32(values: &[f64]) -> Vec<f32> {
    values.iter().map(|&x| x as f32).collect()
}

/// In-process embedder backed by a [`SyntheticWorld`].
///
/// Real instances return their stored feature. Virtual instances return
/// their scale variant; once they sit in the real set (request set `real`)
/// they return their transformed feature instead.
#[derive(Debug, Clone)]
pub struct SimulatedEmbedder {
    world: Arc<SyntheticWorld>,
}

impl SimulatedEmbedder {
    pub fn new(world: Arc<SyntheticWorld>) -> Self {
        Self { world }
    }

    fn embed_one(&self, id: u64, scale: u32, set: InstanceSet) -> Result<Vec<f32>, AdapterError> {
        let role = AdapterRole::Embedder;
        let w = &self.world;
        if let Some(x) = w.real_feature(id) {
            return Ok(to_f32(x));
        }
        if w.virtual_base(id).is_none() {
            return Err(unknown(role, id));
        }
        if set == InstanceSet::Real {
            return Ok(to_f32(&w.transformed(id).expect("virtual id")));
        }
        if scale == CANONICAL_SCALE {
            return Ok(to_f32(w.virtual_base(id).expect("virtual id")));
        }
        w.virtual_at_scale(id, scale)
            .map(<[f32]>::to_vec)
            .ok_or_else(|| AdapterError::Backend {
                role,
                message: format!("scale {scale} is not rendered by this world"),
            })
    }
}

impl Backend for SimulatedEmbedder {
    fn invoke(&mut self, request: &AdapterRequest) -> Result<AdapterOutputs, AdapterError> {
        let mut out = AdapterOutputs::default();
        for &scale in &request.scales {
            let vectors = request
                .instance_ids
                .iter()
                .map(|&id| Ok(FeatureVector::new(id, self.embed_one(id, scale, request.set)?)))
                .collect::<Result<Vec<_>, AdapterError>>()?;
            out.per_scale.insert(scale, vectors);
        }
        Ok(out)
    }
}

/// In-process transformer: pulls each selected virtual instance toward the
/// real mean, `x' = x + γ(μ_R − x) + noise`.
#[derive(Debug, Clone)]
pub struct SimulatedTransformer {
    world: Arc<SyntheticWorld>,
}

impl SimulatedTransformer {
    pub fn new(world: Arc<SyntheticWorld>) -> Self {
        Self { world }
    }
}

impl Backend for SimulatedTransformer {
    fn invoke(&mut self, request: &AdapterRequest) -> Result<AdapterOutputs, AdapterError> {
        let role = AdapterRole::Transformer;
        let vectors = request
            .instance_ids
            .iter()
            .map(|&id| {
                self.world
                    .transformed(id)
                    .map(|x| FeatureVector::new(id, to_f32(&x)))
                    .ok_or_else(|| unknown(role, id))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut out = AdapterOutputs::default();
        out.per_scale.insert(CANONICAL_SCALE, vectors);
        Ok(out)
    }
}

/// Embedder and transformer sharing one world.
pub fn simulated_backends(world: Arc<SyntheticWorld>) -> (SimulatedEmbedder, SimulatedTransformer) {
    (SimulatedEmbedder::new(world.clone()), SimulatedTransformer::new(world))
}

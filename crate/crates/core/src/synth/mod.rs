//! Synthetic world with in-process backends, for exercising the loop
//! without a detector or a generator.

mod backends;
pub mod report;
mod world;

use std::path::Path;
use std::sync::Arc;

pub use backends::{simulated_backends, SimulatedEmbedder, SimulatedTransformer};
pub use world::{GridSpec, SynthError, SyntheticConfig, SyntheticWorld};

use crate::ptl::{run, PtlConfig, PtlError, RunOutcome};

/// Generate a world and drive the loop on it with the simulated backends.
pub fn run_synthetic(
    world: Arc<SyntheticWorld>,
    cfg: &PtlConfig,
    snapshot: Option<&Path>,
) -> Result<RunOutcome, PtlError> {
    let (mut embedder, mut transformer) = simulated_backends(world.clone());
    let cfg = PtlConfig {
        dim: world.dim(),
        ..cfg.clone()
    };
    run(&world.initial_state(), &cfg, &mut embedder, &mut transformer, snapshot)
}

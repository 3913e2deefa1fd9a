use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::gap::{Scale, DEFAULT_SCALES};
use crate::gaussian::{FeatureSet, FeatureVector, DEFAULT_DIM};
use crate::io::metadata::InstanceMetadata;
use crate::linalg::{CholeskyFactor, SpdMatrix};
use crate::ptl::{PtlState, DEFAULT_CATEGORY};
use crate::rng::{derive_seed, seeded_rng, SeededRng};

/// Seed-stream key of the transformation noise.
const TRANSFORM_STREAM: u64 = u64::MAX;

/// Camera grid the virtual pool is rendered over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub characters: u8,
    pub poses: u8,
    pub altitudes_m: Vec<f64>,
    pub radii_m: Vec<f64>,
    pub camera_angles_deg: Vec<f64>,
    pub sun_angles: u8,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            characters: 8,
            poses: 3,
            altitudes_m: (1..=10).map(|i| 5.0 * i as f64).collect(),
            radii_m: (1..=6).map(|i| 5.0 * i as f64).collect(),
            camera_angles_deg: (0..12).map(|i| 30.0 * i as f64).collect(),
            sun_angles: 1,
        }
    }
}

impl GridSpec {
    pub fn cardinality(&self) -> usize {
        self.characters as usize
            * self.poses as usize
            * self.altitudes_m.len()
            * self.radii_m.len()
            * self.camera_angles_deg.len()
            * self.sun_angles as usize
    }
}

/// Parameters of the synthetic world.
///
/// With the defaults, `(1−γ)²v² + η² = 1`, so transformed instances scatter
/// around their pulled position with exactly the real covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub dim: usize,
    /// Size of the initial real set.
    pub real_count: usize,
    pub grid: GridSpec,
    /// Offset of a virtual instance along the gap direction, per meter of
    /// camera distance.
    pub kappa: f64,
    /// Virtual noise covariance as a multiple of the real covariance.
    pub virtual_noise: f64,
    /// Fraction of the way a transformation pulls a virtual instance
    /// toward the real mean.
    pub gamma: f64,
    /// Standard deviation of the transformation noise, in units of the real
    /// covariance.
    pub transform_noise: f64,
    pub scales: Vec<Scale>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            real_count: 50,
            grid: GridSpec::default(),
            kappa: 2.5,
            virtual_noise: 4.0,
            gamma: 0.8,
            transform_noise: 0.6,
            scales: DEFAULT_SCALES.to_vec(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    InvalidConfig(String),
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_owned()));
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if self.real_count < 2 {
            return bad("real_count must be >= 2");
        }
        if !(self.kappa >= 0.0) {
            return bad("kappa must be >= 0");
        }
        if !(self.virtual_noise > 0.0) {
            return bad("virtual_noise must be > 0");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1]");
        }
        if !(self.transform_noise >= 0.0) {
            return bad("transform_noise must be >= 0");
        }
        if self.scales.is_empty() || self.scales.contains(&0) {
            return bad("scales must be non-empty and positive");
        }
        let g = &self.grid;
        if g.altitudes_m.iter().chain(&g.radii_m).any(|v| !(*v > 0.0)) {
            return bad("altitudes and radii must be > 0");
        }
        if g.camera_angles_deg.iter().any(|a| !(0.0..360.0).contains(a)) {
            return bad("camera angles must be in [0, 360)");
        }
        Ok(())
    }
}

/// Real and virtual feature distributions keyed to a camera grid.
///
/// Real features follow `N(μ_R, Σ_R)`. A virtual instance rendered at
/// altitude `a` and radius `r` has base feature
/// `μ_R + κ·√(a²+r²)·u + e` with `e ~ N(0, v²Σ_R)` and a fixed unit
/// direction `u`. Each scale variant adds an independent jitter of standard
/// deviation `0.05·√trace(Σ_V)/dim`.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub config: SyntheticConfig,
    pub real_mean: Vec<f64>,
    pub real_covariance: SpdMatrix<f64>,
    real_factor: CholeskyFactor<f64>,
    pub direction: Vec<f64>,
    pub jitter_sigma: f64,
    real: Vec<FeatureVector<f64>>,
    pool: Vec<InstanceMetadata>,
    /// Row-major `pool.len() × dim` base features.
    virtual_base: Vec<f64>,
    /// `scales.len()` blocks of `pool.len() × dim` scale variants.
    virtual_scaled: Vec<f32>,
    first_virtual_id: u64,
}

fn normals(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn lower_times(factor: &CholeskyFactor<f64>, z: &[f64]) -> Vec<f64> {
    let n = factor.dim();
    let l = factor.lower();
    (0..n)
        .map(|i| (0..=i).map(|k| l[i * n + k] * z[k]).sum())
        .collect()
}

impl SyntheticWorld {
    pub fn generate(config: &SyntheticConfig) -> Result<Self, SynthError> {
        config.validate()?;
        let dim = config.dim;
        let mut rng = seeded_rng(config.seed);

        let real_mean = normals(&mut rng, dim);
        // Σ_R = B·Bᵀ/dim + ½I
        let b = normals(&mut rng, dim * dim);
        let mut cov = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                let s: f64 = (0..dim).map(|k| b[i * dim + k] * b[j * dim + k]).sum();
                cov[i * dim + j] = s / dim as f64 + if i == j { 0.5 } else { 0.0 };
            }
        }
        let real_covariance = SpdMatrix::new(dim, cov).expect("finite by construction");
        let real_factor = real_covariance
            .cholesky()
            .expect("B·Bᵀ/dim + I/2 is positive definite");
        let raw_u = normals(&mut rng, dim);
        let norm = raw_u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let direction: Vec<f64> = raw_u.iter().map(|x| x / norm).collect();

        let v2 = config.virtual_noise * config.virtual_noise;
        let jitter_sigma = 0.05 * (v2 * real_covariance.trace()).sqrt() / dim as f64;

        let real = (0..config.real_count as u64)
            .map(|id| {
                let z = normals(&mut rng, dim);
                let x = lower_times(&real_factor, &z);
                FeatureVector::new(id, x.iter().zip(&real_mean).map(|(a, m)| a + m).collect())
            })
            .collect();

        let first_virtual_id = config.real_count as u64;
        let g = &config.grid;
        let mut pool = Vec::with_capacity(g.cardinality());
        let mut next_id = first_virtual_id;
        for character in 0..g.characters {
            for pose in 0..g.poses {
                for &altitude_m in &g.altitudes_m {
                    for &radius_m in &g.radii_m {
                        for &camera_angle_deg in &g.camera_angles_deg {
                            for sun_angle in 0..g.sun_angles {
                                pool.push(InstanceMetadata {
                                    instance_id: next_id,
                                    character,
                                    pose,
                                    altitude_m,
                                    radius_m,
                                    camera_angle_deg,
                                    sun_angle,
                                });
                                next_id += 1;
                            }
                        }
                    }
                }
            }
        }

        let mut virtual_base = Vec::with_capacity(pool.len() * dim);
        for meta in &pool {
            let z = normals(&mut rng, dim);
            let e = lower_times(&real_factor, &z);
            let offset = config.kappa * meta.camera_distance();
            for k in 0..dim {
                virtual_base.push(real_mean[k] + offset * direction[k] + config.virtual_noise * e[k]);
            }
        }

        let mut virtual_scaled = Vec::with_capacity(config.scales.len() * pool.len() * dim);
        for &scale in &config.scales {
            let mut srng = seeded_rng(derive_seed(config.seed, scale as u64));
            for x in &virtual_base {
                let j: f64 = srng.sample(StandardNormal);
                virtual_scaled.push((x + jitter_sigma * j) as f32);
            }
        }

        Ok(Self {
            config: config.clone(),
            real_mean,
            real_covariance,
            real_factor,
            direction,
            jitter_sigma,
            real,
            pool,
            virtual_base,
            virtual_scaled,
            first_virtual_id,
        })
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn real_features(&self) -> &[FeatureVector<f64>] {
        &self.real
    }

    pub fn real_set(&self) -> FeatureSet<f64> {
        FeatureSet::new(DEFAULT_CATEGORY, self.dim(), self.real.clone()).expect("valid by construction")
    }

    pub fn pool_metadata(&self) -> &[InstanceMetadata] {
        &self.pool
    }

    pub fn is_real(&self, id: u64) -> bool {
        id < self.first_virtual_id
    }

    fn pool_index(&self, id: u64) -> Option<usize> {
        let idx = id.checked_sub(self.first_virtual_id)? as usize;
        (idx < self.pool.len()).then_some(idx)
    }

    pub fn metadata(&self, id: u64) -> Option<&InstanceMetadata> {
        self.pool_index(id).map(|i| &self.pool[i])
    }

    pub fn real_feature(&self, id: u64) -> Option<&[f64]> {
        self.real.get(id as usize).filter(|_| self.is_real(id)).map(|v| v.values.as_slice())
    }

    /// Canonical (unresized) feature of a virtual instance.
    pub fn virtual_base(&self, id: u64) -> Option<&[f64]> {
        let dim = self.dim();
        self.pool_index(id).map(|i| &self.virtual_base[i * dim..(i + 1) * dim])
    }

    pub fn virtual_at_scale(&self, id: u64, scale: Scale) -> Option<&[f32]> {
        let dim = self.dim();
        let i = self.pool_index(id)?;
        let s = self.config.scales.iter().position(|&x| x == scale)?;
        let start = (s * self.pool.len() + i) * dim;
        Some(&self.virtual_scaled[start..start + dim])
    }

    /// `x + γ(μ_R − x) + η·L_R·z` with `z` keyed to the instance, so the
    /// result does not depend on call order.
    pub fn transformed(&self, id: u64) -> Option<Vec<f64>> {
        let base = self.virtual_base(id)?;
        Some(self.transform_values(base, derive_seed(derive_seed(self.config.seed, TRANSFORM_STREAM), id)))
    }

    pub fn transform_values(&self, x: &[f64], noise_seed: u64) -> Vec<f64> {
        let cfg = &self.config;
        let noise = if cfg.transform_noise > 0.0 {
            let z = normals(&mut seeded_rng(noise_seed), self.dim());
            lower_times(&self.real_factor, &z)
        } else {
            vec![0.0; self.dim()]
        };
        x.iter()
            .zip(&self.real_mean)
            .zip(&noise)
            .map(|((&xi, &mi), &ni)| xi + cfg.gamma * (mi - xi) + cfg.transform_noise * ni)
            .collect()
    }

    /// Fresh engine state: the real set in `R`, the whole grid in `V`.
    pub fn initial_state(&self) -> PtlState {
        PtlState::new(
            DEFAULT_CATEGORY,
            self.real.iter().map(|v| v.instance_id),
            self.pool.iter().map(|m| (m.instance_id, Some(*m))),
        )
        .expect("real and virtual ids are disjoint by construction")
    }
}

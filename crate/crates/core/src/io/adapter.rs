//! Driving external embedder and transformer backends.
//!
//! A backend is any executable invoked as `<cmd> --request <manifest.json>`.
//! The manifest names the instance ids, the scales wanted and one output
//! PTLF path per scale. Exit status 0 means success; any other status is a
//! failure. Outputs are written into a private staging directory and only
//! moved to their final location once every file has been read back and
//! checked against the request.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ptlf::read_features;
use crate::gap::Scale;
use crate::gaussian::FeatureVector;

pub const DEFAULT_ADAPTER_TIMEOUT: Duration = Duration::from_secs(3600);
const STDERR_TAIL_BYTES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterRole {
    Embedder,
    Transformer,
}

impl std::fmt::Display for AdapterRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AdapterRole::Embedder => "embedder",
            AdapterRole::Transformer => "transformer",
        })
    }
}

/// Which engine set the requested ids currently belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceSet {
    Real,
    Virtual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub scale: Scale,
    pub path: PathBuf,
}

/// Request manifest handed to a backend.
///
/// Embedder requests ask for features of `instance_ids` at every scale in
/// `scales`. Transformer requests ask for transformed canonical-scale
/// features of the selected `instance_ids`; `context_ids` then lists the
/// full current real set and `target_mean` the current model mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterRequest {
    pub role: AdapterRole,
    pub iteration: u64,
    pub set: InstanceSet,
    pub instance_ids: Vec<u64>,
    pub scales: Vec<Scale>,
    pub dim: usize,
    pub seed: u64,
    #[serde(default)]
    pub outputs: Vec<OutputSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub context_ids: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl AdapterRequest {
    /// Short name used for staging and output directories.
    pub fn label(&self) -> String {
        let set = match self.set {
            InstanceSet::Real => "real",
            InstanceSet::Virtual => "virtual",
        };
        format!("iter{:04}-{}-{}", self.iteration, self.role, set)
    }
}

/// Features returned by a backend, one entry per scale.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdapterOutputs {
    pub per_scale: BTreeMap<Scale, Vec<FeatureVector<f32>>>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OutputValidationError {
    #[error("no output for scale {scale}")]
    MissingOutput { scale: Scale },
    #[error("output for scale {scale} is malformed: {message}")]
    Malformed { scale: Scale, message: String },
    #[error("output file declares scale {found}, request expected {expected}")]
    WrongScale { expected: Scale, found: Scale },
    #[error("scale {scale}: missing instance {instance_id}")]
    MissingId { instance_id: u64, scale: Scale },
    #[error("scale {scale}: unexpected instance {instance_id}")]
    UnexpectedId { instance_id: u64, scale: Scale },
    #[error("scale {scale}: instance {instance_id} has dimension {found}, expected {expected}")]
    WrongDim {
        instance_id: u64,
        scale: Scale,
        expected: usize,
        found: usize,
    },
    #[error("unrequested scale {scale} in output")]
    UnexpectedScale { scale: Scale },
}

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("{role} exited with {}: {stderr_tail}", code.map_or("a signal".to_string(), |c| format!("code {c}")))]
    AdapterFailure {
        role: AdapterRole,
        code: Option<i32>,
        stderr_tail: String,
    },
    #[error("{role} timed out after {timeout:?}")]
    Timeout { role: AdapterRole, timeout: Duration },
    #[error("could not launch {role}: {source}")]
    Spawn {
        role: AdapterRole,
        source: std::io::Error,
    },
    #[error("{role} output rejected: {source}")]
    OutputValidation {
        role: AdapterRole,
        source: OutputValidationError,
    },
    #[error("{role}: {message}")]
    Backend { role: AdapterRole, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Anything that can answer an [`AdapterRequest`].
pub trait Backend {
    fn invoke(&mut self, request: &AdapterRequest) -> Result<AdapterOutputs, AdapterError>;
}

impl<B: Backend + ?Sized> Backend for &mut B {
    fn invoke(&mut self, request: &AdapterRequest) -> Result<AdapterOutputs, AdapterError> {
        (**self).invoke(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn invoke(&mut self, request: &AdapterRequest) -> Result<AdapterOutputs, AdapterError> {
        (**self).invoke(request)
    }
}

/// Check that `outputs` carries exactly the requested ids at exactly the
/// requested scales with the requested dimension.
pub fn validate_outputs(
    request: &AdapterRequest,
    outputs: &AdapterOutputs,
) -> Result<(), OutputValidationError> {
    let wanted: BTreeSet<u64> = request.instance_ids.iter().copied().collect();
    for &scale in outputs.per_scale.keys() {
        if !request.scales.contains(&scale) {
            return Err(OutputValidationError::UnexpectedScale { scale });
        }
    }
    for &scale in &request.scales {
        let vectors = outputs
            .per_scale
            .get(&scale)
            .ok_or(OutputValidationError::MissingOutput { scale })?;
        let mut seen = BTreeSet::new();
        for v in vectors {
            if !wanted.contains(&v.instance_id) || !seen.insert(v.instance_id) {
                return Err(OutputValidationError::UnexpectedId {
                    instance_id: v.instance_id,
                    scale,
                });
            }
            if v.dim() != request.dim {
                return Err(OutputValidationError::WrongDim {
                    instance_id: v.instance_id,
                    scale,
                    expected: request.dim,
                    found: v.dim(),
                });
            }
        }
        if let Some(&missing) = wanted.difference(&seen).next() {
            return Err(OutputValidationError::MissingId {
                instance_id: missing,
                scale,
            });
        }
    }
    Ok(())
}

/// Executable plus leading arguments. `--request <path>` is appended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterEndpoint {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

impl AdapterEndpoint {
    /// Split a whitespace-separated command template such as
    /// `python3 adapter.py embed`.
    pub fn parse(template: &str) -> Option<Self> {
        let mut parts = template.split_whitespace().map(str::to_owned);
        let program = parts.next()?;
        Some(Self {
            program,
            args: parts.collect(),
        })
    }
}

/// Kill the adapter and anything it started.
fn kill_tree(child: &mut std::process::Child) {
    #[cfg(unix)]
    if let Ok(pid) = i32::try_from(child.id()) {
        // SAFETY: signalling the process group created for this child.
        unsafe {
            libc::kill(-pid, libc::SIGKILL);
        }
    }
    let _ = child.kill();
}

fn tail(bytes: &[u8]) -> String {
    let start = bytes.len().saturating_sub(STDERR_TAIL_BYTES);
    String::from_utf8_lossy(&bytes[start..]).trim().to_owned()
}

/// Run one backend process for `request` and return its validated outputs.
///
/// The request is rewritten with output paths inside a fresh staging
/// directory under `work_dir`. On success the staging directory is renamed
/// to `work_dir/<request label>`; on any failure it is removed.
pub fn invoke_adapter(
    endpoint: &AdapterEndpoint,
    request: &AdapterRequest,
    work_dir: &Path,
    timeout: Duration,
) -> Result<AdapterOutputs, AdapterError> {
    let role = request.role;
    std::fs::create_dir_all(work_dir)?;
    let staging = tempfile::Builder::new()
        .prefix(".staging-")
        .tempdir_in(work_dir)?;

    let mut req = request.clone();
    req.outputs = req
        .scales
        .iter()
        .map(|&scale| OutputSpec {
            scale,
            path: staging.path().join(format!("{}-scale{scale}.ptlf", role)),
        })
        .collect();
    let request_path = staging.path().join("request.json");
    super::json::write_json_atomic(&request_path, &req)?;

    let mut command = Command::new(&endpoint.program);
    #[cfg(unix)]
    std::os::unix::process::CommandExt::process_group(&mut command, 0);
    let mut child = command
        .args(&endpoint.args)
        .arg("--request")
        .arg(&request_path)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| AdapterError::Spawn { role, source })?;

    let mut stderr = child.stderr.take().expect("stderr is piped");
    let reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stderr.read_to_end(&mut buf);
        buf
    });

    let started = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if started.elapsed() >= timeout {
            kill_tree(&mut child);
            let _ = child.wait();
            drop(reader);
            return Err(AdapterError::Timeout { role, timeout });
        }
        std::thread::sleep(Duration::from_millis(5));
    };
    let stderr_bytes = reader.join().unwrap_or_default();
    if !status.success() {
        return Err(AdapterError::AdapterFailure {
            role,
            code: status.code(),
            stderr_tail: tail(&stderr_bytes),
        });
    }

    let invalid = |source| AdapterError::OutputValidation { role, source };
    let mut outputs = AdapterOutputs::default();
    for spec in &req.outputs {
        if !spec.path.exists() {
            return Err(invalid(OutputValidationError::MissingOutput { scale: spec.scale }));
        }
        let file = read_features(&spec.path).map_err(|e| {
            invalid(OutputValidationError::Malformed {
                scale: spec.scale,
                message: e.to_string(),
            })
        })?;
        if file.scale != spec.scale {
            return Err(invalid(OutputValidationError::WrongScale {
                expected: spec.scale,
                found: file.scale,
            }));
        }
        outputs.per_scale.insert(spec.scale, file.vectors);
    }
    validate_outputs(&req, &outputs).map_err(invalid)?;

    let final_dir = work_dir.join(request.label());
    if final_dir.exists() {
        std::fs::remove_dir_all(&final_dir)?;
    }
    let staged = staging.keep();
    std::fs::rename(&staged, &final_dir)?;
    Ok(outputs)
}

/// Backend implemented by an external process.
#[derive(Debug, Clone)]
pub struct SubprocessBackend {
    pub endpoint: AdapterEndpoint,
    pub work_dir: PathBuf,
    pub timeout: Duration,
}

impl SubprocessBackend {
    pub fn new(endpoint: AdapterEndpoint, work_dir: impl Into<PathBuf>) -> Self {
        Self {
            endpoint,
            work_dir: work_dir.into(),
            timeout: DEFAULT_ADAPTER_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl Backend for SubprocessBackend {
    fn invoke(&mut self, request: &AdapterRequest) -> Result<AdapterOutputs, AdapterError> {
        invoke_adapter(&self.endpoint, request, &self.work_dir, self.timeout)
    }
}

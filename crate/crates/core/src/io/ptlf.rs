//! The PTLF binary feature file.
//!
//! ```text
//! header (22 bytes, little-endian)
//!   magic   [u8; 4]  "PTLF"
//!   version u16      1
//!   dim     u32      >= 1
//!   scale   u32      0 = canonical
//!   count   u64
//! body: count records of
//!   id      u64
//!   values  [f32; dim]  IEEE-754
//! ```
//!
//! One file holds exactly one scale.

use std::collections::HashSet;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::gap::Scale;
use crate::gaussian::FeatureVector;
use crate::scalar::Scalar;

pub const MAGIC: [u8; 4] = *b"PTLF";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 22;

#[derive(Debug, Error)]
pub enum FeatureFileError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    VersionMismatch(u16),
    #[error("file truncated: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: u64, found: u64 },
    #[error("{extra} bytes after the last declared record")]
    TrailingBytes { extra: u64 },
    #[error("instance {instance_id} has a non-finite value")]
    NonFiniteValue { instance_id: u64 },
    #[error("feature dimension must be at least 1")]
    ZeroDim,
    #[error("instance {instance_id} has dimension {found}, file dimension is {expected}")]
    DimensionMismatch {
        instance_id: u64,
        expected: usize,
        found: usize,
    },
    #[error("duplicate instance id {0}")]
    DuplicateId(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureFileHeader {
    pub version: u16,
    pub dim: u32,
    pub scale: Scale,
    pub count: u64,
}

impl FeatureFileHeader {
    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..6].copy_from_slice(&self.version.to_le_bytes());
        out[6..10].copy_from_slice(&self.dim.to_le_bytes());
        out[10..14].copy_from_slice(&self.scale.to_le_bytes());
        out[14..22].copy_from_slice(&self.count.to_le_bytes());
        out
    }

    fn decode(bytes: &[u8]) -> Result<Self, FeatureFileError> {
        if bytes.len() < 4 || bytes[0..4] != MAGIC {
            let mut found = [0u8; 4];
            let n = bytes.len().min(4);
            found[..n].copy_from_slice(&bytes[..n]);
            if n == 4 {
                return Err(FeatureFileError::BadMagic(found));
            }
        }
        if bytes.len() < HEADER_LEN {
            return Err(FeatureFileError::TruncatedFile {
                expected: HEADER_LEN as u64,
                found: bytes.len() as u64,
            });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(FeatureFileError::VersionMismatch(version));
        }
        let dim = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
        if dim == 0 {
            return Err(FeatureFileError::ZeroDim);
        }
        Ok(Self {
            version,
            dim,
            scale: u32::from_le_bytes(bytes[10..14].try_into().unwrap()),
            count: u64::from_le_bytes(bytes[14..22].try_into().unwrap()),
        })
    }

    fn record_len(&self) -> u64 {
        8 + 4 * self.dim as u64
    }
}

/// Decoded contents of one PTLF file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub scale: Scale,
    pub dim: usize,
    pub vectors: Vec<FeatureVector<f32>>,
}

/// Serialize vectors into PTLF bytes. `dim` is explicit so that an empty
/// file still declares its dimension.
pub fn encode_features<T: Scalar>(
    scale: Scale,
    dim: usize,
    vectors: &[FeatureVector<T>],
) -> Result<Vec<u8>, FeatureFileError> {
    if dim == 0 {
        return Err(FeatureFileError::ZeroDim);
    }
    let header = FeatureFileHeader {
        version: VERSION,
        dim: dim as u32,
        scale,
        count: vectors.len() as u64,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + vectors.len() * header.record_len() as usize);
    out.extend_from_slice(&header.encode());
    let mut seen = HashSet::with_capacity(vectors.len());
    for v in vectors {
        if v.dim() != dim {
            return Err(FeatureFileError::DimensionMismatch {
                instance_id: v.instance_id,
                expected: dim,
                found: v.dim(),
            });
        }
        if !seen.insert(v.instance_id) {
            return Err(FeatureFileError::DuplicateId(v.instance_id));
        }
        out.extend_from_slice(&v.instance_id.to_le_bytes());
        for &x in &v.values {
            let x = x.to_f64_lossy() as f32;
            if !x.is_finite() {
                return Err(FeatureFileError::NonFiniteValue {
                    instance_id: v.instance_id,
                });
            }
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

/// Write a PTLF file and fsync it before returning.
pub fn write_features<T: Scalar>(
    path: impl AsRef<Path>,
    scale: Scale,
    dim: usize,
    vectors: &[FeatureVector<T>],
) -> Result<(), FeatureFileError> {
    let bytes = encode_features(scale, dim, vectors)?;
    let mut f = File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureFile, FeatureFileError> {
    let header = FeatureFileHeader::decode(bytes)?;
    let record_len = header.record_len();
    let expected = header
        .count
        .checked_mul(record_len)
        .and_then(|b| b.checked_add(HEADER_LEN as u64))
        .unwrap_or(u64::MAX);
    let found = bytes.len() as u64;
    if found < expected {
        return Err(FeatureFileError::TruncatedFile { expected, found });
    }
    if found > expected {
        return Err(FeatureFileError::TrailingBytes {
            extra: found - expected,
        });
    }

    let dim = header.dim as usize;
    let mut vectors = Vec::with_capacity(header.count as usize);
    let mut seen = HashSet::with_capacity(header.count as usize);
    for rec in bytes[HEADER_LEN..].chunks_exact(record_len as usize) {
        let instance_id = u64::from_le_bytes(rec[..8].try_into().unwrap());
        let values: Vec<f32> = rec[8..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureFileError::NonFiniteValue { instance_id });
        }
        if !seen.insert(instance_id) {
            return Err(FeatureFileError::DuplicateId(instance_id));
        }
        vectors.push(FeatureVector::new(instance_id, values));
    }
    Ok(FeatureFile {
        scale: header.scale,
        dim,
        vectors,
    })
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureFile, FeatureFileError> {
    decode_features(&std::fs::read(path)?)
}

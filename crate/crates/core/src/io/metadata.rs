//! Per-instance imaging-condition sidecar (CSV).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const METADATA_HEADER: [&str; 7] = [
    "instance_id",
    "character",
    "pose",
    "altitude_m",
    "radius_m",
    "camera_angle_deg",
    "sun_angle",
];

#[derive(Debug, Error)]
pub enum MetadataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    ParseError { line: u64, message: String },
    #[error("instance {instance_id}: {message}")]
    InvalidRecord { instance_id: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Imaging conditions under which a virtual instance was rendered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetadata {
    pub instance_id: u64,
    pub character: u8,
    pub pose: u8,
    pub altitude_m: f64,
    pub radius_m: f64,
    pub camera_angle_deg: f64,
    pub sun_angle: u8,
}

impl InstanceMetadata {
    pub fn validate(&self) -> Result<(), MetadataError> {
        let bad = |message: &str| {
            Err(MetadataError::InvalidRecord {
                instance_id: self.instance_id,
                message: message.to_owned(),
            })
        };
        if !(self.altitude_m > 0.0) || !self.altitude_m.is_finite() {
            return bad("altitude_m must be > 0");
        }
        if !(self.radius_m > 0.0) || !self.radius_m.is_finite() {
            return bad("radius_m must be > 0");
        }
        if !(0.0..360.0).contains(&self.camera_angle_deg) {
            return bad("camera_angle_deg must be in [0, 360)");
        }
        Ok(())
    }

    /// Euclidean distance from the camera to the subject.
    pub fn camera_distance(&self) -> f64 {
        self.altitude_m.hypot(self.radius_m)
    }
}

fn parse_field<F: std::str::FromStr>(raw: &str, name: &str, line: u64) -> Result<F, MetadataError>
where
    F::Err: std::fmt::Display,
{
    raw.trim().parse().map_err(|e| MetadataError::ParseError {
        line,
        message: format!("column {name}: {e}"),
    })
}

pub fn parse_metadata<R: std::io::Read>(reader: R) -> Result<Vec<InstanceMetadata>, MetadataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    let mut saw_header = false;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if !saw_header {
            let header: Vec<&str> = record.iter().map(str::trim).collect();
            if header != METADATA_HEADER {
                return Err(MetadataError::ParseError {
                    line,
                    message: format!("expected header `{}`", METADATA_HEADER.join(",")),
                });
            }
            saw_header = true;
            continue;
        }
        if record.len() != METADATA_HEADER.len() {
            return Err(MetadataError::ParseError {
                line,
                message: format!("expected {} columns, found {}", METADATA_HEADER.len(), record.len()),
            });
        }
        let meta = InstanceMetadata {
            instance_id: parse_field(&record[0], METADATA_HEADER[0], line)?,
            character: parse_field(&record[1], METADATA_HEADER[1], line)?,
            pose: parse_field(&record[2], METADATA_HEADER[2], line)?,
            altitude_m: parse_field(&record[3], METADATA_HEADER[3], line)?,
            radius_m: parse_field(&record[4], METADATA_HEADER[4], line)?,
            camera_angle_deg: parse_field(&record[5], METADATA_HEADER[5], line)?,
            sun_angle: parse_field(&record[6], METADATA_HEADER[6], line)?,
        };
        meta.validate().map_err(|e| MetadataError::ParseError {
            line,
            message: e.to_string(),
        })?;
        out.push(meta);
    }
    if !saw_header {
        return Err(MetadataError::ParseError {
            line: 1,
            message: "missing header row".into(),
        });
    }
    Ok(out)
}

pub fn read_metadata(path: impl AsRef<Path>) -> Result<Vec<InstanceMetadata>, MetadataError> {
    parse_metadata(std::fs::File::open(path)?)
}

pub fn write_metadata(path: impl AsRef<Path>, records: &[InstanceMetadata]) -> Result<(), MetadataError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METADATA_HEADER)?;
    for r in records {
        w.write_record([
            r.instance_id.to_string(),
            r.character.to_string(),
            r.pose.to_string(),
            r.altitude_m.to_string(),
            r.radius_m.to_string(),
            r.camera_angle_deg.to_string(),
            r.sun_angle.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

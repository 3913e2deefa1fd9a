//! Gap score tables (CSV): `instance_id,gap,argmin_scale`.

use std::path::Path;

use thiserror::Error;

use crate::gap::GapScore;

pub const SCORES_HEADER: [&str; 3] = ["instance_id", "gap", "argmin_scale"];

#[derive(Debug, Error)]
pub enum ScoresError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("expected header {expected:?}, found {found:?}")]
    BadHeader { expected: String, found: String },
    #[error("line {line}: {message}")]
    ParseError { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub fn parse_scores<R: std::io::Read>(reader: R) -> Result<Vec<GapScore<f64>>, ScoresError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(SCORES_HEADER) {
        return Err(ScoresError::BadHeader {
            expected: SCORES_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    rdr.deserialize()
        .map(|row| {
            row.map_err(|e| ScoresError::ParseError {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<GapScore<f64>>, ScoresError> {
    parse_scores(std::fs::File::open(path)?)
}

pub fn write_scores<W: std::io::Write>(writer: W, scores: &[GapScore<f64>]) -> Result<(), ScoresError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(SCORES_HEADER)?;
    for s in scores {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

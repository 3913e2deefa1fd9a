//! CSV reports of how the pool and the selections evolve.

use std::collections::BTreeMap;
use std::io::Write;

use ordered_float_free::Key;
use serde::Serialize;
use thiserror::Error;

use crate::gaussian::GaussianClassModel;
use crate::gap::{score_pool, GapError, MultiScaleFeatures, Scale, ScaleMode};
use crate::ptl::PtlState;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("state has no completed iterations")]
    NoIterations,
    #[error("iteration {0} was not recorded")]
    UnknownIteration(u64),
    #[error("bin count must be >= 1")]
    NoBins,
    #[error(transparent)]
    Gap(#[from] GapError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramRow {
    pub bin_low: f64,
    pub bin_high: f64,
    pub count: u64,
}

/// Equal-width bins over `[low, high]`; the last bin is closed on the right.
#[derive(Debug, Clone, PartialEq)]
pub struct BinEdges {
    pub low: f64,
    pub high: f64,
    pub bins: usize,
}

impl BinEdges {
    pub fn new(low: f64, high: f64, bins: usize) -> Result<Self, ReportError> {
        if bins == 0 {
            return Err(ReportError::NoBins);
        }
        let high = if high > low { high } else { low + 1.0 };
        Ok(Self { low, high, bins })
    }

    /// Bins from 0 to the largest gap recorded in any iteration of `state`,
    /// shared by every iteration's histogram.
    pub fn for_state(state: &PtlState, bins: usize) -> Result<Self, ReportError> {
        let max = state
            .pool_gaps
            .iter()
            .flatten()
            .copied()
            .fold(0.0, f64::max);
        Self::new(0.0, max, bins)
    }

    fn width(&self) -> f64 {
        (self.high - self.low) / self.bins as f64
    }

    fn edge(&self, i: usize) -> f64 {
        if i == self.bins {
            self.high
        } else {
            self.low + self.width() * i as f64
        }
    }

    fn index(&self, x: f64) -> Option<usize> {
        if x < self.low || x > self.high {
            return None;
        }
        let i = ((x - self.low) / self.width()) as usize;
        Some(i.min(self.bins - 1))
    }
}

/// Histogram of `gaps`. An empty input gives no rows; values outside the
/// edges are dropped.
pub fn gap_histogram(gaps: &[f64], edges: &BinEdges) -> Vec<HistogramRow> {
    if gaps.is_empty() {
        return Vec::new();
    }
    let mut counts = vec![0u64; edges.bins];
    for &g in gaps {
        if let Some(i) = edges.index(g) {
            counts[i] += 1;
        }
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramRow {
            bin_low: edges.edge(i),
            bin_high: edges.edge(i + 1),
            count,
        })
        .collect()
}

/// Histogram of the current pool's gaps under `model`.
pub fn report_gap_histogram(
    model: &GaussianClassModel<f64>,
    pool: &[MultiScaleFeatures<f64>],
    scales: &[Scale],
    edges: &BinEdges,
) -> Result<Vec<HistogramRow>, ReportError> {
    let gaps: Vec<f64> = score_pool(model, pool, scales, ScaleMode::Strict)?
        .into_iter()
        .map(|s| s.gap)
        .collect();
    Ok(gap_histogram(&gaps, edges))
}

/// Per-iteration histograms of the pool gaps recorded in `state`, on
/// common edges.
pub fn state_gap_histograms(
    state: &PtlState,
    bins: usize,
) -> Result<Vec<(u64, Vec<HistogramRow>)>, ReportError> {
    if state.pool_gaps.is_empty() {
        return Err(ReportError::NoIterations);
    }
    let edges = BinEdges::for_state(state, bins)?;
    Ok(state
        .pool_gaps
        .iter()
        .enumerate()
        .map(|(t, gaps)| (t as u64, gap_histogram(gaps, &edges)))
        .collect())
}

/// Mean pool gap recorded for each completed iteration.
pub fn pool_gap_means(state: &PtlState) -> Vec<f64> {
    state
        .history
        .iter()
        .map(|m| m.pool_gap_mean.unwrap_or(f64::NAN))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpreadRow {
    pub altitude_m: f64,
    pub radius_m: f64,
    pub accumulated_selected_count: u64,
}

/// Accumulated selections per (altitude, radius) cell over the first
/// `through` completed iterations (all of them when `None`). The grid is
/// every altitude and radius present in the state's metadata.
pub fn report_metadata_spread(
    state: &PtlState,
    through: Option<u64>,
) -> Result<Vec<SpreadRow>, ReportError> {
    if state.history.is_empty() {
        return Err(ReportError::NoIterations);
    }
    let upto = match through {
        Some(t) if t == 0 || t > state.history.len() as u64 => return Err(ReportError::UnknownIteration(t)),
        Some(t) => t as usize,
        None => state.history.len(),
    };

    let all_meta = state
        .real_set
        .values()
        .filter_map(|r| r.metadata)
        .chain(state.virtual_pool.values().filter_map(|v| v.metadata));
    let mut cells: BTreeMap<(Key, Key), u64> = BTreeMap::new();
    for m in all_meta {
        cells.entry((Key(m.altitude_m), Key(m.radius_m))).or_insert(0);
    }
    for manifest in &state.history[..upto] {
        for c in &manifest.selected {
            if let Some(m) = state.real_set.get(&c.instance_id).and_then(|r| r.metadata) {
                *cells.entry((Key(m.altitude_m), Key(m.radius_m))).or_insert(0) += 1;
            }
        }
    }
    Ok(cells
        .into_iter()
        .map(|((a, r), count)| SpreadRow {
            altitude_m: a.0,
            radius_m: r.0,
            accumulated_selected_count: count,
        })
        .collect())
}

pub fn occupied_cells(rows: &[SpreadRow]) -> usize {
    rows.iter().filter(|r| r.accumulated_selected_count > 0).count()
}

pub fn write_csv<W: Write, R: Serialize>(writer: W, rows: &[R], header: &[&str]) -> Result<(), ReportError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const HISTOGRAM_HEADER: [&str; 3] = ["bin_low", "bin_high", "count"];
pub const SPREAD_HEADER: [&str; 3] = ["altitude_m", "radius_m", "accumulated_selected_count"];

mod ordered_float_free {
    /// Total-order wrapper so finite metadata values can key a map.
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct Key(pub f64);

    impl Eq for Key {}

    impl PartialOrd for Key {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }

    impl Ord for Key {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.0.total_cmp(&other.0)
        }
    }
}

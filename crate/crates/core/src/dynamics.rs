//! Intrinsic dimensionality across training checkpoints, with detection of
//! fast early drops and of rebounds right after learning-rate decays.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectra::{read_spectra_list, Eigenspectrum, SpectraError};

pub const DEFAULT_WINDOW: u64 = 10_000;
pub const DEFAULT_MIN_FRACTION: f64 = 0.5;
pub const DEFAULT_HORIZON: u64 = 10_000;
pub const CHECKPOINT_SUFFIX: &str = ".spectra.json";

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("no checkpoints")]
    Empty,
    #[error("checkpoint {iteration} covers a different tap set than checkpoint {first}")]
    TapSetMismatch { first: u64, iteration: u64 },
    #[error("checkpoint iterations must strictly increase ({prev} then {next})")]
    Unordered { prev: u64, next: u64 },
    #[error("tap sets differ: {0:?} appears on only one side")]
    CompareMismatch(String),
    #[error("invalid detection parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

pub type Result<T, E = DynamicsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointSpectra {
    pub iteration: u64,
    pub spectra: BTreeMap<String, Eigenspectrum>,
}

impl CheckpointSpectra {
    pub fn new(iteration: u64, spectra: impl IntoIterator<Item = Eigenspectrum>) -> Self {
        Self { iteration, spectra: spectra.into_iter().map(|s| (s.tap_id.clone(), s)).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub iteration: u64,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSeries {
    pub tap_id: String,
    pub threshold: f64,
    pub points: Vec<SeriesPoint>,
}

/// One series per tap, in tap-id order.
pub fn dim_series(checkpoints: &[CheckpointSpectra], threshold: f64) -> Result<BTreeMap<String, DynamicsSeries>> {
    let first = checkpoints.first().ok_or(DynamicsError::Empty)?;
    for pair in checkpoints.windows(2) {
        if pair[1].iteration <= pair[0].iteration {
            return Err(DynamicsError::Unordered { prev: pair[0].iteration, next: pair[1].iteration });
        }
    }
    for c in checkpoints {
        if !c.spectra.keys().eq(first.spectra.keys()) {
            return Err(DynamicsError::TapSetMismatch { first: first.iteration, iteration: c.iteration });
        }
    }
    first
        .spectra
        .keys()
        .map(|tap| {
            let points = checkpoints
                .iter()
                .map(|c| Ok(SeriesPoint { iteration: c.iteration, dim: c.spectra[tap].intrinsic_dim(threshold)? }))
                .collect::<Result<Vec<_>>>()?;
            Ok((tap.clone(), DynamicsSeries { tap_id: tap.clone(), threshold, points }))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropEvent {
    pub tap_id: String,
    pub start_iter: u64,
    pub end_iter: u64,
    pub dim_before: usize,
    pub dim_after: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReboundEvent {
    pub tap_id: String,
    pub decay_iter: u64,
    pub dim_before: usize,
    pub dim_after: usize,
}

fn drops_in(series: &DynamicsSeries, window: u64, min_fraction: f64) -> Vec<DropEvent> {
    let pts = &series.points;
    let mut events = Vec::new();
    let mut i = 0;
    while i < pts.len() {
        let start = pts[i];
        // Lowest point reachable within the window; earliest wins ties.
        let low = pts[i + 1..]
            .iter()
            .enumerate()
            .take_while(|(_, p)| p.iteration - start.iteration <= window)
            .min_by_key(|(k, p)| (p.dim, *k));
        match low {
            Some((k, end))
                if start.dim > 0 && (start.dim.saturating_sub(end.dim)) as f64 >= min_fraction * start.dim as f64 =>
            {
                events.push(DropEvent {
                    tap_id: series.tap_id.clone(),
                    start_iter: start.iteration,
                    end_iter: end.iteration,
                    dim_before: start.dim,
                    dim_after: end.dim,
                });
                i += k + 1;
            }
            _ => i += 1,
        }
    }
    events
}

/// Intervals of at most `window` iterations over which a tap's dimensionality
/// falls by at least `min_fraction` of its starting value. Events do not
/// overlap and are ordered by start iteration, then tap id.
pub fn detect_drops<'a>(
    series: impl IntoIterator<Item = &'a DynamicsSeries>,
    window: u64,
    min_fraction: f64,
) -> Result<Vec<DropEvent>> {
    if window == 0 {
        return Err(DynamicsError::Parameter("window must be positive".into()));
    }
    if !(min_fraction > 0.0 && min_fraction <= 1.0) {
        return Err(DynamicsError::Parameter("min_fraction must be in (0, 1]".into()));
    }
    let mut events: Vec<DropEvent> = series.into_iter().flat_map(|s| drops_in(s, window, min_fraction)).collect();
    events.sort_by(|a, b| (a.start_iter, &a.tap_id).cmp(&(b.start_iter, &b.tap_id)));
    Ok(events)
}

/// Taps whose first sample in `(decay, decay + horizon]` exceeds their last
/// sample at or before `decay`. Decays outside a series' range are skipped.
pub fn detect_rebounds<'a>(
    series: impl IntoIterator<Item = &'a DynamicsSeries>,
    decay_iters: &[u64],
    horizon: u64,
) -> Vec<ReboundEvent> {
    let mut events = Vec::new();
    for s in series {
        for &decay in decay_iters {
            let Some(before) = s.points.iter().rev().find(|p| p.iteration <= decay) else { continue };
            let after = s
                .points
                .iter()
                .find(|p| p.iteration > decay && p.iteration - decay <= horizon);
            if let Some(after) = after.filter(|a| a.dim > before.dim) {
                events.push(ReboundEvent {
                    tap_id: s.tap_id.clone(),
                    decay_iter: decay,
                    dim_before: before.dim,
                    dim_after: after.dim,
                });
            }
        }
    }
    events.sort_by(|a, b| (a.decay_iter, &a.tap_id).cmp(&(b.decay_iter, &b.tap_id)));
    events
}

/// Decay iterations outside `[first, last]` of every series.
pub fn decays_out_of_range<'a>(series: impl IntoIterator<Item = &'a DynamicsSeries>, decay_iters: &[u64]) -> Vec<u64> {
    let (mut lo, mut hi) = (u64::MAX, 0);
    for s in series {
        if let (Some(f), Some(l)) = (s.points.first(), s.points.last()) {
            lo = lo.min(f.iteration);
            hi = hi.max(l.iteration);
        }
    }
    decay_iters.iter().copied().filter(|&d| d < lo || d > hi).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparison {
    /// `a - b` per tap.
    pub differences: BTreeMap<String, i64>,
    pub a_greater: Vec<String>,
    pub b_greater: Vec<String>,
    pub equal: usize,
}

pub fn compare_architectures(a: &BTreeMap<String, usize>, b: &BTreeMap<String, usize>) -> Result<Comparison> {
    if let Some(t) = a.keys().find(|k| !b.contains_key(*k)).or_else(|| b.keys().find(|k| !a.contains_key(*k))) {
        return Err(DynamicsError::CompareMismatch(t.clone()));
    }
    let mut out = Comparison::default();
    for (tap, &da) in a {
        let diff = da as i64 - b[tap] as i64;
        match diff.signum() {
            1 => out.a_greater.push(tap.clone()),
            -1 => out.b_greater.push(tap.clone()),
            _ => out.equal += 1,
        }
        out.differences.insert(tap.clone(), diff);
    }
    Ok(out)
}

/// Loads every `<iteration>.spectra.json` in a directory, ordered by iteration.
pub fn read_checkpoint_dir(dir: &Path) -> Result<Vec<CheckpointSpectra>> {
    let io_err = |source| DynamicsError::Io { path: dir.to_path_buf(), source };
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        let iteration = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_suffix(CHECKPOINT_SUFFIX))
            .and_then(|n| n.parse::<u64>().ok());
        if let Some(iteration) = iteration {
            out.push(CheckpointSpectra::new(iteration, read_spectra_list(&path)?));
        }
    }
    out.sort_by_key(|c| c.iteration);
    Ok(out)
}

/// `iteration,tap_id,dim` rows ordered by iteration, then tap id.
pub fn series_csv<'a>(series: impl IntoIterator<Item = &'a DynamicsSeries>) -> String {
    let mut rows: Vec<(u64, &str, usize)> = series
        .into_iter()
        .flat_map(|s| s.points.iter().map(move |p| (p.iteration, s.tap_id.as_str(), p.dim)))
        .collect();
    rows.sort();
    let mut out = String::from("iteration,tap_id,dim\n");
    for (it, tap, dim) in rows {
        let _ = writeln!(out, "{it},{tap},{dim}");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    pub threshold: f64,
    pub window: u64,
    pub min_fraction: f64,
    pub horizon: u64,
    pub drops: Vec<DropEvent>,
    pub rebounds: Vec<ReboundEvent>,
    pub warnings: Vec<String>,
}

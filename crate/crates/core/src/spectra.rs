//! Non-centered covariance estimation and eigenspectra.
//!
//! Each image contributes the average of `f fᵀ` over its spatial positions,
//! so images at different resolutions carry equal weight. The finalized
//! matrix is the mean of those contributions over images. No mean is
//! subtracted.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{Archive, ArchiveError, FeatureMap};

/// Threshold used when none is given.
pub const DEFAULT_THRESHOLD: f64 = 1e-3;

/// File suffix for a single-tap spectrum.
pub const SPECTRUM_SUFFIX: &str = ".spectrum.json";

#[derive(Debug, Error)]
pub enum SpectraError {
    #[error("tap {tap:?}: feature map has {found} channels, accumulator expects {expected}")]
    ChannelMismatch { tap: String, expected: usize, found: usize },
    #[error("tap {tap:?}: feature map contains non-finite values")]
    NonFinite { tap: String },
    #[error("tap {tap:?}: feature map has a zero-sized dimension")]
    EmptyMap { tap: String },
    #[error("cannot merge accumulators for {a:?} ({ca} ch) and {b:?} ({cb} ch)")]
    MergeMismatch { a: String, ca: usize, b: String, cb: usize },
    #[error("tap {0:?}: no images accumulated")]
    NoImages(String),
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFiniteMatrix,
    #[error("threshold {0} is outside (0, 1)")]
    Threshold(f64),
    #[error("eigensolver did not converge")]
    NoConvergence,
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

pub type Result<T, E = SpectraError> = std::result::Result<T, E>;

/// Streaming sufficient statistics for one tap's covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceAccumulator {
    tap_id: String,
    sum: DMatrix<f64>,
    n_images: u64,
}

impl CovarianceAccumulator {
    pub fn new(tap_id: impl Into<String>, channels: usize) -> Self {
        Self { tap_id: tap_id.into(), sum: DMatrix::zeros(channels, channels), n_images: 0 }
    }

    pub fn tap_id(&self) -> &str {
        &self.tap_id
    }

    pub fn channels(&self) -> usize {
        self.sum.nrows()
    }

    pub fn n_images(&self) -> u64 {
        self.n_images
    }

    /// Running sum of per-image spatially averaged outer products.
    pub fn sum_matrix(&self) -> &DMatrix<f64> {
        &self.sum
    }

    /// Adds one image given as channel-major `channels x positions` values.
    pub fn accumulate_slice(&mut self, data: &[f32], positions: usize) -> Result<()> {
        let channels = self.channels();
        if positions == 0 {
            return Err(SpectraError::EmptyMap { tap: self.tap_id.clone() });
        }
        if data.len() != channels * positions {
            return Err(SpectraError::ChannelMismatch {
                tap: self.tap_id.clone(),
                expected: channels,
                found: data.len() / positions,
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SpectraError::NonFinite { tap: self.tap_id.clone() });
        }
        // Channel-major storage is exactly a column-major positions x channels matrix.
        let samples = DMatrix::from_iterator(positions, channels, data.iter().map(|&v| f64::from(v)));
        self.sum.gemm_tr(1.0 / positions as f64, &samples, &samples, 1.0);
        self.n_images += 1;
        Ok(())
    }

    pub fn accumulate(&mut self, fmap: &FeatureMap) -> Result<()> {
        if fmap.channels as usize != self.channels() {
            return Err(SpectraError::ChannelMismatch {
                tap: self.tap_id.clone(),
                expected: self.channels(),
                found: fmap.channels as usize,
            });
        }
        self.accumulate_slice(&fmap.data, fmap.positions())
    }

    /// Adds another accumulator's statistics into this one.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if self.tap_id != other.tap_id || self.channels() != other.channels() {
            return Err(SpectraError::MergeMismatch {
                a: self.tap_id.clone(),
                ca: self.channels(),
                b: other.tap_id.clone(),
                cb: other.channels(),
            });
        }
        self.sum += &other.sum;
        self.n_images += other.n_images;
        Ok(())
    }

    pub fn merged(mut self, other: &Self) -> Result<Self> {
        self.merge(other)?;
        Ok(self)
    }

    /// The symmetrized covariance estimate, `sum / n_images`.
    pub fn finalize(&self) -> Result<DMatrix<f64>> {
        if self.n_images == 0 {
            return Err(SpectraError::NoImages(self.tap_id.clone()));
        }
        let scale = 0.5 / self.n_images as f64;
        Ok((&self.sum + self.sum.transpose()) * scale)
    }
}

/// Normalized eigenvalues of one tap's covariance, largest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eigenspectrum {
    pub tap_id: String,
    pub raw_max: f64,
    pub values: Vec<f64>,
}

fn checked_symmetric(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !cov.is_square() {
        return Err(SpectraError::NotSquare { rows: cov.nrows(), cols: cov.ncols() });
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(SpectraError::NonFiniteMatrix);
    }
    Ok((cov + cov.transpose()) * 0.5)
}

/// Raw eigenpairs of the symmetrized matrix, sorted by descending eigenvalue.
pub fn eigenpairs(cov: &DMatrix<f64>) -> Result<Vec<(f64, DVector<f64>)>> {
    let sym = checked_symmetric(cov)?;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0).ok_or(SpectraError::NoConvergence)?;
    let mut pairs: Vec<(f64, DVector<f64>)> = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .map(|(&l, v)| (l, v.into_owned()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(pairs)
}

impl Eigenspectrum {
    /// Eigenvalues clamped at zero, sorted descending and divided by the
    /// largest. A zero matrix yields an all-zero spectrum.
    pub fn from_covariance(tap_id: impl Into<String>, cov: &DMatrix<f64>) -> Result<Self> {
        let sym = checked_symmetric(cov)?;
        let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0).ok_or(SpectraError::NoConvergence)?;
        let mut raw: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
        raw.sort_by(|a, b| b.total_cmp(a));
        let raw_max = raw.first().copied().unwrap_or(0.0);
        let values = if raw_max > 0.0 {
            raw.iter().map(|&l| (l / raw_max).min(1.0)).collect()
        } else {
            vec![0.0; raw.len()]
        };
        Ok(Self { tap_id: tap_id.into(), raw_max, values })
    }

    pub fn channels(&self) -> usize {
        self.values.len()
    }

    /// Number of normalized eigenvalues strictly greater than `threshold`.
    pub fn intrinsic_dim(&self, threshold: f64) -> Result<usize> {
        check_threshold(threshold)?;
        Ok(self.values.iter().filter(|&&v| v > threshold).count())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("spectrum serializes");
        s.push('\n');
        s
    }
}

pub fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(SpectraError::Threshold(threshold))
    }
}

/// Accumulates every image of one tap, sharding contiguous index ranges over
/// `threads` workers and merging the shards in index order.
pub fn accumulate_tap(archive: &Archive, tap: &str, threads: usize) -> Result<CovarianceAccumulator> {
    let entry = archive.tap(tap)?;
    let (channels, images) = (entry.channels as usize, entry.images);
    let threads = threads.clamp(1, images.max(1));
    let chunk = images.div_ceil(threads).max(1);

    let shard = |range: std::ops::Range<usize>| -> Result<CovarianceAccumulator> {
        let mut acc = CovarianceAccumulator::new(tap, channels);
        for i in range {
            acc.accumulate(&archive.read_image(tap, i)?)?;
        }
        Ok(acc)
    };

    let shards: Vec<Result<CovarianceAccumulator>> = if threads == 1 {
        vec![shard(0..images)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..images)
                .step_by(chunk)
                .map(|start| {
                    let shard = &shard;
                    s.spawn(move || shard(start..(start + chunk).min(images)))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("shard worker panicked")).collect()
        })
    };

    let mut total = CovarianceAccumulator::new(tap, channels);
    for acc in shards {
        total.merge(&acc?)?;
    }
    Ok(total)
}

/// Computes the spectrum of every tap in an archive.
pub fn archive_spectra(archive: &Archive, threads: usize) -> Result<Vec<Eigenspectrum>> {
    archive
        .manifest()
        .taps
        .iter()
        .map(|t| {
            let acc = accumulate_tap(archive, &t.id, threads)?;
            Eigenspectrum::from_covariance(&t.id, &acc.finalize()?)
        })
        .collect()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| SpectraError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|source| SpectraError::Json { path: path.to_path_buf(), source })
}

pub fn read_spectrum(path: &Path) -> Result<Eigenspectrum> {
    read_json(path)
}

/// Reads a list of spectra stored in one file.
pub fn read_spectra_list(path: &Path) -> Result<Vec<Eigenspectrum>> {
    read_json(path)
}

/// Loads every `*.spectrum.json` in a directory, keyed by tap id.
pub fn read_spectra_dir(dir: &Path) -> Result<BTreeMap<String, Eigenspectrum>> {
    let io_err = |source| SpectraError::Io { path: dir.to_path_buf(), source };
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        let is_spectrum = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with(SPECTRUM_SUFFIX));
        if is_spectrum {
            let s = read_spectrum(&path)?;
            out.insert(s.tap_id.clone(), s);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn single_outer_product() {
        let mut acc = CovarianceAccumulator::new("t", 2);
        acc.accumulate(&FeatureMap::new(2, 1, 1, vec![1.0, 0.0])).unwrap();
        assert_eq!(acc.sum_matrix(), &mat(&[&[1.0, 0.0], &[0.0, 0.0]]));
        assert_eq!(acc.n_images(), 1);
    }

    #[test]
    fn two_position_average() {
        // Width 2, height 1; channel 0 = (1, 0), channel 1 = (0, 1).
        let mut acc = CovarianceAccumulator::new("t", 2);
        acc.accumulate(&FeatureMap::new(2, 1, 2, vec![1.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!(acc.sum_matrix(), &mat(&[&[0.5, 0.0], &[0.0, 0.5]]));
        acc.accumulate(&FeatureMap::new(2, 1, 2, vec![1.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!(acc.finalize().unwrap(), acc.sum_matrix() / 2.0);
    }

    #[test]
    fn zero_map_counts_but_adds_nothing() {
        let mut acc = CovarianceAccumulator::new("t", 3);
        acc.accumulate(&FeatureMap::new(3, 2, 2, vec![0.0; 12])).unwrap();
        assert_eq!(acc.n_images(), 1);
        assert!(acc.sum_matrix().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn accumulate_errors() {
        let mut acc = CovarianceAccumulator::new("t", 2);
        assert!(matches!(
            acc.accumulate(&FeatureMap::new(3, 1, 1, vec![1.0, 2.0, 3.0])),
            Err(SpectraError::ChannelMismatch { .. })
        ));
        assert!(matches!(
            acc.accumulate(&FeatureMap::new(2, 1, 1, vec![f32::NAN, 0.0])),
            Err(SpectraError::NonFinite { .. })
        ));
        assert_eq!(acc.n_images(), 0);
        assert!(matches!(acc.finalize(), Err(SpectraError::NoImages(_))));
        let other = CovarianceAccumulator::new("u", 2);
        assert!(matches!(acc.merge(&other), Err(SpectraError::MergeMismatch { .. })));
    }

    #[test]
    fn merge_identity_and_commutativity() {
        let mut a = CovarianceAccumulator::new("t", 2);
        a.accumulate(&FeatureMap::new(2, 1, 3, vec![0.3, -1.2, 2.0, 0.7, 0.1, -0.4])).unwrap();
        let mut b = CovarianceAccumulator::new("t", 2);
        b.accumulate(&FeatureMap::new(2, 2, 1, vec![1.1, 0.9, -0.25, 3.5])).unwrap();
        let empty = CovarianceAccumulator::new("t", 2);
        assert_eq!(a.clone().merged(&empty).unwrap(), a);
        assert_eq!(a.clone().merged(&b).unwrap(), b.clone().merged(&a).unwrap());
    }

    #[test]
    fn spectrum_examples() {
        let s = Eigenspectrum::from_covariance("t", &DMatrix::identity(4, 4)).unwrap();
        assert_eq!(s.values, vec![1.0; 4]);

        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.004, 4.0, 0.0, 2.0]));
        let s = Eigenspectrum::from_covariance("t", &d).unwrap();
        assert_eq!(s.raw_max, 4.0);
        let expected = [1.0, 0.5, 0.001, 0.0];
        for (v, e) in s.values.iter().zip(expected) {
            assert!((v - e).abs() < 1e-15, "{v} vs {e}");
        }
        assert_eq!(s.intrinsic_dim(1e-3).unwrap(), 2);

        let z = Eigenspectrum::from_covariance("t", &DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(z.raw_max, 0.0);
        assert_eq!(z.values, vec![0.0; 3]);
        assert_eq!(z.intrinsic_dim(1e-3).unwrap(), 0);
    }

    #[test]
    fn spectrum_errors() {
        assert!(matches!(
            Eigenspectrum::from_covariance("t", &DMatrix::zeros(2, 3)),
            Err(SpectraError::NotSquare { .. })
        ));
        let mut m = DMatrix::identity(2, 2);
        m[(0, 1)] = f64::INFINITY;
        assert!(matches!(Eigenspectrum::from_covariance("t", &m), Err(SpectraError::NonFiniteMatrix)));
        let s = Eigenspectrum::from_covariance("t", &DMatrix::identity(2, 2)).unwrap();
        for t in [0.0, 1.0, -0.5, f64::NAN] {
            assert!(matches!(s.intrinsic_dim(t), Err(SpectraError::Threshold(_))));
        }
    }

    #[test]
    fn json_key_order() {
        let s = Eigenspectrum { tap_id: "a".into(), raw_max: 2.0, values: vec![1.0, 0.5] };
        let text = s.to_json();
        assert!(text.find("tap_id").unwrap() < text.find("raw_max").unwrap());
        assert!(text.find("raw_max").unwrap() < text.find("values").unwrap());
        assert_eq!(serde_json::from_str::<Eigenspectrum>(&text).unwrap(), s);
    }
}

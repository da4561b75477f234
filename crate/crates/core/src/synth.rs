//! Synthetic activation archives with known second moments.
//!
//! Feature vectors are drawn i.i.d. as `Q diag(sqrt(λ)) g + sqrt(ε) h` with
//! `g, h ~ N(0, I)` and `Q` a seeded random orthogonal matrix, so the exact
//! non-centered covariance is `Q Λ Qᵀ + ε I`. Every image has its own ChaCha
//! stream derived from `(seed, tap index, image index)`, which makes the
//! archive independent of how generation is sharded.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{image_file_name, write_manifest, ArchiveError, FeatureMap, Manifest, ManifestTap};

pub const ORACLE_FILE: &str = "oracle.json";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

fn default_resolutions() -> Vec<[u32; 2]> {
    vec![[4, 4]]
}

/// One tap of a synthetic archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthTapSpec {
    pub id: String,
    pub channels: u32,
    /// Target raw eigenvalues, one per channel.
    pub eigenvalues: Vec<f64>,
    /// Variance of the isotropic noise added to every feature vector.
    #[serde(default)]
    pub noise: f64,
    pub n_images: usize,
    /// `[height, width]` per image, cycled by image index.
    #[serde(default = "default_resolutions")]
    pub resolutions: Vec<[u32; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default)]
    pub seed: u64,
    pub taps: Vec<SynthTapSpec>,
}

impl SynthTapSpec {
    /// Eigenvalues `1.0` for the first `rank` channels and `0.0` after.
    pub fn low_rank(id: &str, channels: u32, rank: usize, n_images: usize) -> Self {
        let eigenvalues = (0..channels as usize).map(|i| if i < rank { 1.0 } else { 0.0 }).collect();
        Self { id: id.to_string(), channels, eigenvalues, noise: 0.0, n_images, resolutions: default_resolutions() }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::Invalid(format!("tap {:?}: {msg}", self.id)));
        if self.id.is_empty() || !self.id.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-')) {
            return bad("id must use only [A-Za-z0-9_.-]".into());
        }
        if self.channels == 0 {
            return bad("channels must be positive".into());
        }
        if self.eigenvalues.len() != self.channels as usize {
            return bad(format!("{} eigenvalues for {} channels", self.eigenvalues.len(), self.channels));
        }
        if self.eigenvalues.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return bad("eigenvalues must be finite and nonnegative".into());
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return bad("noise must be finite and nonnegative".into());
        }
        if self.n_images == 0 {
            return bad("n_images must be positive".into());
        }
        if self.resolutions.is_empty() || self.resolutions.iter().any(|&[h, w]| h == 0 || w == 0) {
            return bad("resolutions must be a nonempty list of positive [height, width]".into());
        }
        Ok(())
    }

    /// Exact second-moment matrix `Q Λ Qᵀ + ε I` for the given seed.
    pub fn true_covariance(&self, seed: u64, tap_index: usize) -> DMatrix<f64> {
        let q = rotation(self.channels as usize, seed, tap_index);
        let lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.eigenvalues));
        &q * lambda * q.transpose() + DMatrix::identity(q.nrows(), q.nrows()) * self.noise
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.taps.is_empty() {
            return Err(SynthError::Invalid("no taps".into()));
        }
        for (i, t) in self.taps.iter().enumerate() {
            t.validate()?;
            if self.taps[..i].iter().any(|o| o.id == t.id) {
                return Err(SynthError::Invalid(format!("duplicate tap {:?}", t.id)));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, SynthError> {
        let spec: Self = serde_json::from_str(text)
            .map_err(|source| SynthError::Json { path: PathBuf::from("<synth spec>"), source })?;
        spec.validate()?;
        Ok(spec)
    }
}

fn stream_rng(seed: u64, tap_index: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((tap_index as u64) << 40) | stream);
    rng
}

/// Seeded Haar-distributed orthogonal matrix: QR of a Gaussian matrix with
/// the signs of R's diagonal folded into Q.
fn rotation(channels: usize, seed: u64, tap_index: usize) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, tap_index, 0);
    let gauss = DMatrix::from_fn(channels, channels, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = gauss.qr();
    let r = qr.r();
    let mut q = qr.q();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col.neg_mut();
        }
    }
    q
}

/// Draws images for one tap.
#[derive(Debug, Clone)]
pub struct TapGenerator {
    spec: SynthTapSpec,
    seed: u64,
    tap_index: usize,
    basis: DMatrix<f64>,
    noise_std: f64,
}

impl TapGenerator {
    pub fn new(spec: &SynthTapSpec, seed: u64, tap_index: usize) -> Result<Self, SynthError> {
        spec.validate()?;
        let c = spec.channels as usize;
        let mut basis = rotation(c, seed, tap_index);
        for (mut col, &l) in basis.column_iter_mut().zip(&spec.eigenvalues) {
            col *= l.sqrt();
        }
        Ok(Self { spec: spec.clone(), seed, tap_index, basis, noise_std: spec.noise.sqrt() })
    }

    pub fn spec(&self) -> &SynthTapSpec {
        &self.spec
    }

    pub fn resolution(&self, index: usize) -> [u32; 2] {
        self.spec.resolutions[index % self.spec.resolutions.len()]
    }

    pub fn image(&self, index: usize) -> FeatureMap {
        let [h, w] = self.resolution(index);
        let c = self.spec.channels as usize;
        let positions = h as usize * w as usize;
        let mut rng = stream_rng(self.seed, self.tap_index, index as u64 + 1);
        let mut data = vec![0f32; c * positions];
        let mut g = nalgebra::DVector::<f64>::zeros(c);
        let mut x = nalgebra::DVector::<f64>::zeros(c);
        for p in 0..positions {
            g.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            x.gemv(1.0, &self.basis, &g, 0.0);
            if self.noise_std > 0.0 {
                x.iter_mut().for_each(|v| *v += self.noise_std * rng.sample::<f64, _>(StandardNormal));
            }
            for (ch, v) in x.iter().enumerate() {
                data[ch * positions + p] = *v as f32;
            }
        }
        FeatureMap::new(self.spec.channels, h, w, data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTap {
    pub id: String,
    pub eigenvalues: Vec<f64>,
    pub noise: f64,
}

/// Sidecar describing exactly what an archive was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub seed: u64,
    pub taps: Vec<OracleTap>,
}

/// Writes an archive for `spec` into `out`, creating it if needed.
pub fn generate(spec: &SynthSpec, out: &Path, threads: usize) -> Result<(), SynthError> {
    spec.validate()?;
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    fs::create_dir_all(out).map_err(io_err(out))?;

    for (ti, tap) in spec.taps.iter().enumerate() {
        let generator = TapGenerator::new(tap, spec.seed, ti)?;
        let dir = out.join(&tap.id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let threads = threads.clamp(1, tap.n_images);
        let chunk = tap.n_images.div_ceil(threads);
        let write_range = |range: std::ops::Range<usize>| -> Result<(), SynthError> {
            for i in range {
                generator.image(i).write(&dir.join(image_file_name(i)))?;
            }
            Ok(())
        };
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..tap.n_images)
                .step_by(chunk)
                .map(|start| {
                    let write_range = &write_range;
                    s.spawn(move || write_range(start..(start + chunk).min(tap.n_images)))
                })
                .collect();
            handles.into_iter().try_for_each(|h| h.join().expect("generator worker panicked"))
        })?;
    }

    let manifest = Manifest {
        taps: spec
            .taps
            .iter()
            .map(|t| ManifestTap { id: t.id.clone(), channels: t.channels, images: t.n_images })
            .collect(),
    };
    write_manifest(out, &manifest)?;

    let oracle = Oracle {
        seed: spec.seed,
        taps: spec
            .taps
            .iter()
            .map(|t| OracleTap { id: t.id.clone(), eigenvalues: t.eigenvalues.clone(), noise: t.noise })
            .collect(),
    };
    let path = out.join(ORACLE_FILE);
    let mut text = serde_json::to_string_pretty(&oracle).expect("oracle serializes");
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(())
}

/// Same as [`generate`] with the resolution list of every tap replaced.
pub fn variable_resolution(
    spec: &SynthSpec,
    resolutions: &[[u32; 2]],
    out: &Path,
    threads: usize,
) -> Result<(), SynthError> {
    if resolutions.is_empty() {
        return Err(SynthError::Invalid("empty resolution list".into()));
    }
    let mut spec = spec.clone();
    for tap in &mut spec.taps {
        tap.resolutions = resolutions.to_vec();
    }
    generate(&spec, out, threads)
}

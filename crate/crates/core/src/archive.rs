//! Activation archives: one directory per tap holding `<index>.fmap` files,
//! plus a `manifest.json` at the root.
//!
//! `.fmap` layout (little-endian):
//!
//! | offset | size        | field                                  |
//! |--------|-------------|----------------------------------------|
//! | 0      | 4           | magic `FMAP`                           |
//! | 4      | 2           | format version, u16 = 1                |
//! | 6      | 4           | channels C, u32                        |
//! | 10     | 4           | height H, u32                          |
//! | 14     | 4           | width W, u32                           |
//! | 18     | 4 * C*H*W   | f32 values, channel-major (c, y, x)    |

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FMAP_MAGIC: [u8; 4] = *b"FMAP";
pub const FMAP_VERSION: u16 = 1;
const HEADER_LEN: usize = 18;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: bad magic bytes (expected FMAP)")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported format version {found}")]
    BadVersion { path: PathBuf, found: u16 },
    #[error("{path}: payload is {found} bytes, header implies {expected}")]
    Size { path: PathBuf, expected: usize, found: usize },
    #[error("{path}: zero-sized dimension in header")]
    ZeroDim { path: PathBuf },
    #[error("{path}: {found} channels, manifest says {expected}")]
    ChannelMismatch { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("manifest has no tap {0:?}")]
    UnknownTap(String),
}

/// One image's activations at one tap.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: u32,
    pub height: u32,
    pub width: u32,
    /// `channels * height * width` values, channel-major.
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: u32, height: u32, width: u32, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), channels as usize * height as usize * width as usize);
        Self { channels, height, width, data }
    }

    pub fn positions(&self) -> usize {
        self.height as usize * self.width as usize
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&FMAP_MAGIC);
        out.extend_from_slice(&FMAP_VERSION.to_le_bytes());
        out.extend_from_slice(&self.channels.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes a `.fmap` payload. `path` is only used for error messages.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self, ArchiveError> {
        let path = || path.to_path_buf();
        if bytes.len() < HEADER_LEN {
            return Err(if bytes.len() >= 4 && bytes[..4] != FMAP_MAGIC {
                ArchiveError::BadMagic { path: path() }
            } else {
                ArchiveError::Size { path: path(), expected: HEADER_LEN, found: bytes.len() }
            });
        }
        if bytes[..4] != FMAP_MAGIC {
            return Err(ArchiveError::BadMagic { path: path() });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FMAP_VERSION {
            return Err(ArchiveError::BadVersion { path: path(), found: version });
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        let (channels, height, width) = (word(6), word(10), word(14));
        if channels == 0 || height == 0 || width == 0 {
            return Err(ArchiveError::ZeroDim { path: path() });
        }
        let expected = (channels as usize)
            .checked_mul(height as usize)
            .and_then(|n| n.checked_mul(width as usize))
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(HEADER_LEN))
            .unwrap_or(usize::MAX);
        if bytes.len() != expected {
            return Err(ArchiveError::Size { path: path(), expected, found: bytes.len() });
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { channels, height, width, data })
    }

    pub fn read(path: &Path) -> Result<Self, ArchiveError> {
        let bytes = fs::read(path).map_err(|source| ArchiveError::Io { path: path.to_path_buf(), source })?;
        Self::decode(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<(), ArchiveError> {
        fs::write(path, self.encode()).map_err(|source| ArchiveError::Io { path: path.to_path_buf(), source })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestTap {
    pub id: String,
    pub channels: u32,
    pub images: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub taps: Vec<ManifestTap>,
}

/// Read-only view over an archive directory.
#[derive(Debug, Clone)]
pub struct Archive {
    root: PathBuf,
    manifest: Manifest,
}

pub fn image_file_name(index: usize) -> String {
    format!("{index}.fmap")
}

impl Archive {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ArchiveError> {
        let root = root.into();
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|source| ArchiveError::Io { path: path.clone(), source })?;
        let manifest = serde_json::from_str(&text).map_err(|source| ArchiveError::Json { path, source })?;
        Ok(Self { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn tap(&self, id: &str) -> Result<&ManifestTap, ArchiveError> {
        self.manifest
            .taps
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| ArchiveError::UnknownTap(id.to_string()))
    }

    pub fn image_path(&self, tap: &str, index: usize) -> PathBuf {
        self.root.join(tap).join(image_file_name(index))
    }

    /// Reads one image, checking its channel count against the manifest.
    pub fn read_image(&self, tap: &str, index: usize) -> Result<FeatureMap, ArchiveError> {
        let expected = self.tap(tap)?.channels;
        let path = self.image_path(tap, index);
        let fmap = FeatureMap::read(&path)?;
        if fmap.channels != expected {
            return Err(ArchiveError::ChannelMismatch { path, expected, found: fmap.channels });
        }
        Ok(fmap)
    }
}

/// Writes a manifest into `root`.
pub fn write_manifest(root: &Path, manifest: &Manifest) -> Result<(), ArchiveError> {
    let path = root.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|source| ArchiveError::Io { path, source })
}

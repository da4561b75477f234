use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

/// Written next to every subcommand's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub inputs: Vec<PathBuf>,
    /// SHA-256 over the arguments and the bytes of every input file.
    pub config_hash: String,
    pub tool_version: String,
    pub duration_secs: f64,
}

fn hash_path(hasher: &mut Sha256, path: &Path) {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = match fs::read_dir(path) {
            Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).collect(),
            Err(_) => return,
        };
        entries.sort();
        for e in entries {
            if let Some(name) = e.file_name() {
                hasher.update(name.as_encoded_bytes());
            }
            hash_path(hasher, &e);
        }
    } else if let Ok(bytes) = fs::read(path) {
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
}

impl RunManifest {
    pub fn new(subcommand: &str, inputs: &[&Path], args: &str, elapsed: Duration) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(subcommand.as_bytes());
        hasher.update(args.as_bytes());
        for p in inputs {
            hash_path(&mut hasher, p);
        }
        let config_hash = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
        Self {
            subcommand: subcommand.to_string(),
            inputs: inputs.iter().map(|p| p.to_path_buf()).collect(),
            config_hash,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            duration_secs: elapsed.as_secs_f64(),
        }
    }
}

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use iasearch_core::spectra::SPECTRUM_SUFFIX;
use iasearch_core::Eigenspectrum;

pub const SEARCHED_WIDTHS: [u32; 9] = [64, 64, 224, 128, 576, 256, 1152, 544, 896];

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn run(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_iasearch")).args(args).output().expect("binary runs");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn resnet50_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/resnet50.json")
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn write_spectra(dir: &Path, spectra: &BTreeMap<String, Eigenspectrum>) {
    std::fs::create_dir_all(dir).unwrap();
    for (id, sp) in spectra {
        std::fs::write(dir.join(format!("{id}{SPECTRUM_SUFFIX}")), sp.to_json()).unwrap();
    }
}

/// Every file under `root` except the run manifest, which records timings.
pub fn tree_without_manifest(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run_manifest.json" {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

pub fn read_spectra(dir: &Path) -> BTreeMap<String, Eigenspectrum> {
    iasearch_core::spectra::read_spectra_dir(dir).unwrap()
}

pub fn max_spectrum_diff(a: &BTreeMap<String, Eigenspectrum>, b: &BTreeMap<String, Eigenspectrum>) -> f64 {
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    a.iter()
        .flat_map(|(k, x)| x.values.iter().zip(&b[k].values).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

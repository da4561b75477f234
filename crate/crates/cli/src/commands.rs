use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use iasearch_core::archive::ArchiveError;
use iasearch_core::dynamics::{self, EventReport};
use iasearch_core::search::{run_pipeline, SearchConfig, SearchError};
use iasearch_core::spectra::{self, SPECTRUM_SUFFIX};
use iasearch_core::synth::{self, SynthError};
use iasearch_core::{human_count, parse_arch, Archive, ArchitectureGraph, Metric, SynthSpec, WidthAssignment};
use serde::Serialize;
use thiserror::Error;

use crate::manifest::{RunManifest, RUN_MANIFEST_FILE};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::Infeasible { .. } => CliError::Infeasible(e.to_string()),
            other => input(other),
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_arch(path: &Path) -> Result<ArchitectureGraph, CliError> {
    parse_arch(&read_text(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Output { path: path.to_path_buf(), source })
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Output { path: path.to_path_buf(), source })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

fn write_manifest(out: &Path, manifest: &RunManifest) -> Result<(), CliError> {
    write(&out.join(RUN_MANIFEST_FILE), &to_json(manifest))
}

#[derive(Debug, Serialize)]
struct CostResult {
    metric: Metric,
    cost: u64,
    human: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    manifest: Option<RunManifest>,
}

pub fn cost(arch: &Path, metric: Metric, widths: Option<&Path>, out: Option<&Path>, json: bool) -> Result<(), CliError> {
    let start = Instant::now();
    let graph = load_arch(arch)?;
    let assignment = match widths {
        Some(p) => serde_json::from_str::<WidthAssignment>(&read_text(p)?)
            .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?,
        None => graph.current_widths(),
    };
    let value = graph.compute_cost(&assignment, metric).map_err(input)?;
    let mut inputs = vec![arch];
    inputs.extend(widths);
    let manifest = RunManifest::new("cost", &inputs, &metric.to_string(), start.elapsed());

    let mut result = CostResult { metric, cost: value, human: human_count(value as f64), manifest: None };
    if let Some(out) = out {
        create_dir(out)?;
        write(&out.join("cost.json"), &to_json(&result))?;
        write_manifest(out, &manifest)?;
    } else {
        result.manifest = Some(manifest);
    }
    if json {
        print!("{}", to_json(&result));
    } else {
        println!("{metric}: {} ({value})", result.human);
    }
    Ok(())
}

fn archive_error(e: spectra::SpectraError) -> CliError {
    match e {
        spectra::SpectraError::Archive(ArchiveError::Io { path, source }) => {
            CliError::Input(format!("{}: {source}", path.display()))
        }
        other => input(other),
    }
}

pub fn spectra(archive_path: &Path, out: &Path, threads: usize, threshold: f64) -> Result<(), CliError> {
    let start = Instant::now();
    spectra::check_threshold(threshold).map_err(input)?;
    let archive = Archive::open(archive_path).map_err(input)?;
    let all = spectra::archive_spectra(&archive, threads.max(1)).map_err(archive_error)?;
    create_dir(out)?;
    for s in &all {
        write(&out.join(format!("{}{SPECTRUM_SUFFIX}", s.tap_id)), &s.to_json())?;
        let d = s.intrinsic_dim(threshold).map_err(input)?;
        println!("{}: {d} of {} above {threshold:e} (raw max {:.3e})", s.tap_id, s.channels(), s.raw_max);
    }
    write(&out.join("spectra.json"), &to_json(&all))?;
    let manifest = RunManifest::new("spectra", &[archive_path], &format!("threads={threads}"), start.elapsed());
    write_manifest(out, &manifest)
}

pub struct SearchOptions {
    pub arch: PathBuf,
    pub spectra: PathBuf,
    pub threshold: f64,
    pub metric: Metric,
    pub budget: Option<f64>,
    pub multiple: u32,
    pub min_width: u32,
    pub omega_precision: f64,
    pub greedy_fill: bool,
    pub out: PathBuf,
}

pub fn search(opts: SearchOptions) -> Result<(), CliError> {
    let start = Instant::now();
    let graph = load_arch(&opts.arch)?;
    let spectra = spectra::read_spectra_dir(&opts.spectra).map_err(input)?;
    let budget = match opts.budget {
        Some(b) => b,
        None => graph.cost(opts.metric).map_err(input)? as f64,
    };
    let cfg = SearchConfig {
        threshold: opts.threshold,
        metric: opts.metric,
        budget,
        multiple: opts.multiple,
        min_width: opts.min_width,
        omega_precision: opts.omega_precision,
        greedy_fill: opts.greedy_fill,
    };
    let report = run_pipeline(&graph, &spectra, &cfg)?;
    let searched = graph.apply_widths(&report.final_widths()).map_err(input)?;

    create_dir(&opts.out)?;
    write(&opts.out.join("report.json"), &report.to_json())?;
    write(&opts.out.join("report.csv"), &report.to_csv())?;
    write(&opts.out.join("arch.json"), &searched.to_json())?;
    let args = serde_json::to_string(&cfg).expect("config serializes");
    let manifest = RunManifest::new("search", &[&opts.arch, &opts.spectra], &args, start.elapsed());
    write_manifest(&opts.out, &manifest)?;

    println!(
        "omega {:.4}; {} {} of budget {}",
        report.omega,
        cfg.metric,
        human_count(report.achieved_cost as f64),
        human_count(budget)
    );
    Ok(())
}

pub struct DynamicsOptions {
    pub series: PathBuf,
    pub threshold: f64,
    pub decay_iters: Vec<u64>,
    pub window: u64,
    pub min_fraction: f64,
    pub horizon: u64,
    pub out: PathBuf,
}

pub fn dynamics(opts: DynamicsOptions) -> Result<(), CliError> {
    let start = Instant::now();
    spectra::check_threshold(opts.threshold).map_err(input)?;
    let checkpoints = dynamics::read_checkpoint_dir(&opts.series).map_err(input)?;
    let series: BTreeMap<_, _> = dynamics::dim_series(&checkpoints, opts.threshold).map_err(input)?;
    let drops = dynamics::detect_drops(series.values(), opts.window, opts.min_fraction).map_err(input)?;
    let rebounds = dynamics::detect_rebounds(series.values(), &opts.decay_iters, opts.horizon);
    let warnings: Vec<String> = dynamics::decays_out_of_range(series.values(), &opts.decay_iters)
        .into_iter()
        .map(|d| format!("decay iteration {d} is outside the checkpoint range"))
        .collect();
    for w in &warnings {
        eprintln!("warning: {w}");
    }

    let report = EventReport {
        threshold: opts.threshold,
        window: opts.window,
        min_fraction: opts.min_fraction,
        horizon: opts.horizon,
        drops,
        rebounds,
        warnings,
    };
    create_dir(&opts.out)?;
    write(&opts.out.join("dims.csv"), &dynamics::series_csv(series.values()))?;
    write(&opts.out.join("events.json"), &to_json(&report))?;
    let args = format!(
        "threshold={} decays={:?} window={} fraction={} horizon={}",
        opts.threshold, opts.decay_iters, opts.window, opts.min_fraction, opts.horizon
    );
    write_manifest(&opts.out, &RunManifest::new("dynamics", &[&opts.series], &args, start.elapsed()))?;
    println!(
        "{} checkpoints, {} taps: {} drops, {} rebounds",
        checkpoints.len(),
        series.len(),
        report.drops.len(),
        report.rebounds.len()
    );
    Ok(())
}

pub fn synth(spec_path: &Path, out: &Path, seed: Option<u64>, threads: usize) -> Result<(), CliError> {
    let start = Instant::now();
    let mut spec = SynthSpec::parse(&read_text(spec_path)?).map_err(input)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    synth::generate(&spec, out, threads.max(1)).map_err(|e| match e {
        SynthError::Io { path, source } | SynthError::Archive(ArchiveError::Io { path, source }) => {
            CliError::Output { path, source }
        }
        other => input(other),
    })?;
    let manifest = RunManifest::new("synth", &[spec_path], &format!("seed={}", spec.seed), start.elapsed());
    write_manifest(out, &manifest)?;
    let images: usize = spec.taps.iter().map(|t| t.n_images).sum();
    println!("wrote {} taps, {images} images to {}", spec.taps.len(), out.display());
    Ok(())
}

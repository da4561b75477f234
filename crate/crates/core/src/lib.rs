//! Intrinsic architecture search for convolutional networks.
//!
//! The pipeline measures how many directions each feature map actually uses
//! (the number of normalized covariance eigenvalues above a threshold), sets
//! every channel width to that count, reconciles widths that residual
//! connections force to be equal, and then scales all widths by one multiplier
//! so the network fits a MAC or parameter budget.
//!
//! - [`archgraph`]: architecture graphs and the MAC/parameter cost functions.
//! - [`archive`]: the `.fmap` activation archive format.
//! - [`spectra`]: covariance accumulation, eigenspectra, intrinsic dimensionality.
//! - [`search`]: shrink, adjust, expand, round and greedy fill.
//! - [`dynamics`]: dimensionality time series across training checkpoints.
//! - [`synth`]: synthetic archives with known covariance.
//! - [`reference`]: the ResNet-50 skeleton used as a cost reference.

pub mod archgraph;
pub mod archive;
pub mod dynamics;
pub mod reference;
pub mod search;
pub mod spectra;
pub mod synth;

pub use archgraph::{parse_arch, ArchConfig, ArchitectureGraph, GraphError, LayerKind, Metric, TieRule, WidthAssignment};
pub use archive::{Archive, FeatureMap};
pub use dynamics::{CheckpointSpectra, DynamicsSeries};
pub use search::{run_pipeline, SearchConfig, SearchError, SearchReport};
pub use spectra::{CovarianceAccumulator, Eigenspectrum, SpectraError, DEFAULT_THRESHOLD};
pub use synth::{SynthSpec, SynthTapSpec};

/// Formats a count with decimal G/M/K suffixes and three significant figures.
pub fn human_count(value: f64) -> String {
    let (scaled, suffix) = match value.abs() {
        v if v >= 1e9 => (value / 1e9, " G"),
        v if v >= 1e6 => (value / 1e6, " M"),
        v if v >= 1e3 => (value / 1e3, " K"),
        _ => (value, ""),
    };
    let digits = if scaled.abs() >= 100.0 {
        0
    } else if scaled.abs() >= 10.0 {
        1
    } else {
        2
    };
    format!("{scaled:.digits$}{suffix}")
}

//! Width search: shrink every tap to its intrinsic dimensionality, reconcile
//! tie groups, then grow all widths by one uniform multiplier until the
//! resource budget is met.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archgraph::{ArchitectureGraph, GraphError, Metric, TieRule, WidthAssignment};
use crate::spectra::{check_threshold, Eigenspectrum, SpectraError, DEFAULT_THRESHOLD};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error("no spectrum for tap {0:?}")]
    MissingSpectrum(String),
    #[error("geomean group {0:?} has a zero dimensionality and no minimum width")]
    ZeroGeomean(String),
    #[error("tap {0:?} would get width 0; set a positive minimum width")]
    ZeroWidth(String),
    #[error("budget {budget} is infeasible: the smallest rounded widths already cost {floor_cost}")]
    Infeasible { floor_cost: u64, budget: f64 },
    #[error("cost does not grow with the width multiplier; no non-fixed tap feeds a layer")]
    Unbounded,
    #[error("adjusted widths have zero cost")]
    ZeroCost,
    #[error("widths cost {cost}, above the budget {budget}")]
    OverBudget { cost: u64, budget: f64 },
    #[error("invalid search config: {0}")]
    Config(String),
}

pub type Result<T, E = SearchError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub threshold: f64,
    pub metric: Metric,
    pub budget: f64,
    pub multiple: u32,
    pub min_width: u32,
    pub omega_precision: f64,
    pub greedy_fill: bool,
}

impl SearchConfig {
    pub fn new(metric: Metric, budget: f64) -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            metric,
            budget,
            multiple: 32,
            min_width: 32,
            omega_precision: 1e-4,
            greedy_fill: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_threshold(self.threshold)?;
        let bad = |m: &str| Err(SearchError::Config(m.to_string()));
        if !(self.budget.is_finite() && self.budget > 0.0) {
            return bad("budget must be positive and finite");
        }
        if self.multiple == 0 {
            return bad("multiple must be at least 1");
        }
        if self.min_width == 0 {
            return bad("min_width must be at least 1");
        }
        if !(self.omega_precision.is_finite() && self.omega_precision > 0.0 && self.omega_precision <= 1.0) {
            return bad("omega_precision must be in (0, 1]");
        }
        Ok(())
    }
}

/// Intrinsic dimensionality of every non-fixed tap.
pub fn shrink(
    graph: &ArchitectureGraph,
    spectra: &BTreeMap<String, Eigenspectrum>,
    threshold: f64,
) -> Result<BTreeMap<String, usize>> {
    check_threshold(threshold)?;
    graph
        .taps()
        .iter()
        .filter(|t| !t.fixed)
        .map(|t| {
            let s = spectra.get(&t.id).ok_or_else(|| SearchError::MissingSpectrum(t.id.clone()))?;
            Ok((t.id.clone(), s.intrinsic_dim(threshold)?))
        })
        .collect()
}

fn geometric_mean(values: &[usize]) -> f64 {
    if values.contains(&0) {
        return 0.0;
    }
    let log_sum: f64 = values.iter().map(|&v| (v as f64).ln()).sum();
    (log_sum / values.len() as f64).exp()
}

/// Turns dimensionalities into widths that respect tie groups. `min_width = 0`
/// disables the floor.
pub fn adjust(graph: &ArchitectureGraph, dims: &BTreeMap<String, usize>, min_width: u32) -> Result<WidthAssignment> {
    let dim = |tap: &str| dims.get(tap).copied().ok_or_else(|| SearchError::MissingSpectrum(tap.to_string()));
    let floor = |tap: &str, v: u64| -> Result<u32> {
        let w = v.max(u64::from(min_width)).min(u64::from(u32::MAX)) as u32;
        if w == 0 {
            Err(SearchError::ZeroWidth(tap.to_string()))
        } else {
            Ok(w)
        }
    };

    let mut out = WidthAssignment::new();
    for group in graph.tie_groups() {
        let value = match group.rule {
            TieRule::Fixed => continue,
            TieRule::Max => group.members.iter().map(|m| dim(m)).try_fold(0, |a, d| d.map(|d| a.max(d)))? as u64,
            TieRule::Geomean => {
                let ds = group.members.iter().map(|m| dim(m)).collect::<Result<Vec<_>>>()?;
                if ds.contains(&0) && min_width == 0 {
                    return Err(SearchError::ZeroGeomean(group.id.clone()));
                }
                geometric_mean(&ds).round() as u64
            }
        };
        for m in &group.members {
            out.insert(m.clone(), floor(m, value)?);
        }
    }
    for tap in graph.taps().iter().filter(|t| !t.fixed && t.tie_group.is_none()) {
        out.insert(tap.id.clone(), floor(&tap.id, dim(&tap.id)? as u64)?);
    }
    Ok(out)
}

/// Nearest positive multiple of `multiple` (halves round up), then at least
/// `min_width`.
pub fn round_width(x: f64, multiple: u32, min_width: u32) -> u32 {
    let m = f64::from(multiple.max(1));
    let k = (x / m).round().max(1.0);
    let w = (k * m).min(f64::from(u32::MAX)) as u32;
    w.max(min_width)
}

pub fn round_to_multiple(widths: &BTreeMap<String, f64>, multiple: u32, min_width: u32) -> WidthAssignment {
    widths.iter().map(|(k, &v)| (k.clone(), round_width(v, multiple, min_width))).collect()
}

/// Result of [`expand`].
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub omega: f64,
    /// `omega * adjusted`, before rounding.
    pub scaled: BTreeMap<String, f64>,
    /// Rounded widths certified within budget.
    pub widths: WidthAssignment,
    pub cost: u64,
}

/// Dense evaluation of `cost(round(omega * adjusted))` for one graph.
struct ScaledCost<'a> {
    graph: &'a ArchitectureGraph,
    base: Vec<u32>,
    scalable: Vec<(usize, f64)>,
    metric: Metric,
    multiple: u32,
    min_width: u32,
}

impl ScaledCost<'_> {
    fn dense(&self, omega: f64) -> Vec<u32> {
        let mut dense = self.base.clone();
        for &(i, w) in &self.scalable {
            dense[i] = round_width(omega * w, self.multiple, self.min_width);
        }
        dense
    }

    fn cost(&self, omega: f64) -> Result<u64> {
        Ok(self.graph.dense_cost(&self.dense(omega), self.metric)?)
    }
}

fn to_assignment(graph: &ArchitectureGraph, dense: &[u32]) -> WidthAssignment {
    graph
        .taps()
        .iter()
        .zip(dense)
        .filter(|(t, _)| !t.fixed)
        .map(|(t, &w)| (t.id.clone(), w))
        .collect()
}

/// Finds the largest multiplier on the lattice `k * omega_precision` whose
/// rounded widths fit the budget.
///
/// Rounded cost is nondecreasing in the multiplier, so feasibility is a
/// prefix of the lattice. The upper bracket starts at 1 and doubles until it
/// is infeasible, then the bracket is bisected down to one lattice step.
pub fn expand(graph: &ArchitectureGraph, adjusted: &WidthAssignment, cfg: &SearchConfig) -> Result<Expansion> {
    cfg.validate()?;
    let base = graph.dense_widths(adjusted)?;
    if graph.dense_cost(&base, cfg.metric)? == 0 {
        return Err(SearchError::ZeroCost);
    }
    let scalable: Vec<(usize, f64)> = graph
        .taps()
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.fixed)
        .map(|(i, _)| (i, f64::from(base[i])))
        .collect();
    let eval = ScaledCost {
        graph,
        base,
        scalable,
        metric: cfg.metric,
        multiple: cfg.multiple,
        min_width: cfg.min_width,
    };
    let step = cfg.omega_precision;
    let omega = |k: u64| k as f64 * step;
    let feasible = |k: u64| -> Result<bool> { Ok(eval.cost(omega(k))? as f64 <= cfg.budget) };

    if !feasible(0)? {
        return Err(SearchError::Infeasible { floor_cost: eval.cost(0.0)?, budget: cfg.budget });
    }
    let mut lo = 0u64;
    let mut hi = (1.0 / step).ceil().max(1.0) as u64;
    while feasible(hi)? {
        lo = hi;
        hi = hi.checked_mul(2).filter(|&h| omega(h) < 1e12).ok_or(SearchError::Unbounded)?;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let w = omega(lo);
    let dense = eval.dense(w);
    let cost = graph.dense_cost(&dense, cfg.metric)?;
    let scaled = eval
        .scalable
        .iter()
        .map(|&(i, o)| (graph.taps()[i].id.clone(), w * o))
        .collect();
    Ok(Expansion { omega: w, scaled, widths: to_assignment(graph, &dense), cost })
}

/// A set of taps that must grow together.
struct FillUnit {
    key: String,
    taps: Vec<usize>,
}

fn fill_units(graph: &ArchitectureGraph) -> Vec<FillUnit> {
    let mut units: Vec<FillUnit> = graph
        .tie_groups()
        .iter()
        .filter(|g| g.rule != TieRule::Fixed)
        .map(|g| FillUnit {
            key: g.members.iter().min().cloned().unwrap_or_default(),
            taps: g.members.iter().filter_map(|m| graph.tap_position(m)).collect(),
        })
        .collect();
    units.extend(
        graph
            .taps()
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.fixed && t.tie_group.is_none())
            .map(|(i, t)| FillUnit { key: t.id.clone(), taps: vec![i] }),
    );
    units.sort_by(|a, b| a.key.cmp(&b.key));
    units
}

/// Spends leftover budget one `multiple` at a time, always on the unit
/// whose increment costs least. Ties go to the lexicographically smallest tap
/// id. Units whose growth does not change the cost are never grown.
pub fn greedy_fill(graph: &ArchitectureGraph, widths: &WidthAssignment, cfg: &SearchConfig) -> Result<WidthAssignment> {
    cfg.validate()?;
    let mut dense = graph.dense_widths(widths)?;
    let mut cost = graph.dense_cost(&dense, cfg.metric)?;
    if cost as f64 > cfg.budget {
        return Err(SearchError::OverBudget { cost, budget: cfg.budget });
    }
    let units = fill_units(graph);
    loop {
        let mut best: Option<(u64, usize)> = None;
        for (u, unit) in units.iter().enumerate() {
            let mut trial = dense.clone();
            let mut overflow = false;
            for &t in &unit.taps {
                match trial[t].checked_add(cfg.multiple) {
                    Some(w) => trial[t] = w,
                    None => overflow = true,
                }
            }
            if overflow {
                continue;
            }
            let Ok(next) = graph.dense_cost(&trial, cfg.metric) else { continue };
            if next == cost || next as f64 > cfg.budget {
                continue;
            }
            // Units are sorted by key, so strict `<` keeps the smallest key on ties.
            if best.is_none_or(|(c, _)| next < c) {
                best = Some((next, u));
            }
        }
        let Some((next, u)) = best else { break };
        for &t in &units[u].taps {
            dense[t] += cfg.multiple;
        }
        cost = next;
    }
    Ok(to_assignment(graph, &dense))
}

/// Audit trail for one tap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapRecord {
    pub tap_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tie_group: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    pub original: u32,
    pub intrinsic_dim: usize,
    pub adjusted: u32,
    pub expanded: f64,
    pub rounded: u32,
    #[serde(rename = "final")]
    pub final_width: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub metric: Metric,
    pub budget: f64,
    pub threshold: f64,
    pub multiple: u32,
    pub min_width: u32,
    pub omega: f64,
    pub original_cost: u64,
    pub rounded_cost: u64,
    pub achieved_cost: u64,
    pub taps: Vec<TapRecord>,
}

impl SearchReport {
    pub fn final_widths(&self) -> WidthAssignment {
        self.taps.iter().map(|t| (t.tap_id.clone(), t.final_width)).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per tap.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tap_id,tie_group,stage,original,intrinsic_dim,adjusted,expanded,rounded,final\n");
        for t in &self.taps {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                t.tap_id,
                t.tie_group.as_deref().unwrap_or(""),
                t.stage.as_deref().unwrap_or(""),
                t.original,
                t.intrinsic_dim,
                t.adjusted,
                t.expanded,
                t.rounded,
                t.final_width
            );
        }
        s
    }
}

/// Shrink, adjust, expand and (optionally) fill.
pub fn run_pipeline(
    graph: &ArchitectureGraph,
    spectra: &BTreeMap<String, Eigenspectrum>,
    cfg: &SearchConfig,
) -> Result<SearchReport> {
    cfg.validate()?;
    let dims = shrink(graph, spectra, cfg.threshold)?;
    let adjusted = adjust(graph, &dims, cfg.min_width)?;
    let expansion = expand(graph, &adjusted, cfg)?;
    let final_widths = if cfg.greedy_fill {
        greedy_fill(graph, &expansion.widths, cfg)?
    } else {
        expansion.widths.clone()
    };
    let achieved_cost = graph.compute_cost(&final_widths, cfg.metric)?;
    if achieved_cost as f64 > cfg.budget {
        return Err(SearchError::OverBudget { cost: achieved_cost, budget: cfg.budget });
    }

    let taps = graph
        .taps()
        .iter()
        .filter(|t| !t.fixed)
        .map(|t| {
            let id = t.id.as_str();
            TapRecord {
                tap_id: t.id.clone(),
                tie_group: t.tie_group.clone(),
                stage: t.stage.clone(),
                original: t.width,
                intrinsic_dim: dims[id],
                adjusted: adjusted.get(id).unwrap_or_default(),
                expanded: expansion.scaled[id],
                rounded: expansion.widths.get(id).unwrap_or_default(),
                final_width: final_widths.get(id).unwrap_or_default(),
            }
        })
        .collect();

    Ok(SearchReport {
        metric: cfg.metric,
        budget: cfg.budget,
        threshold: cfg.threshold,
        multiple: cfg.multiple,
        min_width: cfg.min_width,
        omega: expansion.omega,
        original_cost: graph.cost(cfg.metric)?,
        rounded_cost: expansion.cost,
        achieved_cost,
        taps,
    })
}

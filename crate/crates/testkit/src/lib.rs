//! Brute-force oracles shared by the integration and acceptance tests.
//!
//! Nothing here calls into the code paths it is used to check: costs are
//! recomputed from the public layer list, eigenvalues come from a cyclic
//! Jacobi solver, and multiplier search is a plain grid scan.

use std::collections::BTreeMap;

use iasearch_core::archgraph::{ArchConfig, InputSpec, LayerKind, LayerSpec, Tap, TieGroup};
use iasearch_core::{ArchitectureGraph, Metric, TieRule, WidthAssignment};
use nalgebra::DMatrix;
use rand::Rng;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
pub fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a = (m + m.transpose()) * 0.5;
    let scale: f64 = a.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)].powi(2)).sum();
        if off <= 1e-32 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut d: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    d.sort_by(|x, y| y.total_cmp(x));
    d
}

/// Clamp at zero and divide by the largest value.
pub fn normalize_spectrum(raw: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = raw.iter().map(|v| v.max(0.0)).collect();
    let max = clamped.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return vec![0.0; raw.len()];
    }
    clamped.iter().map(|v| v / max).collect()
}

/// `A Aᵀ` with Gaussian-ish entries, optionally rank-deficient.
pub fn random_psd<R: Rng>(rng: &mut R, n: usize, rank: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose()
}

pub fn random_orthogonal<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q()
}

fn width_of(graph: &ArchitectureGraph, widths: &WidthAssignment, tap: &str) -> u128 {
    let t = graph.tap(tap).expect("tap exists");
    u128::from(if t.fixed { t.width } else { widths.get(tap).expect("tap assigned") })
}

/// Sum over layers of `I * O * K^2 (* W * H)`, straight from the layer list.
pub fn brute_cost(graph: &ArchitectureGraph, widths: &WidthAssignment, metric: Metric) -> u128 {
    graph
        .layers()
        .iter()
        .map(|l| {
            let base = width_of(graph, widths, &l.input_tap) * width_of(graph, widths, &l.output_tap) * u128::from(l.kernel).pow(2);
            match metric {
                Metric::Params => base,
                Metric::Macs => {
                    let (w, h) = graph.spatial_dims(&l.id).expect("layer exists");
                    base * u128::from(w) * u128::from(h)
                }
            }
        })
        .sum()
}

pub fn nearest_multiple(x: f64, multiple: u32, min_width: u32) -> u32 {
    let q = (x / f64::from(multiple)).round().max(1.0);
    ((q as u32) * multiple).max(min_width)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub omega: f64,
    pub widths: WidthAssignment,
    pub cost: u128,
    /// The last grid point was feasible, so the true optimum may lie beyond.
    pub capped: bool,
}

/// Largest `omega = i * step`, `1 <= i <= max_omega / step`, whose rounded
/// widths fit the budget, found by trying every grid point.
#[allow(clippy::too_many_arguments)]
pub fn grid_scan(
    graph: &ArchitectureGraph,
    adjusted: &WidthAssignment,
    metric: Metric,
    budget: f64,
    multiple: u32,
    min_width: u32,
    step: f64,
    max_omega: f64,
) -> Option<GridResult> {
    let n = (max_omega / step).round() as u64;
    let mut best = None;
    for i in 1..=n {
        let omega = i as f64 * step;
        let widths: WidthAssignment = adjusted
            .iter()
            .map(|(k, w)| (k.to_string(), nearest_multiple(omega * f64::from(w), multiple, min_width)))
            .collect();
        let cost = brute_cost(graph, &widths, metric);
        if cost as f64 <= budget {
            best = Some(GridResult { omega, widths, cost, capped: i == n });
        }
    }
    best
}

fn fill_units(graph: &ArchitectureGraph) -> Vec<Vec<String>> {
    let mut units: Vec<Vec<String>> = graph
        .tie_groups()
        .iter()
        .filter(|g| g.rule != TieRule::Fixed)
        .map(|g| g.members.clone())
        .collect();
    units.extend(graph.taps().iter().filter(|t| !t.fixed && t.tie_group.is_none()).map(|t| vec![t.id.clone()]));
    units
}

/// Highest cost reachable from `widths` by any sequence of `+multiple`
/// increments (one unit at a time) that never exceeds the budget.
pub fn exhaustive_best_fill(graph: &ArchitectureGraph, widths: &WidthAssignment, metric: Metric, budget: f64, multiple: u32) -> u128 {
    let units: Vec<Vec<String>> = fill_units(graph)
        .into_iter()
        .filter(|u| {
            let mut w = widths.clone();
            for t in u {
                w.insert(t.clone(), widths.get(t).unwrap() + multiple);
            }
            brute_cost(graph, &w, metric) != brute_cost(graph, widths, metric)
        })
        .collect();
    let mut seen = std::collections::HashSet::new();
    let mut best = brute_cost(graph, widths, metric);
    let mut stack = vec![vec![0u32; units.len()]];
    while let Some(counts) = stack.pop() {
        if !seen.insert(counts.clone()) {
            continue;
        }
        let mut w = widths.clone();
        for (u, &c) in units.iter().zip(&counts) {
            for t in u {
                w.insert(t.clone(), widths.get(t).unwrap() + c * multiple);
            }
        }
        let cost = brute_cost(graph, &w, metric);
        if cost as f64 > budget {
            continue;
        }
        best = best.max(cost);
        for u in 0..units.len() {
            let mut next = counts.clone();
            next[u] += 1;
            stack.push(next);
        }
    }
    best
}

/// Random graph with 1..=`max_taps` searchable taps and one layer per produced
/// tap, plus a fixed output. Some taps are tied in max or geomean groups.
pub fn random_toy_graph<R: Rng>(rng: &mut R, max_taps: usize) -> ArchitectureGraph {
    let k = rng.random_range(1..=max_taps);
    let channels = rng.random_range(1..=8);
    let side = rng.random_range(1..=32);
    let mut taps = vec![Tap { id: "in".into(), width: channels, tie_group: None, stage: None, fixed: true }];
    let mut layers = Vec::new();
    let mut groups: Vec<TieGroup> = Vec::new();
    let mut names: Vec<String> = vec!["in".into()];

    for i in 0..k {
        let id = format!("t{i}");
        let mut width = rng.random_range(8..=128);
        let mut group = None;
        if i > 0 && rng.random_bool(0.4) {
            // Join the previous tap's group, or start one with it.
            let prev = i - 1;
            let gid = match taps[prev + 1].tie_group.clone() {
                Some(g) => g,
                None => {
                    let g = format!("g{prev}");
                    let rule = if rng.random_bool(0.5) { TieRule::Max } else { TieRule::Geomean };
                    taps[prev + 1].tie_group = Some(g.clone());
                    groups.push(TieGroup { id: g.clone(), rule, members: vec![format!("t{prev}")], stage: None });
                    g
                }
            };
            width = taps[prev + 1].width;
            groups.iter_mut().find(|g| g.id == gid).unwrap().members.push(id.clone());
            group = Some(gid);
        }
        taps.push(Tap { id: id.clone(), width, tie_group: group, stage: None, fixed: false });
        let input = names[rng.random_range(0..names.len())].clone();
        let kind = if rng.random_bool(0.15) { LayerKind::Fc } else { LayerKind::Conv };
        layers.push(LayerSpec {
            id: format!("l{i}"),
            kind,
            kernel: if kind == LayerKind::Fc { 1 } else { [1, 3, 5][rng.random_range(0..3)] },
            stride: rng.random_range(1..=2),
            input_tap: input,
            output_tap: id.clone(),
            out_spatial: None,
        });
        names.push(id);
    }
    let outputs = rng.random_range(1..=16);
    taps.push(Tap { id: "out".into(), width: outputs, tie_group: None, stage: None, fixed: true });
    layers.push(LayerSpec {
        id: "head".into(),
        kind: LayerKind::Conv,
        kernel: 1,
        stride: 1,
        input_tap: format!("t{}", k - 1),
        output_tap: "out".into(),
        out_spatial: None,
    });

    ArchitectureGraph::from_config(ArchConfig {
        input: InputSpec { width: side, height: side, channels },
        taps,
        tie_groups: groups,
        layers,
    })
    .expect("toy graph is valid")
}

/// Unit eigenvalues for a rank-`rank` spectrum on `channels` channels.
pub fn rank_spectrum(tap: &str, channels: usize, rank: usize) -> iasearch_core::Eigenspectrum {
    let values: Vec<f64> = (0..channels).map(|i| if i < rank { 1.0 - 0.5 * i as f64 / channels as f64 } else { 0.0 }).collect();
    iasearch_core::Eigenspectrum { tap_id: tap.to_string(), raw_max: if rank > 0 { 1.0 } else { 0.0 }, values }
}

/// Spectra for every non-fixed tap with the given rank function.
pub fn spectra_for(graph: &ArchitectureGraph, rank: impl Fn(&str, usize) -> usize) -> BTreeMap<String, iasearch_core::Eigenspectrum> {
    graph
        .taps()
        .iter()
        .filter(|t| !t.fixed)
        .map(|t| (t.id.clone(), rank_spectrum(&t.id, t.width as usize, rank(&t.id, t.width as usize))))
        .collect()
}

//! Architecture graphs: layers, taps and width-tie groups, plus the MAC and
//! parameter cost functions evaluated over them.
//!
//! A graph is a set of *taps* (named feature maps carrying a channel width)
//! connected by *layers*. Every layer reads one tap and writes one tap, so the
//! width of the layer's input is the width of its input tap and the width of
//! its output is the width of its output tap. Taps that must share a width
//! (shortcut paths, bottleneck convolutions of one stage) are collected in tie
//! groups.
//!
//! Spatial sizes are derived from the reference input resolution: a source tap
//! that is fixed (the image) has the input resolution, and every layer divides
//! its input size by its stride, rounding up. Transposed convolutions multiply
//! instead. A layer may pin its output size with `out_spatial`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("malformed architecture document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("architecture has no layers")]
    NoLayers,
    #[error("invalid id {0:?}: ids must be non-empty and use only [A-Za-z0-9_.-]")]
    InvalidId(String),
    #[error("duplicate {kind} id {id:?}")]
    DuplicateId { kind: &'static str, id: String },
    #[error("layer {layer:?} references unknown tap {tap:?}")]
    DanglingTap { layer: String, tap: String },
    #[error("tap {tap:?} references unknown tie group {group:?}")]
    DanglingGroup { tap: String, group: String },
    #[error("tie group {group:?} lists tap {tap:?}, which does not reference it")]
    GroupMembership { group: String, tap: String },
    #[error("tie group {0:?} has no members")]
    EmptyGroup(String),
    #[error("tie group {0:?} mixes fixed and non-fixed taps")]
    MixedFixedGroup(String),
    #[error("tie group {0:?} uses rule `fixed` but has non-fixed members")]
    FixedRuleMismatch(String),
    #[error("tie group {group:?} members have unequal widths")]
    GroupWidthMismatch { group: String },
    #[error("{what} of {id:?} must be positive")]
    NonPositive { what: &'static str, id: String },
    #[error("fc layer {0:?} must have kernel 1 and no spatial override")]
    FcShape(String),
    #[error("tap {0:?} is produced by more than one layer")]
    MultipleProducers(String),
    #[error("cycle detected through tap {0:?}")]
    Cycle(String),
    #[error("cannot resolve the spatial size of layer {0:?}: its input tap has no producer and it has no override")]
    UnresolvedSpatial(String),
    #[error("source tap {tap:?} has width {found} but the input has {expected} channels")]
    InputChannels { tap: String, expected: u32, found: u32 },
    #[error("unknown layer {0:?}")]
    UnknownLayer(String),
    #[error("width assignment names unknown tap {0:?}")]
    UnknownTap(String),
    #[error("width assignment sets fixed tap {0:?}")]
    FixedTap(String),
    #[error("width assignment is missing tap {0:?}")]
    MissingTap(String),
    #[error("width of tap {0:?} must be positive")]
    ZeroWidth(String),
    #[error("width assignment violates tie group {group:?} ({a} vs {b})")]
    TieViolation { group: String, a: u32, b: u32 },
    #[error("cost overflows a 64-bit counter")]
    CostOverflow,
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Conv,
    Fc,
    TransposedConv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieRule {
    /// Shared width is the largest member dimensionality.
    Max,
    /// Shared width is the rounded geometric mean of member dimensionalities.
    Geomean,
    /// Members are fixed taps and never resized.
    Fixed,
}

/// Resource metric for [`ArchitectureGraph::compute_cost`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Macs,
    Params,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Macs => "macs",
            Metric::Params => "params",
        })
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "macs" => Ok(Metric::Macs),
            "params" => Ok(Metric::Params),
            other => Err(format!("unknown metric {other:?} (expected macs or params)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tap {
    pub id: String,
    pub width: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tie_group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fixed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TieGroup {
    pub id: String,
    pub rule: TieRule,
    pub members: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub id: String,
    pub kind: LayerKind,
    pub kernel: u32,
    pub stride: u32,
    pub input_tap: String,
    pub output_tap: String,
    /// Output `[width, height]` in pixels, overriding propagation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_spatial: Option<[u32; 2]>,
}

/// The on-disk document. Field order is the canonical key order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub input: InputSpec,
    pub taps: Vec<Tap>,
    #[serde(default)]
    pub tie_groups: Vec<TieGroup>,
    pub layers: Vec<LayerSpec>,
}

/// Channel widths keyed by tap id. Covers the non-fixed taps of a graph.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WidthAssignment(BTreeMap<String, u32>);

impl WidthAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, tap: &str) -> Option<u32> {
        self.0.get(tap).copied()
    }

    pub fn insert(&mut self, tap: impl Into<String>, width: u32) -> Option<u32> {
        self.0.insert(tap.into(), width)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl FromIterator<(String, u32)> for WidthAssignment {
    fn from_iter<I: IntoIterator<Item = (String, u32)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ResolvedLayer {
    pub input: usize,
    pub output: usize,
    pub kernel_sq: u64,
    pub area: u64,
}

/// A validated architecture. Immutable once built.
#[derive(Debug, Clone)]
pub struct ArchitectureGraph {
    config: ArchConfig,
    tap_index: HashMap<String, usize>,
    layer_index: HashMap<String, usize>,
    spatial: Vec<(u32, u32)>,
    resolved: Vec<ResolvedLayer>,
}

impl PartialEq for ArchitectureGraph {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
    }
}

impl Eq for ArchitectureGraph {}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-'));
    if ok {
        Ok(())
    } else {
        Err(GraphError::InvalidId(id.to_string()))
    }
}

fn positive(v: u32, what: &'static str, id: &str) -> Result<()> {
    if v == 0 {
        Err(GraphError::NonPositive { what, id: id.to_string() })
    } else {
        Ok(())
    }
}

/// Parses and validates an architecture document.
pub fn parse_arch(text: &str) -> Result<ArchitectureGraph> {
    let config: ArchConfig = serde_json::from_str(text)?;
    ArchitectureGraph::from_config(config)
}

impl ArchitectureGraph {
    pub fn from_config(config: ArchConfig) -> Result<Self> {
        let input = config.input;
        positive(input.width, "input width", "input")?;
        positive(input.height, "input height", "input")?;
        positive(input.channels, "input channels", "input")?;
        if config.layers.is_empty() {
            return Err(GraphError::NoLayers);
        }

        let mut tap_index = HashMap::with_capacity(config.taps.len());
        for (i, tap) in config.taps.iter().enumerate() {
            check_id(&tap.id)?;
            positive(tap.width, "width", &tap.id)?;
            if tap_index.insert(tap.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateId { kind: "tap", id: tap.id.clone() });
            }
        }

        let mut group_index = HashMap::with_capacity(config.tie_groups.len());
        for (i, group) in config.tie_groups.iter().enumerate() {
            check_id(&group.id)?;
            if group_index.insert(group.id.as_str(), i).is_some() {
                return Err(GraphError::DuplicateId { kind: "tie group", id: group.id.clone() });
            }
        }
        for tap in &config.taps {
            if let Some(g) = &tap.tie_group {
                let group = group_index
                    .get(g.as_str())
                    .map(|&i| &config.tie_groups[i])
                    .ok_or_else(|| GraphError::DanglingGroup { tap: tap.id.clone(), group: g.clone() })?;
                if !group.members.contains(&tap.id) {
                    return Err(GraphError::GroupMembership { group: g.clone(), tap: tap.id.clone() });
                }
            }
        }
        for group in &config.tie_groups {
            if group.members.is_empty() {
                return Err(GraphError::EmptyGroup(group.id.clone()));
            }
            let mut fixed = None;
            let mut width = None;
            for (pos, m) in group.members.iter().enumerate() {
                if group.members[..pos].contains(m) {
                    return Err(GraphError::DuplicateId { kind: "tie group member", id: m.clone() });
                }
                let tap = tap_index
                    .get(m)
                    .map(|&i| &config.taps[i])
                    .filter(|t| t.tie_group.as_deref() == Some(group.id.as_str()))
                    .ok_or_else(|| GraphError::GroupMembership { group: group.id.clone(), tap: m.clone() })?;
                match fixed {
                    None => fixed = Some(tap.fixed),
                    Some(f) if f != tap.fixed => return Err(GraphError::MixedFixedGroup(group.id.clone())),
                    _ => {}
                }
                match width {
                    None => width = Some(tap.width),
                    Some(w) if w != tap.width => {
                        return Err(GraphError::GroupWidthMismatch { group: group.id.clone() })
                    }
                    _ => {}
                }
            }
            let all_fixed = fixed.unwrap_or(false);
            if (group.rule == TieRule::Fixed) != all_fixed {
                return Err(if all_fixed {
                    GraphError::MixedFixedGroup(group.id.clone())
                } else {
                    GraphError::FixedRuleMismatch(group.id.clone())
                });
            }
        }

        let mut layer_index = HashMap::with_capacity(config.layers.len());
        let mut producer: Vec<Option<usize>> = vec![None; config.taps.len()];
        let mut io = Vec::with_capacity(config.layers.len());
        for (i, layer) in config.layers.iter().enumerate() {
            check_id(&layer.id)?;
            if layer_index.insert(layer.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateId { kind: "layer", id: layer.id.clone() });
            }
            positive(layer.kernel, "kernel", &layer.id)?;
            positive(layer.stride, "stride", &layer.id)?;
            if let Some([w, h]) = layer.out_spatial {
                positive(w, "output spatial width", &layer.id)?;
                positive(h, "output spatial height", &layer.id)?;
            }
            if layer.kind == LayerKind::Fc && (layer.kernel != 1 || layer.out_spatial.is_some()) {
                return Err(GraphError::FcShape(layer.id.clone()));
            }
            let lookup = |tap: &String| {
                tap_index.get(tap).copied().ok_or_else(|| GraphError::DanglingTap {
                    layer: layer.id.clone(),
                    tap: tap.clone(),
                })
            };
            let (inp, out) = (lookup(&layer.input_tap)?, lookup(&layer.output_tap)?);
            if producer[out].replace(i).is_some() {
                return Err(GraphError::MultipleProducers(layer.output_tap.clone()));
            }
            io.push((inp, out));
        }

        // Kahn's algorithm over layers; a layer is ready once its input tap's
        // producer (if any) has been placed.
        let n = config.layers.len();
        let mut pending: Vec<usize> = io.iter().map(|&(inp, _)| usize::from(producer[inp].is_some())).collect();
        let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, &(inp, _)) in io.iter().enumerate() {
            if let Some(p) = producer[inp] {
                consumers[p].push(i);
            }
        }
        let mut order: Vec<usize> = (0..n).filter(|&i| pending[i] == 0).collect();
        let mut head = 0;
        while head < order.len() {
            let l = order[head];
            head += 1;
            for &c in &consumers[l] {
                pending[c] -= 1;
                if pending[c] == 0 {
                    order.push(c);
                }
            }
        }
        if order.len() != n {
            let stuck = (0..n).find(|&i| pending[i] > 0).expect("some layer is unplaced");
            return Err(GraphError::Cycle(config.layers[stuck].input_tap.clone()));
        }

        for (t, tap) in config.taps.iter().enumerate() {
            if producer[t].is_none() && tap.fixed && io.iter().any(|&(inp, _)| inp == t) && tap.width != input.channels {
                return Err(GraphError::InputChannels {
                    tap: tap.id.clone(),
                    expected: input.channels,
                    found: tap.width,
                });
            }
        }

        let mut spatial = vec![(0u32, 0u32); n];
        for &l in &order {
            let layer = &config.layers[l];
            let (inp, _) = io[l];
            let in_size = match producer[inp] {
                Some(p) => Some(spatial[p]),
                None if config.taps[inp].fixed => Some((input.width, input.height)),
                None => None,
            };
            spatial[l] = match (layer.kind, layer.out_spatial, in_size) {
                (LayerKind::Fc, _, _) => (1, 1),
                (_, Some([w, h]), _) => (w, h),
                (LayerKind::TransposedConv, None, Some((w, h))) => (
                    w.checked_mul(layer.stride).ok_or(GraphError::CostOverflow)?,
                    h.checked_mul(layer.stride).ok_or(GraphError::CostOverflow)?,
                ),
                (_, None, Some((w, h))) => (w.div_ceil(layer.stride), h.div_ceil(layer.stride)),
                (_, None, None) => return Err(GraphError::UnresolvedSpatial(layer.id.clone())),
            };
        }

        let resolved = config
            .layers
            .iter()
            .zip(&io)
            .zip(&spatial)
            .map(|((layer, &(input, output)), &(w, h))| ResolvedLayer {
                input,
                output,
                kernel_sq: u64::from(layer.kernel) * u64::from(layer.kernel),
                area: u64::from(w) * u64::from(h),
            })
            .collect();

        Ok(Self { config, tap_index, layer_index, spatial, resolved })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn input(&self) -> InputSpec {
        self.config.input
    }

    pub fn taps(&self) -> &[Tap] {
        &self.config.taps
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.config.layers
    }

    pub fn tie_groups(&self) -> &[TieGroup] {
        &self.config.tie_groups
    }

    pub fn tap(&self, id: &str) -> Option<&Tap> {
        self.tap_index.get(id).map(|&i| &self.config.taps[i])
    }

    pub fn tie_group(&self, id: &str) -> Option<&TieGroup> {
        self.config.tie_groups.iter().find(|g| g.id == id)
    }

    pub(crate) fn tap_position(&self, id: &str) -> Option<usize> {
        self.tap_index.get(id).copied()
    }

    /// Output `(width, height)` of a layer at the reference resolution.
    pub fn spatial_dims(&self, layer_id: &str) -> Result<(u32, u32)> {
        self.layer_index
            .get(layer_id)
            .map(|&i| self.spatial[i])
            .ok_or_else(|| GraphError::UnknownLayer(layer_id.to_string()))
    }

    /// Current widths of every non-fixed tap.
    pub fn current_widths(&self) -> WidthAssignment {
        self.config
            .taps
            .iter()
            .filter(|t| !t.fixed)
            .map(|t| (t.id.clone(), t.width))
            .collect()
    }

    /// Expands an assignment into a dense width vector in tap order, checking
    /// coverage, positivity and tie groups.
    pub(crate) fn dense_widths(&self, widths: &WidthAssignment) -> Result<Vec<u32>> {
        let mut dense: Vec<u32> = self.config.taps.iter().map(|t| t.width).collect();
        let mut seen = vec![false; dense.len()];
        for (id, w) in widths.iter() {
            let i = self.tap_position(id).ok_or_else(|| GraphError::UnknownTap(id.to_string()))?;
            if self.config.taps[i].fixed {
                return Err(GraphError::FixedTap(id.to_string()));
            }
            if w == 0 {
                return Err(GraphError::ZeroWidth(id.to_string()));
            }
            dense[i] = w;
            seen[i] = true;
        }
        if let Some(t) = self.config.taps.iter().zip(&seen).find(|(t, s)| !t.fixed && !**s) {
            return Err(GraphError::MissingTap(t.0.id.clone()));
        }
        self.check_ties(&dense)?;
        Ok(dense)
    }

    pub(crate) fn check_ties(&self, dense: &[u32]) -> Result<()> {
        for group in &self.config.tie_groups {
            let mut it = group.members.iter().map(|m| dense[self.tap_index[m]]);
            let first = it.next().unwrap_or(0);
            if let Some(b) = it.find(|&w| w != first) {
                return Err(GraphError::TieViolation { group: group.id.clone(), a: first, b });
            }
        }
        Ok(())
    }

    pub(crate) fn dense_layer_cost(&self, layer: usize, dense: &[u32], metric: Metric) -> Option<u64> {
        let r = &self.resolved[layer];
        let base = u64::from(dense[r.input])
            .checked_mul(u64::from(dense[r.output]))?
            .checked_mul(r.kernel_sq)?;
        match metric {
            Metric::Params => Some(base),
            Metric::Macs => base.checked_mul(r.area),
        }
    }

    pub(crate) fn dense_cost(&self, dense: &[u32], metric: Metric) -> Result<u64> {
        (0..self.resolved.len()).try_fold(0u64, |acc, l| {
            self.dense_layer_cost(l, dense, metric)
                .and_then(|c| acc.checked_add(c))
                .ok_or(GraphError::CostOverflow)
        })
    }

    /// Total MACs or weight count over all conv, transposed-conv and fc layers.
    /// Biases, normalization and activations are not counted.
    pub fn compute_cost(&self, widths: &WidthAssignment, metric: Metric) -> Result<u64> {
        let dense = self.dense_widths(widths)?;
        self.dense_cost(&dense, metric)
    }

    /// Cost of the graph at its own widths.
    pub fn cost(&self, metric: Metric) -> Result<u64> {
        let dense: Vec<u32> = self.config.taps.iter().map(|t| t.width).collect();
        self.dense_cost(&dense, metric)
    }

    /// Per-layer costs, in layer order.
    pub fn layer_costs(&self, widths: &WidthAssignment, metric: Metric) -> Result<Vec<u64>> {
        let dense = self.dense_widths(widths)?;
        (0..self.resolved.len())
            .map(|l| self.dense_layer_cost(l, &dense, metric).ok_or(GraphError::CostOverflow))
            .collect()
    }

    /// Returns a copy of the graph with the assignment's widths substituted.
    pub fn apply_widths(&self, widths: &WidthAssignment) -> Result<Self> {
        let dense = self.dense_widths(widths)?;
        let mut next = self.clone();
        for (tap, w) in next.config.taps.iter_mut().zip(dense) {
            tap.width = w;
        }
        Ok(next)
    }

    /// Canonical JSON form: two-space indentation, keys in schema order,
    /// trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.config).expect("config serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(widths: &[u32], input: (u32, u32), strides: &[u32]) -> ArchConfig {
        let mut taps = vec![Tap { id: "in".into(), width: widths[0], tie_group: None, stage: None, fixed: true }];
        let mut layers = Vec::new();
        for (i, (&w, &s)) in widths[1..].iter().zip(strides).enumerate() {
            taps.push(Tap { id: format!("t{i}"), width: w, tie_group: None, stage: None, fixed: false });
            layers.push(LayerSpec {
                id: format!("l{i}"),
                kind: LayerKind::Conv,
                kernel: 3,
                stride: s,
                input_tap: if i == 0 { "in".into() } else { format!("t{}", i - 1) },
                output_tap: format!("t{i}"),
                out_spatial: None,
            });
        }
        ArchConfig {
            input: InputSpec { width: input.0, height: input.1, channels: widths[0] },
            taps,
            tie_groups: vec![],
            layers,
        }
    }

    #[test]
    fn minimal_single_conv() {
        let text = r#"{
            "input": {"width": 8, "height": 8, "channels": 3},
            "taps": [{"id": "img", "width": 3, "fixed": true}, {"id": "c1", "width": 64}],
            "layers": [{"id": "conv", "kind": "conv", "kernel": 3, "stride": 1,
                        "input_tap": "img", "output_tap": "c1"}]
        }"#;
        let g = parse_arch(text).unwrap();
        assert_eq!(g.layers().len(), 1);
        assert_eq!(g.current_widths().len(), 1);
        assert_eq!(g.tap("c1").unwrap().width, 64);
        assert!(g.tap("c1").unwrap().tie_group.is_none());
        assert_eq!(g.spatial_dims("conv").unwrap(), (8, 8));
    }

    #[test]
    fn dangling_tap_is_rejected() {
        let mut cfg = chain(&[3, 16], (8, 8), &[1]);
        cfg.layers[0].input_tap = "nope".into();
        assert!(matches!(
            ArchitectureGraph::from_config(cfg),
            Err(GraphError::DanglingTap { tap, .. }) if tap == "nope"
        ));
    }

    #[test]
    fn validation_errors() {
        let base = chain(&[3, 16, 32], (8, 8), &[1, 1]);

        let mut dup = base.clone();
        dup.taps[2].id = "t0".into();
        assert!(matches!(ArchitectureGraph::from_config(dup), Err(GraphError::DuplicateId { .. })));

        let mut cyc = base.clone();
        cyc.layers[0].input_tap = "t1".into();
        assert!(matches!(ArchitectureGraph::from_config(cyc), Err(GraphError::Cycle(_))));

        let mut empty = base.clone();
        empty.layers.clear();
        assert!(matches!(ArchitectureGraph::from_config(empty), Err(GraphError::NoLayers)));

        let mut unresolved = base.clone();
        unresolved.taps[0].fixed = false;
        assert!(matches!(
            ArchitectureGraph::from_config(unresolved),
            Err(GraphError::UnresolvedSpatial(l)) if l == "l0"
        ));

        let mut zero = base.clone();
        zero.layers[1].out_spatial = Some([0, 4]);
        assert!(matches!(ArchitectureGraph::from_config(zero), Err(GraphError::NonPositive { .. })));

        let mut mixed = base.clone();
        mixed.taps[0].tie_group = Some("g".into());
        mixed.taps[1].tie_group = Some("g".into());
        mixed.taps[1].width = 3;
        mixed.tie_groups.push(TieGroup {
            id: "g".into(),
            rule: TieRule::Max,
            members: vec!["in".into(), "t0".into()],
            stage: None,
        });
        assert!(matches!(ArchitectureGraph::from_config(mixed), Err(GraphError::MixedFixedGroup(_))));

        let mut fc = base;
        fc.layers[1].kind = LayerKind::Fc;
        assert!(matches!(ArchitectureGraph::from_config(fc), Err(GraphError::FcShape(_))));
    }

    #[test]
    fn override_on_unproduced_tap_resolves() {
        let mut cfg = chain(&[3, 16], (8, 8), &[1]);
        cfg.taps[0].fixed = false;
        cfg.layers[0].out_spatial = Some([5, 7]);
        let g = ArchitectureGraph::from_config(cfg).unwrap();
        assert_eq!(g.spatial_dims("l0").unwrap(), (5, 7));
    }

    #[test]
    fn spatial_propagation() {
        let g = ArchitectureGraph::from_config(chain(&[3, 8], (224, 224), &[2])).unwrap();
        assert_eq!(g.spatial_dims("l0").unwrap(), (112, 112));

        // 800 -> 400 -> 200 -> 100 and 1216 -> 608 -> 304 -> 152
        let g = ArchitectureGraph::from_config(chain(&[3, 8, 8, 8], (800, 1216), &[2, 2, 2])).unwrap();
        assert_eq!(g.spatial_dims("l2").unwrap(), (100, 152));

        let g = ArchitectureGraph::from_config(chain(&[3, 8, 8], (7, 9), &[2, 2])).unwrap();
        assert_eq!(g.spatial_dims("l0").unwrap(), (4, 5));
        assert_eq!(g.spatial_dims("l1").unwrap(), (2, 3));
        assert!(matches!(g.spatial_dims("zz"), Err(GraphError::UnknownLayer(_))));
    }

    #[test]
    fn fc_and_transposed_spatial() {
        let mut cfg = chain(&[3, 8, 8], (16, 16), &[2, 2]);
        cfg.layers[1].kind = LayerKind::TransposedConv;
        let g = ArchitectureGraph::from_config(cfg.clone()).unwrap();
        assert_eq!(g.spatial_dims("l1").unwrap(), (16, 16));
        cfg.layers[1].kind = LayerKind::Fc;
        cfg.layers[1].kernel = 1;
        let g = ArchitectureGraph::from_config(cfg).unwrap();
        assert_eq!(g.spatial_dims("l1").unwrap(), (1, 1));
    }

    #[test]
    fn single_conv_cost() {
        let mut cfg = chain(&[3, 64], (224, 224), &[2]);
        cfg.layers[0].kernel = 7;
        let g = ArchitectureGraph::from_config(cfg).unwrap();
        let w = g.current_widths();
        assert_eq!(g.compute_cost(&w, Metric::Macs).unwrap(), 118_013_952);
        assert_eq!(g.compute_cost(&w, Metric::Params).unwrap(), 9_408);
    }

    #[test]
    fn assignment_errors() {
        let mut cfg = chain(&[3, 16, 16], (8, 8), &[1, 1]);
        cfg.taps[1].tie_group = Some("g".into());
        cfg.taps[2].tie_group = Some("g".into());
        cfg.tie_groups.push(TieGroup {
            id: "g".into(),
            rule: TieRule::Max,
            members: vec!["t0".into(), "t1".into()],
            stage: None,
        });
        let g = ArchitectureGraph::from_config(cfg).unwrap();
        assert_eq!(g.apply_widths(&g.current_widths()).unwrap(), g);

        let mut w = g.current_widths();
        w.insert("t0", 96);
        w.insert("t1", 128);
        assert!(matches!(g.apply_widths(&w), Err(GraphError::TieViolation { .. })));

        let mut w = g.current_widths();
        w.insert("in", 3);
        assert!(matches!(g.apply_widths(&w), Err(GraphError::FixedTap(_))));

        let mut w = g.current_widths();
        w.insert("t0", 0);
        assert!(matches!(g.compute_cost(&w, Metric::Macs), Err(GraphError::ZeroWidth(_))));

        let w: WidthAssignment = [("t0".to_string(), 16)].into_iter().collect();
        assert!(matches!(g.compute_cost(&w, Metric::Macs), Err(GraphError::MissingTap(_))));
    }

    #[test]
    fn canonical_roundtrip() {
        let g = ArchitectureGraph::from_config(chain(&[3, 16, 32], (8, 8), &[1, 2])).unwrap();
        let text = g.to_json();
        let back = parse_arch(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_json(), text);
        let input_pos = text.find("\"input\"").unwrap();
        let taps_pos = text.find("\"taps\"").unwrap();
        let groups_pos = text.find("\"tie_groups\"").unwrap();
        let layers_pos = text.find("\"layers\"").unwrap();
        assert!(input_pos < taps_pos && taps_pos < groups_pos && groups_pos < layers_pos);
    }

    #[test]
    fn metric_parsing() {
        assert_eq!("MACs".parse::<Metric>().unwrap(), Metric::Macs);
        assert_eq!("params".parse::<Metric>().unwrap(), Metric::Params);
        assert!("flops".parse::<Metric>().is_err());
    }
}

//! Reference ResNet-50 skeleton.
//!
//! Bottleneck blocks use stride 2 in the 3x3 convolution of the first block of
//! conv3, conv4 and conv5, and in the matching projection shortcut. The stem
//! and the 1,000-way classifier output are fixed taps. Each stage has two tie
//! groups: `conv{s}_mid` (geomean rule) holds the outputs of the first and
//! second convolution of every block, and `conv{s}_out` (max rule) holds every
//! feature map that passes through the shortcut.

use crate::archgraph::{
    ArchConfig, ArchitectureGraph, GraphError, InputSpec, LayerKind, LayerSpec, Tap, TieGroup, TieRule,
    WidthAssignment,
};

/// `(blocks, bottleneck width, shortcut width)` for conv2..conv5.
pub const RESNET50_STAGES: [(u32, u32, u32); 4] = [(3, 64, 256), (4, 128, 512), (6, 256, 1024), (3, 512, 2048)];

/// Keys of the nine-entry width vector: the stem tap, then the mid and out
/// groups of each stage.
pub const RESNET50_WIDTH_KEYS: [&str; 9] = [
    "conv1",
    "conv2_mid",
    "conv2_out",
    "conv3_mid",
    "conv3_out",
    "conv4_mid",
    "conv4_out",
    "conv5_mid",
    "conv5_out",
];

fn tap(id: &str, width: u32, group: Option<&str>, stage: Option<&str>, fixed: bool) -> Tap {
    Tap {
        id: id.to_string(),
        width,
        tie_group: group.map(str::to_string),
        stage: stage.map(str::to_string),
        fixed,
    }
}

fn conv(id: &str, kernel: u32, stride: u32, input: &str, output: &str, out_spatial: Option<[u32; 2]>) -> LayerSpec {
    LayerSpec {
        id: id.to_string(),
        kind: LayerKind::Conv,
        kernel,
        stride,
        input_tap: input.to_string(),
        output_tap: output.to_string(),
        out_spatial,
    }
}

/// ResNet-50 at 224x224 with 1,000 classes.
pub fn resnet50_config() -> ArchConfig {
    let mut taps = vec![tap("image", 3, None, None, true), tap("conv1", 64, None, Some("conv1"), true)];
    let mut layers = vec![conv("conv1", 7, 2, "image", "conv1", None)];
    let mut tie_groups = Vec::new();

    // Max pooling after the stem halves 112 to 56; pinned on stage-2 entry layers.
    let pooled = Some([56, 56]);
    let mut prev = "conv1".to_string();
    for (s, &(blocks, mid, out)) in RESNET50_STAGES.iter().enumerate() {
        let stage = format!("conv{}", s + 2);
        let mid_group = format!("{stage}_mid");
        let out_group = format!("{stage}_out");
        let mut mid_members = Vec::new();
        let mut out_members = Vec::new();
        for b in 1..=blocks {
            let name = |k: &str| format!("{stage}_{b}_{k}");
            let first = b == 1;
            let stride = if first && s > 0 { 2 } else { 1 };
            let entry = if first && s == 0 { pooled } else { None };
            for k in ["1", "2"] {
                taps.push(tap(&name(k), mid, Some(&mid_group), Some(&stage), false));
                mid_members.push(name(k));
            }
            taps.push(tap(&name("3"), out, Some(&out_group), Some(&stage), false));
            out_members.push(name("3"));
            layers.push(conv(&name("1"), 1, 1, &prev, &name("1"), entry));
            layers.push(conv(&name("2"), 3, stride, &name("1"), &name("2"), None));
            layers.push(conv(&name("3"), 1, 1, &name("2"), &name("3"), None));
            if first {
                taps.push(tap(&name("proj"), out, Some(&out_group), Some(&stage), false));
                out_members.push(name("proj"));
                layers.push(conv(&name("proj"), 1, stride, &prev, &name("proj"), entry));
            }
            prev = name("3");
        }
        tie_groups.push(TieGroup { id: mid_group, rule: TieRule::Geomean, members: mid_members, stage: Some(stage.clone()) });
        tie_groups.push(TieGroup { id: out_group, rule: TieRule::Max, members: out_members, stage: Some(stage) });
    }

    taps.push(tap("logits", 1000, None, None, true));
    layers.push(LayerSpec {
        id: "fc".into(),
        kind: LayerKind::Fc,
        kernel: 1,
        stride: 1,
        input_tap: prev,
        output_tap: "logits".into(),
        out_spatial: None,
    });

    ArchConfig { input: InputSpec { width: 224, height: 224, channels: 3 }, taps, tie_groups, layers }
}

pub fn resnet50() -> ArchitectureGraph {
    ArchitectureGraph::from_config(resnet50_config()).expect("reference config is valid")
}

fn key_width(graph: &ArchitectureGraph, key: &str) -> Option<u32> {
    let tap = match graph.tie_group(key) {
        Some(g) => g.members.first()?.as_str(),
        None => key,
    };
    graph.tap(tap).map(|t| t.width)
}

/// Reads the nine-entry width vector of a ResNet-50 shaped graph.
pub fn resnet50_width_vector(graph: &ArchitectureGraph) -> Option<[u32; 9]> {
    let mut out = [0; 9];
    for (slot, key) in out.iter_mut().zip(RESNET50_WIDTH_KEYS) {
        *slot = key_width(graph, key)?;
    }
    Some(out)
}

/// Builds an assignment from a nine-entry width vector. The stem entry must
/// equal the fixed stem width.
pub fn resnet50_assignment(graph: &ArchitectureGraph, widths: &[u32; 9]) -> Result<WidthAssignment, GraphError> {
    let mut out = WidthAssignment::new();
    for (key, &w) in RESNET50_WIDTH_KEYS.iter().zip(widths) {
        match graph.tie_group(key) {
            Some(g) => {
                for m in &g.members {
                    out.insert(m.clone(), w);
                }
            }
            None => {
                let tap = graph.tap(key).ok_or_else(|| GraphError::UnknownTap(key.to_string()))?;
                if !tap.fixed {
                    out.insert(key.to_string(), w);
                } else if tap.width != w {
                    return Err(GraphError::FixedTap(key.to_string()));
                }
            }
        }
    }
    Ok(out)
}

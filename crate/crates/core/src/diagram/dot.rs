use std::fmt::Write;

use super::{InfluenceDiagram, Level, NodeKind};

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering: one cluster per level, doubled borders on
/// deterministic nodes, boxes for evidence.
pub fn to_dot(diagram: &InfluenceDiagram) -> String {
    let mut out = String::from("digraph model {\n  rankdir=TB;\n  node [fontsize=10];\n");
    for level in Level::ALL {
        let _ = writeln!(out, "  subgraph cluster_{} {{", level.as_str().to_lowercase());
        let _ = writeln!(out, "    label=\"{}\";", level.as_str());
        for node in diagram.nodes().iter().filter(|n| n.level == level) {
            let style = match node.kind {
                NodeKind::ChanceBeta { .. } => "shape=ellipse",
                NodeKind::Deterministic { .. } => "shape=ellipse, peripheries=2",
                NodeKind::Evidence { .. } => "shape=box",
            };
            let _ = writeln!(out, "    {} [label=\"{}\", {style}];", node.id, escape(&node.name));
        }
        out.push_str("  }\n");
    }
    for node in diagram.nodes() {
        for p in node.parents() {
            let _ = writeln!(out, "  {p} -> {};", node.id);
        }
    }
    out.push_str("}\n");
    out
}

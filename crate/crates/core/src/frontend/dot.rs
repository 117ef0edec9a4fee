//! Graphviz rendering. Maps become dashed clusters labelled with their dim
//! in the bottom-right corner; buffered edges are red.

use std::fmt::Write;

use crate::ir::{BlockGraph, BlockProgram, MapRange, NodeId, NodeKind};

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// A map is drawn as a cluster holding a point-shaped anchor; edges to and
/// from the map attach to the anchor and are clipped at the cluster border.
pub fn to_dot(p: &BlockProgram) -> String {
    let mut out = String::new();
    out.push_str("digraph program {\n  compound=true;\n  rankdir=TB;\n  node [shape=box, fontname=\"monospace\"];\n");
    graph(&p.graph, 1, &mut out);
    out.push_str("}\n");
    out
}

fn graph(g: &BlockGraph, depth: usize, out: &mut String) {
    let pad = "  ".repeat(depth);
    for n in g.nodes.values() {
        let name = n.id.to_string();
        match &n.kind {
            NodeKind::Map(m) => {
                let range = if m.range == MapRange::Tail { " [1:]" } else { "" };
                let _ = writeln!(out, "{pad}subgraph cluster_{name} {{");
                let _ = writeln!(
                    out,
                    "{pad}  style=dashed; labeljust=r; labelloc=b; label={};",
                    quote(&format!("{}{range}", m.dim))
                );
                let _ = writeln!(out, "{pad}  {name} [shape=point, width=0.05];");
                graph(&m.body, depth + 1, out);
                let _ = writeln!(out, "{pad}}}");
            }
            kind => {
                let (shape, label) = match kind {
                    NodeKind::Input { .. } | NodeKind::Output { .. } => ("ellipse", kind.label()),
                    NodeKind::Param { .. } | NodeKind::Yield { .. } => ("plaintext", kind.label()),
                    NodeKind::Reduction { .. } => ("circle", "+".to_string()),
                    _ => ("box", kind.label()),
                };
                let _ = writeln!(out, "{pad}{name} [shape={shape}, label={}];", quote(&label));
            }
        }
    }
    let is_map = |id: NodeId| matches!(g.kind(id), Some(NodeKind::Map(_)));
    for e in &g.edges {
        let mut attrs = vec![format!("label={}", quote(&e.desc.to_string()))];
        if e.buffered {
            attrs.push("color=red".into());
            attrs.push("fontcolor=red".into());
        }
        if is_map(e.src.node) {
            attrs.push(format!("ltail=cluster_{}", e.src.node));
        }
        if is_map(e.dst.node) {
            attrs.push(format!("lhead=cluster_{}", e.dst.node));
        }
        let _ = writeln!(out, "{pad}{} -> {} [{}];", e.src.node, e.dst.node, attrs.join(", "));
    }
}

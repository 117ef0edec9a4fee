//! R6 (extend a map over the whole graph) and R7 (peel the first iteration).

use std::collections::{BTreeMap, BTreeSet};

use super::{full_maps, map_of, redirect, refresh_all, ApplyError, RuleId, RuleMatch, Variant};
use crate::ir::{BlockGraph, BlockProgram, FuncOp, MapOp, MapRange, NodeId, NodeKind, OutMode, PortMode, PortRef};

/// An X-map with a broadcast input consumed inside its body by a map over
/// another dim Y, where the outer graph also holds a Y-map related to that
/// input (variant A: the Y-map produces it; B: both read the same input or
/// param node; C: both read the same operator output). Binds
/// `[X-map, inner Y-map, outer Y-map]`.
///
/// With `whole_graph` (R6) the X-map must also be the only producer feeding
/// the graph's sinks, feed nothing else, and iterate only over boundary
/// values, so that every other operator can move into its body.
pub(super) fn match_extend(g: &BlockGraph, path: &[NodeId], whole_graph: bool) -> Vec<RuleMatch> {
    let maps = full_maps(g);
    let mut out = Vec::new();
    for (xm, x) in &maps {
        if whole_graph && !covers_graph(g, *xm, x) {
            continue;
        }
        for (k, mode) in x.inputs.iter().enumerate() {
            if *mode != PortMode::Broadcast {
                continue;
            }
            let (Some(param), Some(src)) = (x.body.param_node(k), g.source_of(*xm, k)) else { continue };
            for e in x.body.consumers(PortRef::new(param, 0)) {
                let inner = e.dst.node;
                let Some(NodeKind::Map(im)) = x.body.kind(inner) else { continue };
                if im.range != MapRange::All || im.dim == x.dim {
                    continue;
                }
                let y_maps = maps.iter().filter(|(id, m)| id != xm && m.dim == im.dim);
                let src_kind = g.kind(src.node).expect("edge source exists");
                let found: Vec<(Variant, NodeId)> = if y_maps.clone().any(|(id, _)| *id == src.node) {
                    vec![(Variant::A, src.node)]
                } else {
                    let variant = if src_kind.is_source_boundary() { Variant::B } else { Variant::C };
                    y_maps
                        .filter(|(id, _)| g.consumers(src).iter().any(|c| c.dst.node == *id))
                        .map(|(id, _)| (variant, *id))
                        .collect()
                };
                for (variant, outer) in found {
                    let m = RuleMatch {
                        rule: if whole_graph { RuleId::Extend(variant) } else { RuleId::Peel(variant) },
                        graph_path: path.to_vec(),
                        nodes: vec![*xm, inner, outer],
                        dim: Some(x.dim.clone()),
                    };
                    if !out.contains(&m) {
                        out.push(m);
                    }
                }
            }
        }
    }
    out
}

fn covers_graph(g: &BlockGraph, xm: NodeId, x: &MapOp) -> bool {
    let sink = |id: NodeId| g.kind(id).is_some_and(NodeKind::is_sink_boundary);
    let into_sinks: Vec<_> = g.edges.iter().filter(|e| sink(e.dst.node)).collect();
    let iter_from_boundary = x.inputs.iter().enumerate().all(|(i, mode)| {
        *mode == PortMode::Broadcast
            || g.source_of(xm, i).and_then(|s| g.kind(s.node)).is_some_and(NodeKind::is_source_boundary)
    });
    !into_sinks.is_empty()
        && into_sinks.iter().all(|e| e.src.node == xm)
        && g.out_edges(xm).iter().all(|e| sink(e.dst.node))
        && iter_from_boundary
}

/// Move every other operator of the graph into the X-map's body, which
/// then recomputes them once per iteration. The extended map keeps the
/// X-map's id, yields and output modes.
pub(super) fn apply_extend(p: &mut BlockProgram, m: &RuleMatch) -> Result<(), ApplyError> {
    let xm = m.nodes[0];
    let g = p.graph_at(&m.graph_path)?.clone();
    let x = map_of(&g, xm).clone();
    let ops: BTreeSet<NodeId> = g.nodes.values().filter(|n| n.id != xm && n.kind.is_operator()).map(|n| n.id).collect();
    let boundary = |s: &PortRef| g.kind(s.node).is_some_and(NodeKind::is_source_boundary);

    // Ports of the extended map: the X-map's iterated ports, then one
    // broadcast port per boundary value used by anything that moves.
    let mut ports: Vec<(PortRef, PortMode)> = Vec::new();
    for (i, mode) in x.inputs.iter().enumerate() {
        if *mode == PortMode::Iterate {
            ports.push((g.source_of(xm, i).expect("valid"), PortMode::Iterate));
        }
    }
    let mut shared: BTreeSet<PortRef> = BTreeSet::new();
    for e in &g.edges {
        let into_ops = ops.contains(&e.dst.node);
        let into_bcast = e.dst.node == xm && x.inputs[e.dst.port] == PortMode::Broadcast;
        if (into_ops || into_bcast) && boundary(&e.src) {
            shared.insert(e.src);
        }
    }
    ports.extend(shared.iter().map(|s| (*s, PortMode::Broadcast)));

    let mut body = BlockGraph::new();
    let mut param_of: BTreeMap<(PortRef, PortMode), NodeId> = BTreeMap::new();
    for (index, (src, mode)) in ports.iter().enumerate() {
        let outer = g.output_desc(*src)?;
        let desc = match mode {
            PortMode::Broadcast => outer,
            PortMode::Iterate => outer.item().expect("iterated value is a list"),
        };
        let id = p.fresh_id();
        body.insert(id, NodeKind::Param { index, desc });
        param_of.insert((*src, *mode), id);
    }
    let bcast = |s: PortRef| PortRef::new(param_of[&(s, PortMode::Broadcast)], 0);

    for id in &ops {
        body.nodes.insert(*id, g.nodes[id].clone());
    }
    for e in &g.edges {
        if ops.contains(&e.dst.node) {
            let mut e = e.clone();
            if boundary(&e.src) {
                e.src = bcast(e.src);
            }
            body.edges.push(e);
        }
    }
    // Inline the X-map's body, rewiring its params.
    let mut xparam: BTreeMap<NodeId, PortRef> = BTreeMap::new();
    for (k, pid) in x.body.params() {
        let src = g.source_of(xm, k).expect("valid");
        let to = match x.inputs[k] {
            PortMode::Iterate => PortRef::new(param_of[&(src, PortMode::Iterate)], 0),
            PortMode::Broadcast if boundary(&src) => bcast(src),
            PortMode::Broadcast => src,
        };
        xparam.insert(pid, to);
    }
    for n in x.body.nodes.values() {
        if !xparam.contains_key(&n.id) {
            body.nodes.insert(n.id, n.clone());
        }
    }
    for e in &x.body.edges {
        let mut e = e.clone();
        if let Some(to) = xparam.get(&e.src.node) {
            e.src = *to;
        }
        body.edges.push(e);
    }
    refresh_all(&mut body)?;

    let gm = p.graph_at_mut(&m.graph_path)?;
    for id in &ops {
        gm.remove_node(*id);
    }
    gm.edges.retain(|e| e.dst.node != xm);
    let inputs = ports.iter().map(|(_, mode)| *mode).collect();
    gm.insert(
        xm,
        NodeKind::Map(MapOp { dim: x.dim.clone(), range: MapRange::All, inputs, outputs: x.outputs.clone(), body }),
    );
    for (i, (src, _)) in ports.iter().enumerate() {
        gm.connect_inferred(*src, PortRef::new(xm, i))?;
    }
    gm.refresh_outputs(xm)?;
    Ok(())
}

/// Split the X-map into an inlined copy of its body for iteration 0 and a
/// map over the remaining iterations; collected outputs are re-joined with
/// `Cons` and reduced ones with `add`.
pub(super) fn apply_peel(p: &mut BlockProgram, m: &RuleMatch) -> Result<(), ApplyError> {
    let xm = m.nodes[0];
    let x = map_of(p.graph_at(&m.graph_path)?, xm).clone();
    let (head, _) = p.clone_graph_fresh(&x.body);
    let select_ids: Vec<NodeId> = (0..x.inputs.len()).map(|_| p.fresh_id()).collect();
    let combine_ids: Vec<NodeId> = (0..x.outputs.len()).map(|_| p.fresh_id()).collect();
    let g = p.graph_at_mut(&m.graph_path)?;

    let mut param_to: BTreeMap<NodeId, PortRef> = BTreeMap::new();
    for (k, pid) in head.params() {
        let src = g.source_of(xm, k).expect("valid");
        param_to.insert(
            pid,
            match x.inputs[k] {
                PortMode::Broadcast => src,
                PortMode::Iterate => {
                    g.insert(select_ids[k], NodeKind::Select);
                    g.connect_inferred(src, PortRef::new(select_ids[k], 0))?;
                    PortRef::new(select_ids[k], 0)
                }
            },
        );
    }
    let mut yielded: BTreeMap<usize, PortRef> = BTreeMap::new();
    for n in head.nodes.values() {
        match n.kind {
            NodeKind::Param { .. } => {}
            NodeKind::Yield { index } => {
                yielded.insert(index, head.source_of(n.id, 0).expect("valid yield"));
            }
            _ => {
                g.nodes.insert(n.id, n.clone());
            }
        }
    }
    let resolve = |s: PortRef| *param_to.get(&s.node).unwrap_or(&s);
    for e in &head.edges {
        if matches!(head.kind(e.dst.node), Some(NodeKind::Yield { .. })) {
            continue;
        }
        let mut e = e.clone();
        e.src = resolve(e.src);
        g.edges.push(e);
    }
    if let Some(NodeKind::Map(mo)) = g.kind_mut(xm) {
        mo.range = MapRange::Tail;
    }
    for (j, mode) in x.outputs.iter().enumerate() {
        let port = PortRef::new(xm, j);
        if g.consumers(port).is_empty() {
            continue;
        }
        let h = resolve(yielded[&j]);
        let c = combine_ids[j];
        g.insert(
            c,
            match mode {
                OutMode::Collect => NodeKind::Cons,
                OutMode::Reduce(_) => NodeKind::Functional { op: FuncOp::Add },
            },
        );
        redirect(g, port, PortRef::new(c, 0));
        g.connect_inferred(h, PortRef::new(c, 0))?;
        g.connect_inferred(port, PortRef::new(c, 1))?;
    }
    refresh_all(g)?;
    Ok(())
}

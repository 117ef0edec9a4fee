//! R1, R2 and R3.

use std::collections::BTreeMap;

use super::{full_maps, map_of, redirect, refresh_all, ApplyError, RuleId, RuleMatch};
use crate::ir::{BlockGraph, BlockProgram, GraphError, NodeId, NodeKind, OutMode, PortMode, PortRef, ReduceOp};

/// Maps `U -> V` over the same dim where every `U -> V` edge carries a
/// collected list into an iterated port and no other path leads from U to V.
/// Binds `[U, V]`.
pub(super) fn match_consecutive(g: &BlockGraph, path: &[NodeId]) -> Vec<RuleMatch> {
    let maps = full_maps(g);
    let by_id: BTreeMap<NodeId, _> = maps.iter().map(|(id, m)| (*id, *m)).collect();
    let mut out = Vec::new();
    for (u, um) in &maps {
        for v in g.successors(*u) {
            let Some(vm) = by_id.get(&v) else { continue };
            if v == *u || vm.dim != um.dim {
                continue;
            }
            let direct_ok = g
                .edges
                .iter()
                .filter(|e| e.src.node == *u && e.dst.node == v)
                .all(|e| um.outputs[e.src.port] == OutMode::Collect && vm.inputs[e.dst.port] == PortMode::Iterate);
            let indirect = g.successors(*u).into_iter().any(|w| w != v && g.reachable(w, v).unwrap_or(true));
            if direct_ok && !indirect {
                out.push(RuleMatch {
                    rule: RuleId::ConsecutiveMaps,
                    graph_path: path.to_vec(),
                    nodes: vec![*u, v],
                    dim: Some(um.dim.clone()),
                });
            }
        }
    }
    out
}

/// Same-dim maps with a common producer, neither reachable from the other.
/// Binds `[A, B]` with `A < B`.
pub(super) fn match_sibling(g: &BlockGraph, path: &[NodeId]) -> Vec<RuleMatch> {
    let maps = full_maps(g);
    let mut out = Vec::new();
    for (i, (a, am)) in maps.iter().enumerate() {
        for (b, bm) in &maps[i + 1..] {
            if am.dim != bm.dim {
                continue;
            }
            let shared = g.predecessors(*a).intersection(&g.predecessors(*b)).next().is_some();
            if shared && !g.reachable(*a, *b).unwrap_or(true) && !g.reachable(*b, *a).unwrap_or(true) {
                let (x, y) = if a < b { (*a, *b) } else { (*b, *a) };
                out.push(RuleMatch {
                    rule: RuleId::SiblingMaps,
                    graph_path: path.to_vec(),
                    nodes: vec![x, y],
                    dim: Some(am.dim.clone()),
                });
            }
        }
    }
    out
}

/// A collected map output feeding a reduction. Binds `[map, reduction]`.
pub(super) fn match_reduction(g: &BlockGraph, path: &[NodeId]) -> Vec<RuleMatch> {
    let mut out = Vec::new();
    for (id, m) in full_maps(g) {
        for e in g.out_edges(id) {
            if m.outputs[e.src.port] == OutMode::Collect
                && matches!(g.kind(e.dst.node), Some(NodeKind::Reduction { .. }))
            {
                out.push(RuleMatch {
                    rule: RuleId::MapReduction,
                    graph_path: path.to_vec(),
                    nodes: vec![id, e.dst.node],
                    dim: Some(m.dim.clone()),
                });
            }
        }
    }
    out
}

pub(super) fn apply_consecutive(p: &mut BlockProgram, m: &RuleMatch) -> Result<(), ApplyError> {
    merge_maps(p.graph_at_mut(&m.graph_path)?, m.nodes[0], m.nodes[1])?;
    Ok(())
}

pub(super) fn apply_sibling(p: &mut BlockProgram, m: &RuleMatch) -> Result<(), ApplyError> {
    merge_maps(p.graph_at_mut(&m.graph_path)?, m.nodes[0], m.nodes[1])?;
    Ok(())
}

pub(super) fn apply_reduction(p: &mut BlockProgram, m: &RuleMatch) -> Result<(), ApplyError> {
    let (map, red) = (m.nodes[0], m.nodes[1]);
    let fresh = p.fresh_id();
    let g = p.graph_at_mut(&m.graph_path)?;
    let port = g.source_of(red, 0).ok_or(GraphError::Unconnected(red, 0))?;
    let shared = g.consumers(port).iter().any(|e| e.dst.node != red);
    let target = if shared {
        // Keep the collected list for its other consumers and add a
        // second, reduced output fed by the same yielded value.
        let mo = g.kind_mut(map).and_then(NodeKind::as_map_mut).expect("bound map");
        let y = mo.body.yield_node(port.port).expect("valid map");
        let src = mo.body.source_of(y, 0).expect("valid yield");
        let index = mo.outputs.len();
        mo.outputs.push(OutMode::Reduce(ReduceOp::Add));
        mo.body.insert(fresh, NodeKind::Yield { index });
        mo.body.connect_inferred(src, PortRef::new(fresh, 0))?;
        PortRef::new(map, index)
    } else {
        let mo = g.kind_mut(map).and_then(NodeKind::as_map_mut).expect("bound map");
        mo.outputs[port.port] = OutMode::Reduce(ReduceOp::Add);
        port
    };
    g.edges.retain(|e| e.dst.node != red);
    redirect(g, PortRef::new(red, 0), target);
    g.remove_node(red);
    g.refresh_outputs(map)?;
    Ok(())
}

enum Feed {
    /// Fed by output `j` of the first map.
    Internal(usize),
    /// Fed through input port `i` of the fused map.
    Port(usize),
}

/// Fuse `second` into `first`. The fused map keeps `first`'s id. Input
/// ports with the same producer and mode are shared; edges from `first`
/// into `second` become edges inside the fused body; an output of `first`
/// whose only consumers were in `second` is dropped.
pub(crate) fn merge_maps(g: &mut BlockGraph, first: NodeId, second: NodeId) -> Result<(), GraphError> {
    let fm = map_of(g, first).clone();
    let NodeKind::Map(sm) = g.kind(second).ok_or(GraphError::UnknownNode(second))?.clone() else {
        return Err(GraphError::Type(second, 0, "not a map".into()));
    };
    let source = |g: &BlockGraph, id, port| g.source_of(id, port).ok_or(GraphError::Unconnected(id, port));

    let mut ports: Vec<(PortRef, PortMode)> = Vec::new();
    for (i, mode) in fm.inputs.iter().enumerate() {
        ports.push((source(g, first, i)?, *mode));
    }
    let n_first_in = ports.len();
    let mut new_edges = Vec::new();
    let mut feeds = Vec::new();
    for (q, mode) in sm.inputs.iter().enumerate() {
        let e = g.incoming(PortRef::new(second, q)).ok_or(GraphError::Unconnected(second, q))?;
        let src = e.src;
        feeds.push(if src.node == first {
            Feed::Internal(src.port)
        } else if let Some(i) = ports.iter().position(|x| *x == (src, *mode)) {
            Feed::Port(i)
        } else {
            ports.push((src, *mode));
            new_edges.push((src, ports.len() - 1, e.desc.clone()));
            Feed::Port(ports.len() - 1)
        });
    }

    // Output renumbering: kept outputs of `first`, then all of `second`.
    let mut first_out: Vec<Option<usize>> = Vec::new();
    let mut kept = 0;
    for j in 0..fm.outputs.len() {
        let cons = g.consumers(PortRef::new(first, j));
        let only_second = !cons.is_empty() && cons.iter().all(|e| e.dst.node == second);
        first_out.push(if only_second {
            None
        } else {
            kept += 1;
            Some(kept - 1)
        });
    }

    // Outer graph.
    g.edges.retain(|e| e.dst.node != second);
    for e in g.edges.iter_mut() {
        if e.src.node == first {
            e.src.port = first_out[e.src.port].expect("dropped outputs only fed the second map");
        } else if e.src.node == second {
            e.src = PortRef::new(first, kept + e.src.port);
        }
    }
    g.nodes.remove(&second);
    for (src, i, desc) in new_edges {
        g.connect(src, PortRef::new(first, i), desc);
    }

    // Fused body.
    let mo = g.kind_mut(first).and_then(NodeKind::as_map_mut).expect("first is a map");
    let yield_src: Vec<PortRef> = (0..fm.outputs.len())
        .map(|j| {
            let y = mo.body.yield_node(j).ok_or(GraphError::Unconnected(first, j))?;
            mo.body.source_of(y, 0).ok_or(GraphError::Unconnected(y, 0))
        })
        .collect::<Result<_, _>>()?;
    let mut param_for: BTreeMap<usize, NodeId> = mo.body.params().into_iter().collect();
    let second_params = sm.body.params();
    let second_yields: Vec<(NodeId, usize)> = sm
        .body
        .nodes
        .values()
        .filter_map(|n| match n.kind {
            NodeKind::Yield { index } => Some((n.id, index)),
            _ => None,
        })
        .collect();
    let first_yields: Vec<(NodeId, usize)> = mo
        .body
        .nodes
        .values()
        .filter_map(|n| match n.kind {
            NodeKind::Yield { index } => Some((n.id, index)),
            _ => None,
        })
        .collect();
    mo.body.nodes.extend(sm.body.nodes);
    mo.body.edges.extend(sm.body.edges);
    for (q, pid) in second_params {
        match feeds[q] {
            Feed::Internal(j) => {
                redirect(&mut mo.body, PortRef::new(pid, 0), yield_src[j]);
                mo.body.remove_node(pid);
            }
            Feed::Port(i) => match param_for.get(&i) {
                Some(&existing) => {
                    redirect(&mut mo.body, PortRef::new(pid, 0), PortRef::new(existing, 0));
                    mo.body.remove_node(pid);
                }
                None => {
                    if let Some(NodeKind::Param { index, .. }) = mo.body.kind_mut(pid) {
                        *index = i;
                    }
                    param_for.insert(i, pid);
                }
            },
        }
    }
    for (yid, j) in first_yields {
        match first_out[j] {
            None => {
                mo.body.remove_node(yid);
            }
            Some(nj) => {
                if let Some(NodeKind::Yield { index }) = mo.body.kind_mut(yid) {
                    *index = nj;
                }
            }
        }
    }
    for (yid, k) in second_yields {
        if let Some(NodeKind::Yield { index }) = mo.body.kind_mut(yid) {
            *index = kept + k;
        }
    }
    mo.inputs = ports.iter().map(|(_, m)| *m).collect();
    let mut outputs: Vec<OutMode> =
        fm.outputs.iter().zip(&first_out).filter(|(_, keep)| keep.is_some()).map(|(o, _)| *o).collect();
    outputs.extend(sm.outputs.iter().copied());
    mo.outputs = outputs;
    debug_assert!(n_first_in <= mo.inputs.len());
    refresh_all(&mut mo.body)?;
    g.refresh_outputs(first)?;
    Ok(())
}

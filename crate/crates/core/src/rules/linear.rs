//! R4, R5 and R8: moving row scaling and shifting past a blocked matmul.

use super::{full_maps, map_of, set_source, ApplyError, RuleId, RuleMatch};
use crate::ir::{BlockGraph, BlockProgram, DimSym, FuncOp, MapOp, NodeId, NodeKind, OutMode, PortMode, PortRef};

/// Ports of a matmul fragment: `a` is broadcast (one block row of the
/// left operand), `b` iterates over the transposed right operand.
struct Fragment {
    a: usize,
    b: usize,
}

fn params_and_rest(body: &BlockGraph) -> (Vec<(usize, NodeId)>, Vec<NodeId>) {
    let params = body.params();
    let rest = body.ids().into_iter().filter(|id| !params.iter().any(|(_, p)| p == id)).collect();
    (params, rest)
}

/// `dim`-map{ dot(a, b) } with both ports iterated; returns the param
/// indices feeding dot's left and right operands.
fn dot_map(m: &MapOp, dim: &DimSym) -> Option<(usize, usize)> {
    if &m.dim != dim || m.inputs != [PortMode::Iterate, PortMode::Iterate] || m.outputs.len() != 1 {
        return None;
    }
    let (params, rest) = params_and_rest(&m.body);
    if params.len() != 2 || rest.len() != 2 {
        return None;
    }
    let dot = rest.iter().find(|id| matches!(m.body.kind(**id), Some(NodeKind::Functional { op: FuncOp::Dot })))?;
    let y = m.body.yield_node(0)?;
    if m.body.source_of(y, 0)? != PortRef::new(*dot, 0) {
        return None;
    }
    let index_of = |port| {
        let src = m.body.source_of(*dot, port)?;
        params.iter().find(|(_, p)| *p == src.node).map(|(i, _)| *i)
    };
    Some((index_of(0)?, index_of(1)?))
}

/// `N`-map{ a bcast, b iter; `kd`-map{ dot } -> sum } in either the
/// unfused (map then reduction node) or fused (reduced output) form.
fn fragment(g: &BlockGraph, mm: NodeId, kd: &DimSym) -> Option<Fragment> {
    let m = g.kind(mm)?.as_map()?;
    if m.inputs.len() != 2 || m.outputs != [OutMode::Collect] || m.range != crate::ir::MapRange::All {
        return None;
    }
    let a = m.inputs.iter().position(|x| *x == PortMode::Broadcast)?;
    let b = m.inputs.iter().position(|x| *x == PortMode::Iterate)?;
    let (params, rest) = params_and_rest(&m.body);
    if params.len() != 2 {
        return None;
    }
    let inner = rest.iter().copied().find(|id| matches!(m.body.kind(*id), Some(NodeKind::Map(_))))?;
    let im = m.body.kind(inner)?.as_map()?;
    let (l, r) = dot_map(im, kd)?;
    let pa = m.body.param_node(a)?;
    let pb = m.body.param_node(b)?;
    if m.body.source_of(inner, l)?.node != pa || m.body.source_of(inner, r)?.node != pb {
        return None;
    }
    let y = m.body.yield_node(0)?;
    let yielded = m.body.source_of(y, 0)?;
    let ok = match im.outputs[0] {
        OutMode::Collect => {
            rest.len() == 3
                && matches!(m.body.kind(yielded.node), Some(NodeKind::Reduction { .. }))
                && m.body.source_of(yielded.node, 0)? == PortRef::new(inner, 0)
        }
        OutMode::Reduce(_) => rest.len() == 2 && yielded == PortRef::new(inner, 0),
    };
    ok.then_some(Fragment { a, b })
}

/// `dim`-map{ op(x iter, c bcast) } with a single collected output; returns
/// the outer port indices of `x` and `c`.
fn row_map(m: &MapOp, op: &FuncOp) -> Option<(usize, usize)> {
    if m.range != crate::ir::MapRange::All || m.inputs.len() != 2 || m.outputs != [OutMode::Collect] {
        return None;
    }
    let (params, rest) = params_and_rest(&m.body);
    if params.len() != 2 || rest.len() != 2 {
        return None;
    }
    let f =
        rest.iter().copied().find(|id| matches!(m.body.kind(*id), Some(NodeKind::Functional { op: o }) if o == op))?;
    let y = m.body.yield_node(0)?;
    if m.body.source_of(y, 0)? != PortRef::new(f, 0) {
        return None;
    }
    let index_of = |port| {
        let src = m.body.source_of(f, port)?;
        params.iter().find(|(_, p)| *p == src.node).map(|(i, _)| *i)
    };
    let (x, c) = (index_of(0)?, index_of(1)?);
    (m.inputs[x] == PortMode::Iterate && m.inputs[c] == PortMode::Broadcast).then_some((x, c))
}

/// A row-scale (or row-shift) map whose only consumer is the left operand
/// of a matmul fragment over the same inner dim. Binds `[S, MM]`.
pub(super) fn match_scale_dot(g: &BlockGraph, path: &[NodeId], shift: bool) -> Vec<RuleMatch> {
    let op = if shift { FuncOp::RowShift } else { FuncOp::RowScale };
    let mut out = Vec::new();
    for (s, sm) in full_maps(g) {
        if row_map(sm, &op).is_none() {
            continue;
        }
        let cons = g.out_edges(s);
        if cons.len() != 1 {
            continue;
        }
        let dst = cons[0].dst;
        if fragment(g, dst.node, &sm.dim).is_some_and(|f| f.a == dst.port) {
            out.push(RuleMatch {
                rule: if shift { RuleId::ShiftDot } else { RuleId::ScaleDot },
                graph_path: path.to_vec(),
                nodes: vec![s, dst.node],
                dim: Some(sm.dim.clone()),
            });
        }
    }
    out
}

/// A row-scale map feeding the left operands of exactly two matmul
/// fragments. Binds `[S, MM1, MM2]` with `MM1 < MM2`.
pub(super) fn match_duplicate(g: &BlockGraph, path: &[NodeId]) -> Vec<RuleMatch> {
    let mut out = Vec::new();
    for (s, sm) in full_maps(g) {
        if row_map(sm, &FuncOp::RowScale).is_none() {
            continue;
        }
        let cons = g.out_edges(s);
        if cons.len() != 2 || cons[0].dst.node == cons[1].dst.node {
            continue;
        }
        let all_dots = cons.iter().all(|e| fragment(g, e.dst.node, &sm.dim).is_some_and(|f| f.a == e.dst.port));
        if all_dots {
            let mut mms = [cons[0].dst.node, cons[1].dst.node];
            mms.sort();
            out.push(RuleMatch {
                rule: RuleId::DuplicateScale,
                graph_path: path.to_vec(),
                nodes: vec![s, mms[0], mms[1]],
                dim: Some(sm.dim.clone()),
            });
        }
    }
    out
}

struct Site {
    c_src: PortRef,
    frag: Fragment,
    n_dim: DimSym,
    k_dim: DimSym,
    consumers: Vec<PortRef>,
}

/// Read the site, feed the matmul from the unscaled source and drop `S`.
fn detach(p: &mut BlockProgram, m: &RuleMatch, op: &FuncOp) -> Result<Site, ApplyError> {
    let (s, mm) = (m.nodes[0], m.nodes[1]);
    let g = p.graph_at_mut(&m.graph_path)?;
    let sm = map_of(g, s);
    let k_dim = sm.dim.clone();
    let (x, c) = row_map(sm, op).ok_or_else(|| ApplyError::Stale(m.to_string()))?;
    let frag = fragment(g, mm, &k_dim).ok_or_else(|| ApplyError::Stale(m.to_string()))?;
    let n_dim = map_of(g, mm).dim.clone();
    let x_src = g.source_of(s, x).expect("validated");
    let c_src = g.source_of(s, c).expect("validated");
    set_source(g, PortRef::new(mm, frag.a), x_src);
    g.remove_node(s);
    let consumers = g.consumers(PortRef::new(mm, 0)).iter().map(|e| e.dst).collect();
    Ok(Site { c_src, frag, n_dim, k_dim, consumers })
}

fn reattach(p: &mut BlockProgram, path: &[NodeId], consumers: &[PortRef], to: PortRef) -> Result<(), ApplyError> {
    let g = p.graph_at_mut(path)?;
    for dst in consumers {
        set_source(g, *dst, to);
    }
    super::refresh_all(g)?;
    Ok(())
}

/// `MM(scale(x, c))` becomes `scale(MM(x), c)` with the scale mapped over
/// the matmul's outer dim.
pub(super) fn apply_scale_dot(p: &mut BlockProgram, m: &RuleMatch) -> Result<(), ApplyError> {
    let site = detach(p, m, &FuncOp::RowScale)?;
    let mm = m.nodes[1];
    let t = p.add_map(
        &m.graph_path,
        site.n_dim.clone(),
        &[(PortRef::new(mm, 0), PortMode::Iterate), (site.c_src, PortMode::Broadcast)],
        |p, path, ps| Ok(vec![(p.add_func(path, FuncOp::RowScale, ps)?, OutMode::Collect)]),
    )?;
    reattach(p, &m.graph_path, &site.consumers, PortRef::new(t, 0))
}

/// `MM(shift(x, c))` becomes `MM(x) + outer(c, sum_k row_sum(b))`.
pub(super) fn apply_shift_dot(p: &mut BlockProgram, m: &RuleMatch) -> Result<(), ApplyError> {
    let site = detach(p, m, &FuncOp::RowShift)?;
    let mm = m.nodes[1];
    let path = m.graph_path.clone();
    let b_src = p.graph_at(&path)?.source_of(mm, site.frag.b).expect("validated");
    let k_dim = site.k_dim.clone();
    let sums = p.add_map(&path, site.n_dim.clone(), &[(b_src, PortMode::Iterate)], |p, path, ps| {
        let k = p.add_map(path, k_dim, &[(ps[0], PortMode::Iterate)], |p, path, ps| {
            Ok(vec![(p.add_func(path, FuncOp::RowSum, ps)?, OutMode::Collect)])
        })?;
        Ok(vec![(p.add_reduce(path, PortRef::new(k, 0))?, OutMode::Collect)])
    })?;
    let outer = p.add_map(
        &path,
        site.n_dim.clone(),
        &[(site.c_src, PortMode::Broadcast), (PortRef::new(sums, 0), PortMode::Iterate)],
        |p, path, ps| Ok(vec![(p.add_func(path, FuncOp::Outer, ps)?, OutMode::Collect)]),
    )?;
    let add = p.add_map(
        &path,
        site.n_dim.clone(),
        &[(PortRef::new(mm, 0), PortMode::Iterate), (PortRef::new(outer, 0), PortMode::Iterate)],
        |p, path, ps| Ok(vec![(p.add_func(path, FuncOp::Add, ps)?, OutMode::Collect)]),
    )?;
    reattach(p, &path, &site.consumers, PortRef::new(add, 0))
}

/// Give the second matmul its own copy of the scale map.
pub(super) fn apply_duplicate(p: &mut BlockProgram, m: &RuleMatch) -> Result<(), ApplyError> {
    let (s, mm2) = (m.nodes[0], m.nodes[2]);
    let g = p.graph_at(&m.graph_path)?;
    let mut sm = map_of(g, s).clone();
    let a = fragment(g, mm2, &sm.dim).ok_or_else(|| ApplyError::Stale(m.to_string()))?.a;
    let ins: Vec<_> = g.in_edges(s).into_iter().map(|e| (e.src, e.dst.port, e.desc.clone())).collect();
    let (body, _) = p.clone_graph_fresh(&sm.body);
    sm.body = body;
    let copy = p.fresh_id();
    let g = p.graph_at_mut(&m.graph_path)?;
    g.insert(copy, NodeKind::Map(sm));
    for (src, port, desc) in ins {
        g.connect(src, PortRef::new(copy, port), desc);
    }
    set_source(g, PortRef::new(mm2, a), PortRef::new(copy, 0));
    g.refresh_outputs(copy)?;
    Ok(())
}

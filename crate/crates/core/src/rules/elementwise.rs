//! R9.

use super::{ApplyError, RuleId, RuleMatch};
use crate::ir::{BlockGraph, BlockProgram, FuncOp, NodeId, NodeKind, PortRef, ScalarExpr};

fn elementwise(g: &BlockGraph, id: NodeId) -> Option<(&ScalarExpr, usize)> {
    match g.kind(id) {
        Some(NodeKind::Functional { op: FuncOp::Elementwise { expr, arity } }) => Some((expr, *arity)),
        _ => None,
    }
}

/// Elementwise `U` whose single consumer edge feeds elementwise `V`.
/// Binds `[U, V]`.
pub(super) fn match_elementwise(g: &BlockGraph, path: &[NodeId]) -> Vec<RuleMatch> {
    let mut out = Vec::new();
    for &u in g.nodes.keys() {
        if elementwise(g, u).is_none() {
            continue;
        }
        let cons = g.out_edges(u);
        if let [e] = cons.as_slice() {
            if elementwise(g, e.dst.node).is_some() {
                out.push(RuleMatch {
                    rule: RuleId::Elementwise,
                    graph_path: path.to_vec(),
                    nodes: vec![u, e.dst.node],
                    dim: None,
                });
            }
        }
    }
    out
}

/// Replace `V(.., U(args), ..)` by one node computing the composition. The
/// fused node keeps `V`'s id; its inputs are `V`'s other inputs followed by
/// `U`'s inputs.
pub(super) fn apply_elementwise(p: &mut BlockProgram, m: &RuleMatch) -> Result<(), ApplyError> {
    let (u, v) = (m.nodes[0], m.nodes[1]);
    let g = p.graph_at_mut(&m.graph_path)?;
    let (ue, ua) = elementwise(g, u).map(|(e, a)| (e.clone(), a)).expect("validated");
    let (ve, va) = elementwise(g, v).map(|(e, a)| (e.clone(), a)).expect("validated");
    let slot = g.out_edges(u)[0].dst.port;
    let shifted = ue.map_vars(&|j| ScalarExpr::Var(va - 1 + j));
    let expr = ve.map_vars(&|i| match i.cmp(&slot) {
        std::cmp::Ordering::Equal => shifted.clone(),
        std::cmp::Ordering::Less => ScalarExpr::Var(i),
        std::cmp::Ordering::Greater => ScalarExpr::Var(i - 1),
    });
    let u_in: Vec<_> = g.in_edges(u).into_iter().map(|e| (e.src, e.desc.clone())).collect();
    g.edges.retain(|e| !(e.src.node == u && e.dst.node == v));
    for e in g.edges.iter_mut().filter(|e| e.dst.node == v) {
        if e.dst.port > slot {
            e.dst.port -= 1;
        }
    }
    g.remove_node(u);
    for (k, (src, desc)) in u_in.into_iter().enumerate() {
        g.connect(src, PortRef::new(v, va - 1 + k), desc);
    }
    if let Some(NodeKind::Functional { op }) = g.kind_mut(v) {
        *op = FuncOp::Elementwise { expr, arity: va - 1 + ua };
    }
    g.refresh_outputs(v)?;
    Ok(())
}

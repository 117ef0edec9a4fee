//! Buffered-edge counts, a global-memory traffic model and kernel counts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::interp::{DimBinding, ExecError};
use crate::ir::{BlockGraph, BlockProgram, MapRange, NodeKind, PortRef};

/// Buffered edges whose endpoints are both operators, at every level.
pub fn internal_buffered_edges(p: &BlockProgram) -> usize {
    fn walk(g: &BlockGraph) -> usize {
        let op = |id| g.kind(id).is_some_and(NodeKind::is_operator);
        let here = g.edges.iter().filter(|e| e.buffered && op(e.src.node) && op(e.dst.node)).count();
        here + g.nodes.values().filter_map(|n| n.kind.as_map()).map(|m| walk(&m.body)).sum::<usize>()
    }
    walk(&p.graph)
}

/// Operator nodes at the top level; each is one kernel launch when run
/// naively.
pub fn kernel_count(p: &BlockProgram) -> usize {
    p.graph.nodes.values().filter(|n| n.kind.is_operator()).count()
}

/// Element size and the simple read/write accounting used by
/// [`traffic_bytes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficModel {
    pub elem_bytes: usize,
}

impl Default for TrafficModel {
    fn default() -> Self {
        TrafficModel { elem_bytes: 4 }
    }
}

/// Modeled bytes moved between global and local memory. Every buffered
/// value is written once by its producer (program inputs are already in
/// memory) and read once per consuming operator (program outputs and
/// yields are not read back). Values inside a map body count once per
/// iteration of every enclosing map. A buffered value entering a body
/// through a param is charged at the outer edge only; one leaving through
/// a yield is charged where it was first stored, so a map output costs a
/// write only when its yield receives a local value.
pub fn traffic_bytes(p: &BlockProgram, b: &DimBinding, model: TrafficModel) -> Result<u64, ExecError> {
    fn walk(g: &BlockGraph, b: &DimBinding, times: u64, elem: u64) -> Result<u64, ExecError> {
        let mut by_src: BTreeMap<PortRef, (u64, u64, usize)> = BTreeMap::new();
        for e in g.edges.iter().filter(|e| e.buffered) {
            let src = g.kind(e.src.node).expect("edge source exists");
            if matches!(src, NodeKind::Param { .. }) {
                continue;
            }
            let dst = g.kind(e.dst.node).expect("edge target exists");
            let written = match src {
                NodeKind::Map(m) => {
                    let y = m.body.yield_node(e.src.port).expect("map output has a yield");
                    !m.body.incoming(PortRef::new(y, 0)).is_some_and(|i| i.buffered)
                }
                other => other.is_operator(),
            };
            let entry = by_src.entry(e.src).or_insert((u64::from(written), 0, 0));
            entry.1 += u64::from(dst.is_operator());
            entry.2 = b.element_count(&e.desc)?;
        }
        let mut total: u64 = by_src.values().map(|(w, r, n)| (w + r) * *n as u64 * elem * times).sum();
        for n in g.nodes.values() {
            if let NodeKind::Map(m) = &n.kind {
                let count = b.count(&m.dim)? as u64;
                let iters = if m.range == MapRange::Tail { count - 1 } else { count };
                total += walk(&m.body, b, times * iters, elem)?;
            }
        }
        Ok(total)
    }
    walk(&p.graph, b, 1, model.elem_bytes as u64)
}

/// All three metrics for one program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub internal_buffered_edges: usize,
    pub kernel_count: usize,
    pub traffic_bytes: u64,
    pub elem_bytes: usize,
}

pub fn report(p: &BlockProgram, b: &DimBinding, model: TrafficModel) -> Result<MetricsReport, ExecError> {
    Ok(MetricsReport {
        internal_buffered_edges: internal_buffered_edges(p),
        kernel_count: kernel_count(p),
        traffic_bytes: traffic_bytes(p, b, model)?,
        elem_bytes: model.elem_bytes,
    })
}

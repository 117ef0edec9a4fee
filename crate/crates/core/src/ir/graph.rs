use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use super::{BlockGraph, BlockProgram, Edge, Node, NodeId, NodeKind, OutMode, PortRef, ValueDesc};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("cycle detected through edge {0} -> {1}")]
    Cycle(NodeId, NodeId),
    #[error("no graph at path {0:?}")]
    BadPath(Vec<NodeId>),
    #[error("input port {0}:{1} is not connected")]
    Unconnected(NodeId, usize),
    #[error("cannot infer type of {0}:{1}: {2}")]
    Type(NodeId, usize, String),
}

impl BlockGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn kind(&self, id: NodeId) -> Option<&NodeKind> {
        self.nodes.get(&id).map(|n| &n.kind)
    }

    pub fn kind_mut(&mut self, id: NodeId) -> Option<&mut NodeKind> {
        self.nodes.get_mut(&id).map(|n| &mut n.kind)
    }

    pub fn insert(&mut self, id: NodeId, kind: NodeKind) -> NodeId {
        self.nodes.insert(id, Node { id, kind });
        id
    }

    /// Remove a node together with every incident edge.
    pub fn remove_node(&mut self, id: NodeId) -> Option<Node> {
        self.edges.retain(|e| e.src.node != id && e.dst.node != id);
        self.nodes.remove(&id)
    }

    /// Add an edge. The buffered flag follows the value: lists are always
    /// buffered, and so is anything touching a top-level input or output.
    pub fn connect(&mut self, src: PortRef, dst: PortRef, desc: ValueDesc) {
        let io = |n: NodeId| matches!(self.kind(n), Some(NodeKind::Input { .. } | NodeKind::Output { .. }));
        let buffered = desc.is_list() || io(src.node) || io(dst.node);
        self.edges.push(Edge { src, dst, desc, buffered });
    }

    /// Connect `src` to `dst` using the inferred type of `src`.
    pub fn connect_inferred(&mut self, src: PortRef, dst: PortRef) -> Result<(), GraphError> {
        let desc = self.output_desc(src)?;
        self.connect(src, dst, desc);
        Ok(())
    }

    pub fn incoming(&self, dst: PortRef) -> Option<&Edge> {
        self.edges.iter().find(|e| e.dst == dst)
    }

    /// Incoming edges ordered by destination port.
    pub fn in_edges(&self, id: NodeId) -> Vec<&Edge> {
        let mut v: Vec<&Edge> = self.edges.iter().filter(|e| e.dst.node == id).collect();
        v.sort_by_key(|e| e.dst.port);
        v
    }

    pub fn out_edges(&self, id: NodeId) -> Vec<&Edge> {
        self.edges.iter().filter(|e| e.src.node == id).collect()
    }

    pub fn consumers(&self, src: PortRef) -> Vec<&Edge> {
        self.edges.iter().filter(|e| e.src == src).collect()
    }

    /// Producer feeding input port `port` of `id`.
    pub fn source_of(&self, id: NodeId, port: usize) -> Option<PortRef> {
        self.incoming(PortRef::new(id, port)).map(|e| e.src)
    }

    pub fn successors(&self, id: NodeId) -> BTreeSet<NodeId> {
        self.edges.iter().filter(|e| e.src.node == id).map(|e| e.dst.node).collect()
    }

    pub fn predecessors(&self, id: NodeId) -> BTreeSet<NodeId> {
        self.edges.iter().filter(|e| e.dst.node == id).map(|e| e.src.node).collect()
    }

    /// True iff a directed path of at least one edge leads from `u` to `v`.
    pub fn reachable(&self, u: NodeId, v: NodeId) -> Result<bool, GraphError> {
        for id in [u, v] {
            if !self.nodes.contains_key(&id) {
                return Err(GraphError::UnknownNode(id));
            }
        }
        let mut seen = BTreeSet::new();
        let mut stack: Vec<NodeId> = self.successors(u).into_iter().collect();
        while let Some(n) = stack.pop() {
            if n == v {
                return Ok(true);
            }
            if seen.insert(n) {
                stack.extend(self.successors(n));
            }
        }
        Ok(false)
    }

    /// Kahn's algorithm, ties broken by ascending node id.
    pub fn topological_order(&self) -> Result<Vec<NodeId>, GraphError> {
        topological_order_of(self)
    }

    pub fn ids(&self) -> Vec<NodeId> {
        self.nodes.keys().copied().collect()
    }

    /// Map nodes of this level in topological order.
    pub fn maps(&self) -> Vec<NodeId> {
        let order = self.topological_order().unwrap_or_else(|_| self.ids());
        order.into_iter().filter(|id| matches!(self.kind(*id), Some(NodeKind::Map(_)))).collect()
    }

    pub fn params(&self) -> Vec<(usize, NodeId)> {
        let mut v: Vec<(usize, NodeId)> = self
            .nodes
            .values()
            .filter_map(|n| match n.kind {
                NodeKind::Param { index, .. } => Some((index, n.id)),
                _ => None,
            })
            .collect();
        v.sort();
        v
    }

    pub fn param_node(&self, index: usize) -> Option<NodeId> {
        self.params().into_iter().find(|(i, _)| *i == index).map(|(_, id)| id)
    }

    pub fn yield_node(&self, index: usize) -> Option<NodeId> {
        self.nodes.values().find(|n| matches!(n.kind, NodeKind::Yield { index: i } if i == index)).map(|n| n.id)
    }

    /// Type of the value produced at `src`.
    pub fn output_desc(&self, src: PortRef) -> Result<ValueDesc, GraphError> {
        let kind = self.kind(src.node).ok_or(GraphError::UnknownNode(src.node))?;
        let err = |m: String| GraphError::Type(src.node, src.port, m);
        let input = |p: usize| -> Result<ValueDesc, GraphError> {
            self.incoming(PortRef::new(src.node, p)).map(|e| e.desc.clone()).ok_or(GraphError::Unconnected(src.node, p))
        };
        match kind {
            NodeKind::Input { desc, .. } | NodeKind::Param { desc, .. } => Ok(desc.clone()),
            NodeKind::Output { .. } | NodeKind::Yield { .. } => Err(err("sink has no outputs".into())),
            NodeKind::Functional { op } => {
                let ins = (0..op.arity()).map(input).collect::<Result<Vec<_>, _>>()?;
                op.infer(&ins).map_err(err)
            }
            NodeKind::Map(m) => {
                let mode = m.outputs.get(src.port).ok_or_else(|| err("no such output".into()))?;
                let y = m.body.yield_node(src.port).ok_or_else(|| err("missing yield".into()))?;
                let inner = m
                    .body
                    .incoming(PortRef::new(y, 0))
                    .map(|e| e.desc.clone())
                    .ok_or_else(|| err("yield not connected".into()))?;
                Ok(match mode {
                    OutMode::Collect => inner.listed(m.dim.clone()),
                    OutMode::Reduce(_) => inner,
                })
            }
            NodeKind::Reduction { .. } | NodeKind::Select => {
                input(0)?.item().ok_or_else(|| err("input is not a list".into()))
            }
            NodeKind::Cons => input(1),
            NodeKind::Misc { outputs, .. } => {
                outputs.get(src.port).cloned().ok_or_else(|| err("no such output".into()))
            }
        }
    }

    /// Recompute descriptors and buffered flags of every edge leaving `id`.
    pub fn refresh_outputs(&mut self, id: NodeId) -> Result<(), GraphError> {
        let n = self.kind(id).ok_or(GraphError::UnknownNode(id))?.num_outputs();
        for port in 0..n {
            let src = PortRef::new(id, port);
            if self.consumers(src).is_empty() {
                continue;
            }
            let desc = self.output_desc(src)?;
            let io =
                |g: &BlockGraph, n: NodeId| matches!(g.kind(n), Some(NodeKind::Input { .. } | NodeKind::Output { .. }));
            let flags: Vec<bool> =
                self.edges.iter().map(|e| e.src == src && (io(self, e.src.node) || io(self, e.dst.node))).collect();
            for (e, forced) in self.edges.iter_mut().zip(flags) {
                if e.src == src {
                    e.desc = desc.clone();
                    e.buffered = desc.is_list() || forced;
                }
            }
        }
        Ok(())
    }
}

pub fn topological_order_of(g: &BlockGraph) -> Result<Vec<NodeId>, GraphError> {
    let mut indeg: BTreeMap<NodeId, usize> = g.nodes.keys().map(|id| (*id, 0)).collect();
    for e in &g.edges {
        if let Some(d) = indeg.get_mut(&e.dst.node) {
            *d += 1;
        }
    }
    let mut ready: BTreeSet<NodeId> = indeg.iter().filter(|(_, d)| **d == 0).map(|(id, _)| *id).collect();
    let mut order = Vec::with_capacity(g.nodes.len());
    while let Some(&id) = ready.iter().next() {
        ready.remove(&id);
        order.push(id);
        for e in g.edges.iter().filter(|e| e.src.node == id) {
            if let Some(d) = indeg.get_mut(&e.dst.node) {
                *d -= 1;
                if *d == 0 {
                    ready.insert(e.dst.node);
                }
            }
        }
    }
    if order.len() != g.nodes.len() {
        let placed: BTreeSet<NodeId> = order.iter().copied().collect();
        let back = g
            .edges
            .iter()
            .find(|e| !placed.contains(&e.src.node) && !placed.contains(&e.dst.node))
            .map(|e| (e.src.node, e.dst.node))
            .unwrap_or((NodeId(0), NodeId(0)));
        return Err(GraphError::Cycle(back.0, back.1));
    }
    Ok(order)
}

impl BlockProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fresh_id(&mut self) -> NodeId {
        let id = NodeId(self.next_id);
        self.next_id += 1;
        id
    }

    pub fn add(&mut self, path: &[NodeId], kind: NodeKind) -> Result<NodeId, GraphError> {
        let id = self.fresh_id();
        self.graph_at_mut(path)?.insert(id, kind);
        Ok(id)
    }

    pub fn graph_at(&self, path: &[NodeId]) -> Result<&BlockGraph, GraphError> {
        let mut g = &self.graph;
        for id in path {
            g = match g.kind(*id) {
                Some(NodeKind::Map(m)) => &m.body,
                _ => return Err(GraphError::BadPath(path.to_vec())),
            };
        }
        Ok(g)
    }

    pub fn graph_at_mut(&mut self, path: &[NodeId]) -> Result<&mut BlockGraph, GraphError> {
        let mut g = &mut self.graph;
        for id in path {
            g = match g.kind_mut(*id) {
                Some(NodeKind::Map(m)) => &mut m.body,
                _ => return Err(GraphError::BadPath(path.to_vec())),
            };
        }
        Ok(g)
    }

    /// Paths of every graph in breadth-first order (top level first).
    pub fn graph_paths(&self) -> Vec<Vec<NodeId>> {
        let mut out = Vec::new();
        let mut queue = VecDeque::from([Vec::new()]);
        while let Some(path) = queue.pop_front() {
            if let Ok(g) = self.graph_at(&path) {
                for m in g.maps() {
                    let mut p = path.clone();
                    p.push(m);
                    queue.push_back(p);
                }
            }
            out.push(path);
        }
        out
    }

    /// Every node id at every level.
    pub fn all_ids(&self) -> Vec<NodeId> {
        fn walk(g: &BlockGraph, out: &mut Vec<NodeId>) {
            for n in g.nodes.values() {
                out.push(n.id);
                if let NodeKind::Map(m) = &n.kind {
                    walk(&m.body, out);
                }
            }
        }
        let mut v = Vec::new();
        walk(&self.graph, &mut v);
        v
    }

    /// Copy with fresh node ids (ascending in the order of the old ids) and
    /// the old-to-new id map.
    pub fn deep_clone(&self) -> (BlockProgram, BTreeMap<NodeId, NodeId>) {
        let mut ids = self.all_ids();
        ids.sort();
        let mut out = BlockProgram { graph: BlockGraph::new(), next_id: 0 };
        let map: BTreeMap<NodeId, NodeId> = ids.iter().map(|id| (*id, out.fresh_id())).collect();
        out.graph = relabel(&self.graph, &map);
        (out, map)
    }

    pub fn clone_graph_fresh(&mut self, g: &BlockGraph) -> (BlockGraph, BTreeMap<NodeId, NodeId>) {
        fn collect(g: &BlockGraph, out: &mut Vec<NodeId>) {
            for n in g.nodes.values() {
                out.push(n.id);
                if let NodeKind::Map(m) = &n.kind {
                    collect(&m.body, out);
                }
            }
        }
        let mut ids = Vec::new();
        collect(g, &mut ids);
        ids.sort();
        let map: BTreeMap<NodeId, NodeId> = ids.iter().map(|id| (*id, self.fresh_id())).collect();
        (relabel(g, &map), map)
    }
}

pub(crate) fn relabel(g: &BlockGraph, map: &BTreeMap<NodeId, NodeId>) -> BlockGraph {
    let tr = |id: NodeId| map.get(&id).copied().unwrap_or(id);
    let mut out = BlockGraph::new();
    for n in g.nodes.values() {
        let kind = match &n.kind {
            NodeKind::Map(m) => {
                let mut m = m.clone();
                m.body = relabel(&m.body, map);
                NodeKind::Map(m)
            }
            other => other.clone(),
        };
        out.insert(tr(n.id), kind);
    }
    out.edges = g
        .edges
        .iter()
        .map(|e| Edge {
            src: PortRef::new(tr(e.src.node), e.src.port),
            dst: PortRef::new(tr(e.dst.node), e.dst.port),
            desc: e.desc.clone(),
            buffered: e.buffered,
        })
        .collect();
    out
}

/// Relabel ids 0.. in topological order at every level (recursing into maps
/// as they are numbered) and sort edges; equal canonical forms mean the
/// graphs are isomorphic under the deterministic ordering.
pub fn canonical_form(g: &BlockGraph) -> BlockGraph {
    fn number(g: &BlockGraph, next: &mut u32, map: &mut BTreeMap<NodeId, NodeId>) {
        let order = topological_order_of(g).unwrap_or_else(|_| g.ids());
        for id in order {
            map.insert(id, NodeId(*next));
            *next += 1;
            if let Some(NodeKind::Map(m)) = g.kind(id) {
                number(&m.body, next, map);
            }
        }
    }
    fn sort_edges(g: &mut BlockGraph) {
        g.edges.sort_by_key(|e| (e.dst, e.src));
        for n in g.nodes.values_mut() {
            if let NodeKind::Map(m) = &mut n.kind {
                sort_edges(&mut m.body);
            }
        }
    }
    let mut map = BTreeMap::new();
    number(g, &mut 0, &mut map);
    let mut out = relabel(g, &map);
    sort_edges(&mut out);
    out
}

pub fn isomorphic(a: &BlockGraph, b: &BlockGraph) -> bool {
    canonical_form(a) == canonical_form(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{FuncOp, ValueDesc};

    fn chain(n: usize) -> (BlockGraph, Vec<NodeId>) {
        let mut g = BlockGraph::new();
        let ids: Vec<NodeId> = (0..n as u32).map(NodeId).collect();
        for id in &ids {
            g.insert(*id, NodeKind::Functional { op: FuncOp::elementwise(crate::ir::ScalarExpr::x().exp()) });
        }
        for w in ids.windows(2) {
            g.connect(PortRef::new(w[0], 0), PortRef::new(w[1], 0), ValueDesc::block("M", "N"));
        }
        (g, ids)
    }

    #[test]
    fn reachability() {
        let (g, ids) = chain(3);
        assert!(g.reachable(ids[0], ids[1]).unwrap());
        assert!(g.reachable(ids[0], ids[2]).unwrap());
        assert!(!g.reachable(ids[2], ids[0]).unwrap());
        assert!(!g.reachable(ids[0], ids[0]).unwrap());
        assert_eq!(g.reachable(ids[0], NodeId(99)), Err(GraphError::UnknownNode(NodeId(99))));
    }

    #[test]
    fn disconnected_not_reachable() {
        let mut g = BlockGraph::new();
        g.insert(NodeId(0), NodeKind::Reduction { op: crate::ir::ReduceOp::Add });
        g.insert(NodeId(1), NodeKind::Reduction { op: crate::ir::ReduceOp::Add });
        assert!(!g.reachable(NodeId(0), NodeId(1)).unwrap());
    }

    #[test]
    fn topo_orders() {
        let (g, ids) = chain(1);
        assert_eq!(g.topological_order().unwrap(), ids);
        let (g, ids) = chain(3);
        assert_eq!(g.topological_order().unwrap(), ids);
    }

    #[test]
    fn topo_diamond_tiebreak() {
        // a=0 -> {b=2, c=1}... ids chosen so that ascending-id tie break matters
        let mut g = BlockGraph::new();
        let d = ValueDesc::block("M", "N");
        for i in 0..4 {
            g.insert(NodeId(i), NodeKind::Functional { op: FuncOp::Add });
        }
        // a=3, b=1, c=2, d=0 : a -> {b,c} -> d
        g.connect(PortRef::new(NodeId(3), 0), PortRef::new(NodeId(1), 0), d.clone());
        g.connect(PortRef::new(NodeId(3), 0), PortRef::new(NodeId(2), 0), d.clone());
        g.connect(PortRef::new(NodeId(1), 0), PortRef::new(NodeId(0), 0), d.clone());
        g.connect(PortRef::new(NodeId(2), 0), PortRef::new(NodeId(0), 1), d);
        assert_eq!(g.topological_order().unwrap(), vec![NodeId(3), NodeId(1), NodeId(2), NodeId(0)]);
    }

    #[test]
    fn cycle_is_reported() {
        let (mut g, ids) = chain(3);
        g.connect(PortRef::new(ids[2], 0), PortRef::new(ids[0], 0), ValueDesc::block("M", "N"));
        assert!(matches!(g.topological_order(), Err(GraphError::Cycle(..))));
    }
}

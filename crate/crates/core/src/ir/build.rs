//! Convenience constructors used by lowering, rules and tests.

use super::graph::GraphError;
use super::{
    BlockGraph, BlockProgram, FuncOp, MapOp, MapRange, NodeId, NodeKind, OutMode, PortMode, PortRef, ReduceOp,
    ValueDesc,
};
use crate::ir::DimSym;

impl BlockProgram {
    /// Add a node at `path` and wire `inputs` to its ports in order.
    pub fn add_op(&mut self, path: &[NodeId], kind: NodeKind, inputs: &[PortRef]) -> Result<NodeId, GraphError> {
        let id = self.add(path, kind)?;
        let g = self.graph_at_mut(path)?;
        for (port, src) in inputs.iter().enumerate() {
            g.connect_inferred(*src, PortRef::new(id, port))?;
        }
        Ok(id)
    }

    pub fn add_func(&mut self, path: &[NodeId], op: FuncOp, inputs: &[PortRef]) -> Result<PortRef, GraphError> {
        Ok(PortRef::new(self.add_op(path, NodeKind::Functional { op }, inputs)?, 0))
    }

    pub fn add_reduce(&mut self, path: &[NodeId], input: PortRef) -> Result<PortRef, GraphError> {
        Ok(PortRef::new(self.add_op(path, NodeKind::Reduction { op: ReduceOp::Add }, &[input])?, 0))
    }

    pub fn add_input(&mut self, name: &str, desc: ValueDesc, transposed: bool) -> PortRef {
        let id = self.fresh_id();
        self.graph.insert(id, NodeKind::Input { name: name.to_string(), desc, transposed });
        PortRef::new(id, 0)
    }

    pub fn add_output(&mut self, name: &str, src: PortRef) -> Result<NodeId, GraphError> {
        let desc = self.graph.output_desc(src)?;
        self.add_op(&[], NodeKind::Output { name: name.to_string(), desc }, &[src])
    }

    /// Build a map at `path`. `body` receives the body path and the param
    /// ports (one per input, in order) and returns the values to yield.
    pub fn add_map<F>(
        &mut self,
        path: &[NodeId],
        dim: impl Into<DimSym>,
        inputs: &[(PortRef, PortMode)],
        body: F,
    ) -> Result<NodeId, GraphError>
    where
        F: FnOnce(&mut BlockProgram, &[NodeId], &[PortRef]) -> Result<Vec<(PortRef, OutMode)>, GraphError>,
    {
        let dim = dim.into();
        let map_id = self.add(
            path,
            NodeKind::Map(MapOp {
                dim: dim.clone(),
                range: MapRange::All,
                inputs: inputs.iter().map(|(_, m)| *m).collect(),
                outputs: Vec::new(),
                body: BlockGraph::new(),
            }),
        )?;
        let mut body_path = path.to_vec();
        body_path.push(map_id);
        let mut params = Vec::with_capacity(inputs.len());
        for (index, (src, mode)) in inputs.iter().enumerate() {
            let outer = self.graph_at(path)?.output_desc(*src)?;
            let desc = match mode {
                PortMode::Broadcast => outer,
                PortMode::Iterate => {
                    if outer.lists.first() != Some(&dim) {
                        return Err(GraphError::Type(src.node, src.port, format!("{outer} is not a list over {dim}")));
                    }
                    outer.item().expect("checked list")
                }
            };
            let pid = self.add(&body_path, NodeKind::Param { index, desc })?;
            params.push(PortRef::new(pid, 0));
        }
        let yields = body(self, &body_path, &params)?;
        let mut modes = Vec::with_capacity(yields.len());
        for (index, (src, mode)) in yields.into_iter().enumerate() {
            self.add_op(&body_path, NodeKind::Yield { index }, &[src])?;
            modes.push(mode);
        }
        if let Some(NodeKind::Map(m)) = self.graph_at_mut(path)?.kind_mut(map_id) {
            m.outputs = modes;
        }
        let g = self.graph_at_mut(path)?;
        for (port, (src, _)) in inputs.iter().enumerate() {
            g.connect_inferred(*src, PortRef::new(map_id, port))?;
        }
        Ok(map_id)
    }
}

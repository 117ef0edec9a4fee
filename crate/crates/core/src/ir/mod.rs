//! Hierarchical block-program IR.
//!
//! A block program is a DAG whose edges carry either a single local value
//! (block, vector or scalar) or a list of them held in global memory. Map
//! nodes own an inner graph that runs once per list index; values enter the
//! inner graph through `Param` nodes and leave it through `Yield` nodes.

mod build;
mod expr;
mod graph;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use expr::ScalarExpr;
pub use graph::{canonical_form, isomorphic, topological_order_of, GraphError};
pub use validate::{validate, validate_program, Violation};

/// Symbolic blocking dimension. Bound to a block count only by the interpreter.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DimSym(pub String);

impl DimSym {
    pub fn new(name: impl Into<String>) -> Self {
        DimSym(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for DimSym {
    fn from(s: &str) -> Self {
        DimSym(s.to_string())
    }
}

impl fmt::Display for DimSym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Shape of a single local value. Block and vector extents are named by the
/// dimension whose block edge length they equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Base {
    Scalar,
    /// Column vector with one entry per row of a block along the given dim.
    Vector(DimSym),
    /// Block of shape (edge(rows), edge(cols)).
    Block(DimSym, DimSym),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ValueDesc {
    pub base: Base,
    /// List nesting, outermost first. Empty for local values.
    #[serde(default)]
    pub lists: Vec<DimSym>,
}

impl ValueDesc {
    pub fn local(base: Base) -> Self {
        ValueDesc { base, lists: Vec::new() }
    }

    pub fn block(rows: impl Into<DimSym>, cols: impl Into<DimSym>) -> Self {
        Self::local(Base::Block(rows.into(), cols.into()))
    }

    pub fn vector(dim: impl Into<DimSym>) -> Self {
        Self::local(Base::Vector(dim.into()))
    }

    /// Wrap in an outer list over `dim`.
    pub fn listed(mut self, dim: impl Into<DimSym>) -> Self {
        self.lists.insert(0, dim.into());
        self
    }

    /// A `rows x cols` matrix stored as a list of lists of blocks.
    pub fn blocked_matrix(rows: impl Into<DimSym>, cols: impl Into<DimSym>) -> Self {
        let (r, c) = (rows.into(), cols.into());
        ValueDesc { base: Base::Block(r.clone(), c.clone()), lists: vec![r, c] }
    }

    pub fn is_list(&self) -> bool {
        !self.lists.is_empty()
    }

    /// Strip the outermost list level.
    pub fn item(&self) -> Option<ValueDesc> {
        if self.lists.is_empty() {
            return None;
        }
        Some(ValueDesc { base: self.base.clone(), lists: self.lists[1..].to_vec() })
    }
}

impl fmt::Display for ValueDesc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.base {
            Base::Scalar => f.write_str("scalar")?,
            Base::Vector(d) => write!(f, "vec[{d}]")?,
            Base::Block(r, c) => write!(f, "block[{r},{c}]")?,
        }
        if !self.lists.is_empty() {
            let dims: Vec<&str> = self.lists.iter().map(|d| d.as_str()).collect();
            write!(f, "({})", dims.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// A node output or input slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PortRef {
    pub node: NodeId,
    pub port: usize,
}

impl PortRef {
    pub fn new(node: NodeId, port: usize) -> Self {
        PortRef { node, port }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: PortRef,
    pub dst: PortRef,
    pub desc: ValueDesc,
    pub buffered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReduceOp {
    Add,
}

/// Stateless block/vector/scalar functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuncOp {
    Add,
    Mul,
    RowShift,
    RowScale,
    RowSum,
    /// `a @ b.T`
    Dot,
    Outer,
    Elementwise {
        expr: ScalarExpr,
        arity: usize,
    },
}

impl FuncOp {
    pub fn elementwise(expr: ScalarExpr) -> Self {
        let arity = expr.arity().max(1);
        FuncOp::Elementwise { expr, arity }
    }

    pub fn arity(&self) -> usize {
        match self {
            FuncOp::RowSum => 1,
            FuncOp::Elementwise { arity, .. } => *arity,
            _ => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FuncOp::Add => "add",
            FuncOp::Mul => "mul",
            FuncOp::RowShift => "row_shift",
            FuncOp::RowScale => "row_scale",
            FuncOp::RowSum => "row_sum",
            FuncOp::Dot => "dot",
            FuncOp::Outer => "outer",
            FuncOp::Elementwise { .. } => "elementwise",
        }
    }

    /// Output descriptor for the given input descriptors, or a description
    /// of the violated shape constraint.
    pub fn infer(&self, inputs: &[ValueDesc]) -> Result<ValueDesc, String> {
        if inputs.len() != self.arity() {
            return Err(format!("{} expects {} inputs, got {}", self.name(), self.arity(), inputs.len()));
        }
        if let Some(d) = inputs.iter().find(|d| d.is_list()) {
            return Err(format!("{} input {d} must be a local value", self.name()));
        }
        let base = |i: usize| &inputs[i].base;
        let out = match self {
            FuncOp::Add | FuncOp::Mul => {
                if inputs[0] != inputs[1] {
                    return Err(format!("{}: shapes differ ({} vs {})", self.name(), inputs[0], inputs[1]));
                }
                inputs[0].clone()
            }
            FuncOp::RowShift | FuncOp::RowScale => match (base(0), base(1)) {
                (Base::Block(r, _), Base::Vector(v)) if r == v => inputs[0].clone(),
                _ => {
                    return Err(format!(
                        "{}: vector length must equal block rows ({} vs {})",
                        self.name(),
                        inputs[0],
                        inputs[1]
                    ))
                }
            },
            FuncOp::RowSum => match base(0) {
                Base::Block(r, _) => ValueDesc::vector(r.clone()),
                _ => return Err(format!("row_sum: expected a block, got {}", inputs[0])),
            },
            FuncOp::Dot => match (base(0), base(1)) {
                (Base::Block(ra, ca), Base::Block(rb, cb)) if ca == cb => ValueDesc::block(ra.clone(), rb.clone()),
                _ => return Err(format!("dot: column counts must agree ({} vs {})", inputs[0], inputs[1])),
            },
            FuncOp::Outer => match (base(0), base(1)) {
                (Base::Vector(a), Base::Vector(b)) => ValueDesc::block(a.clone(), b.clone()),
                _ => return Err(format!("outer: expected two vectors, got {} and {}", inputs[0], inputs[1])),
            },
            FuncOp::Elementwise { expr, .. } => {
                if expr.arity() > inputs.len() {
                    return Err(format!("elementwise expression {expr} uses more than {} inputs", inputs.len()));
                }
                if inputs.iter().any(|d| d != &inputs[0]) {
                    return Err("elementwise: input shapes differ".to_string());
                }
                inputs[0].clone()
            }
        };
        Ok(out)
    }
}

impl fmt::Display for FuncOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FuncOp::Elementwise { expr, .. } => write!(f, "x -> {expr}"),
            other => f.write_str(other.name()),
        }
    }
}

/// How a map input is presented to each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortMode {
    /// The outer list is indexed by the map's dimension.
    Iterate,
    /// Every iteration sees the whole value.
    Broadcast,
}

/// How a map output combines per-iteration results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutMode {
    /// Results are stored into a list over the map's dimension.
    Collect,
    /// Results are folded on the fly (a reduction fused into the map).
    Reduce(ReduceOp),
}

/// Which iterations a map executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapRange {
    #[default]
    All,
    /// Every iteration except the first; produced by peeling.
    Tail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapOp {
    pub dim: DimSym,
    #[serde(default)]
    pub range: MapRange,
    pub inputs: Vec<PortMode>,
    pub outputs: Vec<OutMode>,
    pub body: BlockGraph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NodeKind {
    /// Program input, always in global memory.
    Input {
        name: String,
        desc: ValueDesc,
        /// The stored matrix is the transpose of the array-program operand.
        #[serde(default)]
        transposed: bool,
    },
    Output {
        name: String,
        desc: ValueDesc,
    },
    /// Inner-graph entry for map input port `index`.
    Param {
        index: usize,
        desc: ValueDesc,
    },
    /// Inner-graph exit for map output port `index`.
    Yield {
        index: usize,
    },
    Functional {
        op: FuncOp,
    },
    Map(MapOp),
    Reduction {
        op: ReduceOp,
    },
    /// Element 0 of a list (used by peeling).
    Select,
    /// Prepend an item to a list (used by peeling).
    Cons,
    Misc {
        name: String,
        inputs: usize,
        outputs: Vec<ValueDesc>,
    },
}

impl NodeKind {
    pub fn num_inputs(&self) -> usize {
        match self {
            NodeKind::Input { .. } | NodeKind::Param { .. } => 0,
            NodeKind::Output { .. } | NodeKind::Yield { .. } => 1,
            NodeKind::Functional { op } => op.arity(),
            NodeKind::Map(m) => m.inputs.len(),
            NodeKind::Reduction { .. } | NodeKind::Select => 1,
            NodeKind::Cons => 2,
            NodeKind::Misc { inputs, .. } => *inputs,
        }
    }

    pub fn num_outputs(&self) -> usize {
        match self {
            NodeKind::Output { .. } | NodeKind::Yield { .. } => 0,
            NodeKind::Map(m) => m.outputs.len(),
            NodeKind::Misc { outputs, .. } => outputs.len(),
            _ => 1,
        }
    }

    /// Operator nodes do work; boundary nodes (inputs, outputs, params,
    /// yields) only name values.
    pub fn is_operator(&self) -> bool {
        !matches!(
            self,
            NodeKind::Input { .. } | NodeKind::Output { .. } | NodeKind::Param { .. } | NodeKind::Yield { .. }
        )
    }

    pub fn is_source_boundary(&self) -> bool {
        matches!(self, NodeKind::Input { .. } | NodeKind::Param { .. })
    }

    pub fn is_sink_boundary(&self) -> bool {
        matches!(self, NodeKind::Output { .. } | NodeKind::Yield { .. })
    }

    pub fn as_map(&self) -> Option<&MapOp> {
        match self {
            NodeKind::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_map_mut(&mut self) -> Option<&mut MapOp> {
        match self {
            NodeKind::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            NodeKind::Input { name, .. } => format!("input {name}"),
            NodeKind::Output { name, .. } => format!("output {name}"),
            NodeKind::Param { index, .. } => format!("param {index}"),
            NodeKind::Yield { index } => format!("yield {index}"),
            NodeKind::Functional { op } => op.to_string(),
            NodeKind::Map(m) => format!("map {}", m.dim),
            NodeKind::Reduction { .. } => "reduce +".to_string(),
            NodeKind::Select => "select 0".to_string(),
            NodeKind::Cons => "cons".to_string(),
            NodeKind::Misc { name, .. } => format!("misc {name}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    #[serde(flatten)]
    pub kind: NodeKind,
}

/// One level of the hierarchical program.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "GraphRepr", into = "GraphRepr")]
pub struct BlockGraph {
    pub nodes: std::collections::BTreeMap<NodeId, Node>,
    pub edges: Vec<Edge>,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

impl From<GraphRepr> for BlockGraph {
    fn from(r: GraphRepr) -> Self {
        BlockGraph { nodes: r.nodes.into_iter().map(|n| (n.id, n)).collect(), edges: r.edges }
    }
}

impl From<BlockGraph> for GraphRepr {
    fn from(g: BlockGraph) -> Self {
        GraphRepr { nodes: g.nodes.into_values().collect(), edges: g.edges }
    }
}

/// A whole block program: the top-level graph plus the id counter shared by
/// every nesting level.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BlockProgram {
    pub graph: BlockGraph,
    pub next_id: u32,
}

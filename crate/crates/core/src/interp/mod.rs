//! Reference interpreter for block programs and dense oracles.

mod equiv;
mod exec;
pub mod reference;
mod value;

use thiserror::Error;

use crate::ir::{DimSym, GraphError, NodeId};

pub use equiv::{check_equivalence, random_inputs, EquivReport, Tolerance};
pub use exec::{execute, Interpreter, MiscFn};
pub use value::{assemble, split_into_blocks, DimBinding, Value};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("dimension {0} has no binding")]
    UnboundDim(DimSym),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("{rows}x{cols} matrix does not split into {row_blocks}x{col_blocks} blocks")]
    NotDivisible { rows: usize, cols: usize, row_blocks: usize, col_blocks: usize },
    #[error("no value supplied for input {0:?}")]
    MissingInput(String),
    #[error("no executor registered for misc op {0:?}")]
    UnregisteredMisc(String),
    #[error("node {node}: {msg}")]
    Node { node: NodeId, msg: String },
    #[error("programs disagree on inputs or outputs: {0}")]
    Interface(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

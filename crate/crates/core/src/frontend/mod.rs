//! Versioned JSON program files plus DOT and pseudocode rendering.
//!
//! A file looks like
//! `{"version": 1, "kind": "array" | "block", "dims": [...], "program": {...}}`
//! where `program` is a serialized [`ArrayProgram`] or [`BlockProgram`].

mod dot;
mod pseudo;

use std::collections::BTreeSet;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::ir::{validate_program, Base, BlockGraph, BlockProgram, DimSym, NodeKind};
use crate::lower::{ArrayProgram, LowerError};

pub use dot::to_dot;
pub use pseudo::to_pseudocode;

pub const FORMAT_VERSION: u64 = 1;

/// Array-level operator names understood by the parser; anything else
/// becomes a `misc` operator.
const ARRAY_OPS: [&str; 7] = ["elementwise", "matmul", "softmax", "layernorm", "rmsnorm", "hadamard", "misc"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "program")]
pub enum Program {
    Array(ArrayProgram),
    Block(BlockProgram),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramFile {
    pub version: u64,
    /// Every dimension the program mentions, sorted.
    pub dims: Vec<DimSym>,
    #[serde(flatten)]
    pub program: Program,
}

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error("syntax error at line {line}, column {column}: {msg}")]
    Syntax { line: usize, column: usize, msg: String },
    #[error("unsupported format version {0} (expected {FORMAT_VERSION})")]
    Version(String),
    #[error("unknown program kind {0:?} (expected \"array\" or \"block\")")]
    Kind(String),
    #[error("malformed {kind} program: {msg}")]
    Schema { kind: &'static str, msg: String },
    #[error(transparent)]
    Lower(#[from] LowerError),
    #[error("invalid block program:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

/// A parsed file with the warnings raised while reading it.
#[derive(Debug, Clone)]
pub struct Parsed {
    pub file: ProgramFile,
    pub warnings: Vec<String>,
}

impl ProgramFile {
    pub fn array(ap: ArrayProgram) -> Self {
        let dims = array_dims(&ap);
        ProgramFile { version: FORMAT_VERSION, dims, program: Program::Array(ap) }
    }

    pub fn block(p: BlockProgram) -> Self {
        let mut dims = BTreeSet::new();
        graph_dims(&p.graph, &mut dims);
        ProgramFile { version: FORMAT_VERSION, dims: dims.into_iter().collect(), program: Program::Block(p) }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("program files always serialize")
    }
}

fn array_dims(ap: &ArrayProgram) -> Vec<DimSym> {
    let mut dims = BTreeSet::new();
    for n in &ap.nodes {
        if let crate::lower::ArrayNode::Input { rows, cols, .. } = n {
            dims.insert(DimSym::new(rows.as_str()));
            dims.insert(DimSym::new(cols.as_str()));
        }
    }
    dims.into_iter().collect()
}

fn graph_dims(g: &BlockGraph, out: &mut BTreeSet<DimSym>) {
    for e in &g.edges {
        out.extend(e.desc.lists.iter().cloned());
        match &e.desc.base {
            Base::Scalar => {}
            Base::Vector(d) => {
                out.insert(d.clone());
            }
            Base::Block(r, c) => {
                out.insert(r.clone());
                out.insert(c.clone());
            }
        }
    }
    for n in g.nodes.values() {
        if let NodeKind::Map(m) = &n.kind {
            out.insert(m.dim.clone());
            graph_dims(&m.body, out);
        }
    }
}

/// Parse and validate a program file.
pub fn parse_program(text: &str) -> Result<Parsed, FrontendError> {
    let doc: Json = serde_json::from_str(text).map_err(|e| FrontendError::Syntax {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    let version = doc.get("version").cloned().unwrap_or(Json::Null);
    if version.as_u64() != Some(FORMAT_VERSION) {
        return Err(FrontendError::Version(version.to_string()));
    }
    let kind = doc.get("kind").and_then(Json::as_str).unwrap_or_default().to_string();
    let mut body = doc.get("program").cloned().unwrap_or(Json::Null);
    let mut warnings = Vec::new();
    let file = match kind.as_str() {
        "array" => {
            rename_unknown_ops(&mut body, &mut warnings);
            let ap: ArrayProgram = serde_json::from_value(body)
                .map_err(|e| FrontendError::Schema { kind: "array", msg: e.to_string() })?;
            ap.topological_order()?;
            ap.shapes()?;
            ProgramFile::array(ap)
        }
        "block" => {
            let p: BlockProgram = serde_json::from_value(body)
                .map_err(|e| FrontendError::Schema { kind: "block", msg: e.to_string() })?;
            let violations = validate_program(&p);
            if !violations.is_empty() {
                return Err(FrontendError::Invalid(violations.iter().map(|v| v.to_string()).collect()));
            }
            ProgramFile::block(p)
        }
        _ => return Err(FrontendError::Kind(kind)),
    };
    for w in &warnings {
        warn!("{w}");
    }
    Ok(Parsed { file, warnings })
}

/// Rewrite `{"node": "op", "op": "conv2d", ...}` into a `misc` operator
/// named `conv2d`.
fn rename_unknown_ops(body: &mut Json, warnings: &mut Vec<String>) {
    let Some(nodes) = body.get_mut("nodes").and_then(Json::as_array_mut) else { return };
    for (i, n) in nodes.iter_mut().enumerate() {
        let Some(obj) = n.as_object_mut() else { continue };
        if obj.get("node").and_then(Json::as_str) != Some("op") {
            continue;
        }
        let Some(op) = obj.get("op").and_then(Json::as_str).map(str::to_string) else { continue };
        if !ARRAY_OPS.contains(&op.as_str()) {
            warnings.push(format!("node {i}: unknown operator {op:?} treated as a misc operator"));
            obj.insert("op".into(), Json::from("misc"));
            obj.insert("name".into(), Json::from(op));
        }
    }
}

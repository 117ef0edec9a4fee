//! The substitution rules. Each rule has a matcher that enumerates every
//! site in one graph and an `apply` that rewrites one site in place.
//!
//! Matches are ordered by their sorted bound node ids; the first match of a
//! rule is the least one.

mod elementwise;
mod extend;
mod linear;
mod maps;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{BlockGraph, BlockProgram, DimSym, GraphError, MapOp, MapRange, NodeId, NodeKind, PortRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// The outer map produces the value the inner map consumes.
    A,
    /// Both maps read the same input or param node.
    B,
    /// Both maps read the same operator output.
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "variant")]
pub enum RuleId {
    ConsecutiveMaps,
    SiblingMaps,
    MapReduction,
    ScaleDot,
    ShiftDot,
    Extend(Variant),
    Peel(Variant),
    DuplicateScale,
    Elementwise,
}

/// Rule families, ignoring the structural variant of R6 and R7.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
    R7,
    R8,
    R9,
}

impl Rule {
    pub const ALL: [Rule; 9] =
        [Rule::R1, Rule::R2, Rule::R3, Rule::R4, Rule::R5, Rule::R6, Rule::R7, Rule::R8, Rule::R9];

    pub fn name(self) -> &'static str {
        match self {
            Rule::R1 => "fuse consecutive maps",
            Rule::R2 => "fuse sibling maps",
            Rule::R3 => "fuse map with reduction",
            Rule::R4 => "swap scale and dot",
            Rule::R5 => "swap shift and dot",
            Rule::R6 => "extend map to the entire graph",
            Rule::R7 => "peel off first iteration",
            Rule::R8 => "duplicate mapped scale",
            Rule::R9 => "fuse consecutive elementwise",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl std::str::FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Rule::ALL
            .into_iter()
            .find(|r| r.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown rule {s:?}; expected R1..R9"))
    }
}

impl RuleId {
    pub fn rule(self) -> Rule {
        match self {
            RuleId::ConsecutiveMaps => Rule::R1,
            RuleId::SiblingMaps => Rule::R2,
            RuleId::MapReduction => Rule::R3,
            RuleId::ScaleDot => Rule::R4,
            RuleId::ShiftDot => Rule::R5,
            RuleId::Extend(_) => Rule::R6,
            RuleId::Peel(_) => Rule::R7,
            RuleId::DuplicateScale => Rule::R8,
            RuleId::Elementwise => Rule::R9,
        }
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleId::Extend(v) | RuleId::Peel(v) => write!(f, "{}({})", self.rule(), format!("{v:?}").to_lowercase()),
            _ => write!(f, "{}", self.rule()),
        }
    }
}

/// One site where a rule applies.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RuleMatch {
    pub rule: RuleId,
    /// Map ids leading from the top level to the graph holding the site.
    pub graph_path: Vec<NodeId>,
    /// Bound nodes in rule-specific order (see each matcher).
    pub nodes: Vec<NodeId>,
    /// Dimension of the primary matched map, if any.
    pub dim: Option<DimSym>,
}

impl RuleMatch {
    fn sort_key(&self) -> Vec<NodeId> {
        let mut k = self.nodes.clone();
        k.sort();
        k
    }
}

impl fmt::Display for RuleMatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path: Vec<String> = self.graph_path.iter().map(|n| n.to_string()).collect();
        let nodes: Vec<String> = self.nodes.iter().map(|n| n.to_string()).collect();
        write!(f, "{} at /{} on [{}]", self.rule, path.join("/"), nodes.join(", "))?;
        if let Some(d) = &self.dim {
            write!(f, " dim {d}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ApplyError {
    #[error("match is stale or its precondition no longer holds: {0}")]
    Stale(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Every match of `rule` in the graph at `path`, least first.
pub fn find_all(rule: Rule, p: &BlockProgram, path: &[NodeId]) -> Vec<RuleMatch> {
    let Ok(g) = p.graph_at(path) else { return Vec::new() };
    let mut v = match rule {
        Rule::R1 => maps::match_consecutive(g, path),
        Rule::R2 => maps::match_sibling(g, path),
        Rule::R3 => maps::match_reduction(g, path),
        Rule::R4 => linear::match_scale_dot(g, path, false),
        Rule::R5 => linear::match_scale_dot(g, path, true),
        Rule::R6 => extend::match_extend(g, path, true),
        Rule::R7 => extend::match_extend(g, path, false),
        Rule::R8 => linear::match_duplicate(g, path),
        Rule::R9 => elementwise::match_elementwise(g, path),
    };
    v.sort_by_key(|m| m.sort_key());
    v
}

/// The least match of `rule` in the graph at `path`, optionally restricted
/// to maps over `dim`.
pub fn find_first(rule: Rule, p: &BlockProgram, path: &[NodeId], dim: Option<&DimSym>) -> Option<RuleMatch> {
    find_all(rule, p, path).into_iter().find(|m| dim.is_none() || m.dim.as_ref() == dim)
}

/// Breadth-first search of the whole program for the first match of `rule`.
pub fn find_in_program(rule: Rule, p: &BlockProgram) -> Option<RuleMatch> {
    p.graph_paths().iter().find_map(|path| find_first(rule, p, path, None))
}

/// Rewrite one site in place. The match is re-derived first, so a stale
/// match or one whose precondition no longer holds is refused.
pub fn apply_in_place(p: &mut BlockProgram, m: &RuleMatch) -> Result<(), ApplyError> {
    if !find_all(m.rule.rule(), p, &m.graph_path).contains(m) {
        return Err(ApplyError::Stale(m.to_string()));
    }
    match m.rule {
        RuleId::ConsecutiveMaps => maps::apply_consecutive(p, m),
        RuleId::SiblingMaps => maps::apply_sibling(p, m),
        RuleId::MapReduction => maps::apply_reduction(p, m),
        RuleId::ScaleDot => linear::apply_scale_dot(p, m),
        RuleId::ShiftDot => linear::apply_shift_dot(p, m),
        RuleId::DuplicateScale => linear::apply_duplicate(p, m),
        RuleId::Elementwise => elementwise::apply_elementwise(p, m),
        RuleId::Extend(_) => extend::apply_extend(p, m),
        RuleId::Peel(_) => extend::apply_peel(p, m),
    }
}

/// [`apply_in_place`] on a copy.
pub fn apply(p: &BlockProgram, m: &RuleMatch) -> Result<BlockProgram, ApplyError> {
    let mut out = p.clone();
    apply_in_place(&mut out, m)?;
    Ok(out)
}

// Shared helpers.

/// Map nodes of `g` over the full range, in topological order.
fn full_maps(g: &BlockGraph) -> Vec<(NodeId, &MapOp)> {
    g.maps()
        .into_iter()
        .filter_map(|id| match g.kind(id) {
            Some(NodeKind::Map(m)) if m.range == MapRange::All => Some((id, m)),
            _ => None,
        })
        .collect()
}

fn map_of(g: &BlockGraph, id: NodeId) -> &MapOp {
    g.kind(id).and_then(NodeKind::as_map).expect("bound node is a map")
}

/// Point every edge leaving `from` at `to` instead.
fn redirect(g: &mut BlockGraph, from: PortRef, to: PortRef) {
    for e in g.edges.iter_mut().filter(|e| e.src == from) {
        e.src = to;
    }
}

/// Replace the producer feeding `dst`.
fn set_source(g: &mut BlockGraph, dst: PortRef, src: PortRef) {
    if let Some(e) = g.edges.iter_mut().find(|e| e.dst == dst) {
        e.src = src;
    }
}

/// Recompute buffered flags and descriptors of every edge in `g` from the
/// producers, visiting nodes in topological order.
fn refresh_all(g: &mut BlockGraph) -> Result<(), GraphError> {
    for id in g.topological_order()? {
        g.refresh_outputs(id)?;
    }
    Ok(())
}

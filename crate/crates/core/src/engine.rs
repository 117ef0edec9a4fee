//! Priority-ordered rule driver with breadth-first traversal and
//! snapshotting at every fixpoint before a map extension.

use std::collections::VecDeque;

use log::debug;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{BlockProgram, NodeId};
use crate::rules::{self, ApplyError, Rule, RuleMatch};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Rules tried by `fuse_no_extend`, highest priority first. R6 and R7
    /// are ignored here; they only run from `bfs_extend`.
    pub priority: Vec<Rule>,
    /// Let `bfs_extend` fall back to peeling (R7) when nothing extends.
    pub enable_peel: bool,
    /// Run `bfs_extend` at all; when off, `fuse` yields one snapshot.
    pub enable_extend: bool,
    /// Cap on rule applications within one `fuse_no_extend` call.
    pub max_rounds: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            priority: vec![Rule::R8, Rule::R4, Rule::R5, Rule::R9, Rule::R3, Rule::R1, Rule::R2],
            enable_peel: false,
            enable_extend: true,
            max_rounds: 10_000,
        }
    }
}

impl EngineConfig {
    /// Only the given rules, in the given order, and no extension.
    pub fn only(rules: &[Rule]) -> Self {
        EngineConfig { priority: rules.to_vec(), enable_extend: false, ..Self::default() }
    }
}

/// The program at one fixpoint, with the rules applied since the previous
/// snapshot (or since the input program, for the first).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub program: BlockProgram,
    pub trace: Vec<RuleMatch>,
    pub round_index: usize,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("no fixpoint after {rounds} rule applications in graph /{path}; last: {last}")]
    MaxRounds { rounds: usize, path: String, last: String, trace: Vec<RuleMatch> },
    #[error("applying {step}: {source}")]
    Apply {
        step: String,
        #[source]
        source: ApplyError,
    },
}

fn apply_step(p: &mut BlockProgram, m: &RuleMatch) -> Result<(), EngineError> {
    debug!("apply {m}");
    rules::apply_in_place(p, m).map_err(|source| EngineError::Apply { step: m.to_string(), source })
}

/// Apply the highest-priority matching rule in the graph at `path` until
/// none matches.
pub fn fuse_no_extend(
    p: &mut BlockProgram,
    path: &[NodeId],
    cfg: &EngineConfig,
) -> Result<Vec<RuleMatch>, EngineError> {
    let mut trace = Vec::new();
    let usable: Vec<Rule> = cfg.priority.iter().copied().filter(|r| !matches!(r, Rule::R6 | Rule::R7)).collect();
    loop {
        let Some(m) = usable.iter().find_map(|r| rules::find_first(*r, p, path, None)) else {
            return Ok(trace);
        };
        if trace.len() >= cfg.max_rounds {
            return Err(EngineError::MaxRounds {
                rounds: trace.len(),
                path: path.iter().map(|n| n.to_string()).collect::<Vec<_>>().join("/"),
                last: m.to_string(),
                trace,
            });
        }
        apply_step(p, &m)?;
        trace.push(m);
    }
}

/// [`fuse_no_extend`] on every graph, breadth-first from the top level;
/// a graph's inner graphs are queued only after it reaches its fixpoint.
pub fn bfs_fuse_no_extend(p: &mut BlockProgram, cfg: &EngineConfig) -> Result<Vec<RuleMatch>, EngineError> {
    let mut trace = Vec::new();
    let mut queue: VecDeque<Vec<NodeId>> = VecDeque::from([Vec::new()]);
    while let Some(path) = queue.pop_front() {
        trace.extend(fuse_no_extend(p, &path, cfg)?);
        let Ok(g) = p.graph_at(&path) else { continue };
        for child in g.maps() {
            let mut next = path.clone();
            next.push(child);
            queue.push_back(next);
        }
    }
    Ok(trace)
}

/// Apply the first R6 match found breadth-first (then R7, if enabled).
pub fn bfs_extend(p: &mut BlockProgram, cfg: &EngineConfig) -> Result<Option<RuleMatch>, EngineError> {
    let mut candidates = vec![Rule::R6];
    if cfg.enable_peel {
        candidates.push(Rule::R7);
    }
    for rule in candidates {
        if let Some(m) = rules::find_in_program(rule, p) {
            apply_step(p, &m)?;
            return Ok(Some(m));
        }
    }
    Ok(None)
}

/// Alternate `bfs_fuse_no_extend`, snapshot and `bfs_extend` until no
/// extension applies. The input program is not itself snapshotted.
pub fn fuse(p: &BlockProgram, cfg: &EngineConfig) -> Result<Vec<Snapshot>, EngineError> {
    let mut p = p.clone();
    let mut snapshots = Vec::new();
    let mut pending = Vec::new();
    loop {
        pending.extend(bfs_fuse_no_extend(&mut p, cfg)?);
        snapshots.push(Snapshot {
            program: p.clone(),
            trace: std::mem::take(&mut pending),
            round_index: snapshots.len(),
        });
        if !cfg.enable_extend {
            break;
        }
        match bfs_extend(&mut p, cfg)? {
            Some(m) => pending.push(m),
            None => break,
        }
    }
    Ok(snapshots)
}

/// Re-apply a recorded trace, checking every step against the matcher.
pub fn replay(p: &BlockProgram, trace: &[RuleMatch]) -> Result<BlockProgram, EngineError> {
    let mut p = p.clone();
    for m in trace {
        apply_step(&mut p, m)?;
    }
    Ok(p)
}

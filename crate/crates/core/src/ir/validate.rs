use std::collections::BTreeSet;
use std::fmt;

use super::{BlockGraph, BlockProgram, NodeId, NodeKind, PortMode, PortRef};

/// A broken structural rule, located by the map path and the offending item.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub path: Vec<NodeId>,
    pub subject: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path: Vec<String> = self.path.iter().map(|p| p.to_string()).collect();
        write!(f, "[/{}] {}: {}", path.join("/"), self.subject, self.rule)
    }
}

/// Check every structural invariant of a top-level graph and all graphs
/// nested inside it.
pub fn validate(g: &BlockGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    check_graph(g, &[], true, &mut out);
    out
}

/// [`validate`] plus program-wide id checks.
pub fn validate_program(p: &BlockProgram) -> Vec<Violation> {
    let mut out = validate(&p.graph);
    let mut seen = BTreeSet::new();
    for id in p.all_ids() {
        if !seen.insert(id) {
            out.push(Violation { path: vec![], subject: id.to_string(), rule: "node id used twice".into() });
        }
        if id.0 >= p.next_id {
            out.push(Violation {
                path: vec![],
                subject: id.to_string(),
                rule: "node id not below the id counter".into(),
            });
        }
    }
    out
}

fn check_graph(g: &BlockGraph, path: &[NodeId], top: bool, out: &mut Vec<Violation>) {
    let mut local = Vec::new();
    let mut nested = Vec::new();
    let mut push = |subject: String, rule: String| local.push(Violation { path: path.to_vec(), subject, rule });

    for (i, e) in g.edges.iter().enumerate() {
        let subject = format!("edge #{i} {}:{} -> {}:{}", e.src.node, e.src.port, e.dst.node, e.dst.port);
        let (Some(src), Some(dst)) = (g.kind(e.src.node), g.kind(e.dst.node)) else {
            push(subject, "edge endpoint does not exist".into());
            continue;
        };
        if e.src.port >= src.num_outputs() {
            push(subject.clone(), "source port out of range".into());
        }
        if e.dst.port >= dst.num_inputs() {
            push(subject.clone(), "destination port out of range".into());
        }
        if top && matches!(src, NodeKind::Input { .. }) && !e.buffered {
            push(subject.clone(), "input edge must be buffered".into());
        } else if top && matches!(dst, NodeKind::Output { .. }) && !e.buffered {
            push(subject.clone(), "output edge must be buffered".into());
        } else if !matches!(src, NodeKind::Input { .. })
            && !matches!(dst, NodeKind::Output { .. })
            && e.buffered != e.desc.is_list()
        {
            push(subject.clone(), format!("buffered flag {} disagrees with value {}", e.buffered, e.desc));
        }
        if e.src.port < src.num_outputs() {
            match g.output_desc(e.src) {
                Ok(d) if d != e.desc => {
                    push(subject.clone(), format!("edge carries {} but producer yields {d}", e.desc))
                }
                Err(err) => push(subject.clone(), err.to_string()),
                _ => {}
            }
        }
    }

    if let Err(err) = g.topological_order() {
        push("graph".into(), err.to_string());
    }

    for n in g.nodes.values() {
        let subject = format!("node {} ({})", n.id, n.kind.label());
        for port in 0..n.kind.num_inputs() {
            let count = g.edges.iter().filter(|e| e.dst == PortRef::new(n.id, port)).count();
            if count != 1 {
                push(subject.clone(), format!("input port {port} has {count} incoming edges"));
            }
        }
        let input = |p: usize| g.incoming(PortRef::new(n.id, p)).map(|e| e.desc.clone());
        match &n.kind {
            NodeKind::Input { .. } | NodeKind::Output { .. } if !top => {
                push(subject.clone(), "program inputs and outputs belong to the top level".into())
            }
            NodeKind::Param { .. } | NodeKind::Yield { .. } if top => {
                push(subject.clone(), "params and yields belong to map bodies".into())
            }
            NodeKind::Output { desc, .. } => {
                if let Some(d) = input(0) {
                    if &d != desc {
                        push(subject.clone(), format!("output declared {desc} but receives {d}"));
                    }
                }
            }
            NodeKind::Functional { op } => {
                let ins: Option<Vec<_>> = (0..op.arity()).map(input).collect();
                if let Some(ins) = ins {
                    if let Err(m) = op.infer(&ins) {
                        push(subject.clone(), m);
                    }
                }
            }
            NodeKind::Reduction { .. } => {
                if let Some(d) = input(0) {
                    if d.lists.len() != 1 {
                        push(subject.clone(), format!("reduction input {d} must be a list over exactly one dim"));
                    }
                }
            }
            NodeKind::Select => {
                if let Some(d) = input(0) {
                    if !d.is_list() {
                        push(subject.clone(), "select needs a list input".into());
                    }
                }
            }
            NodeKind::Cons => {
                if let (Some(h), Some(t)) = (input(0), input(1)) {
                    if t.item().as_ref() != Some(&h) {
                        push(subject.clone(), format!("cons head {h} does not match tail {t}"));
                    }
                }
            }
            NodeKind::Map(m) => {
                let mut child = path.to_vec();
                child.push(n.id);
                let params = m.body.params();
                let idx: Vec<usize> = params.iter().map(|(i, _)| *i).collect();
                if idx != (0..m.inputs.len()).collect::<Vec<_>>() {
                    push(subject.clone(), format!("body params {idx:?} do not match {} input ports", m.inputs.len()));
                }
                for j in 0..m.outputs.len() {
                    let ys = m
                        .body
                        .nodes
                        .values()
                        .filter(|b| matches!(b.kind, NodeKind::Yield { index } if index == j))
                        .count();
                    if ys != 1 {
                        push(subject.clone(), format!("output port {j} has {ys} yields"));
                    }
                }
                if m.body
                    .nodes
                    .values()
                    .any(|b| matches!(b.kind, NodeKind::Yield { index } if index >= m.outputs.len()))
                {
                    push(subject.clone(), "yield index beyond the output ports".into());
                }
                for (i, pid) in params {
                    let (Some(mode), Some(outer)) = (m.inputs.get(i), input(i)) else { continue };
                    let Some(NodeKind::Param { desc, .. }) = m.body.kind(pid) else { continue };
                    let expected = match mode {
                        PortMode::Broadcast => Some(outer.clone()),
                        PortMode::Iterate => {
                            if outer.lists.first() != Some(&m.dim) {
                                push(
                                    subject.clone(),
                                    format!("iterated port {i} carries {outer}, not a list over {}", m.dim),
                                );
                            }
                            outer.item()
                        }
                    };
                    if expected.as_ref() != Some(desc) {
                        push(subject.clone(), format!("param {i} declared {desc} but port supplies {outer}"));
                    }
                }
                check_graph(&m.body, &child, false, &mut nested);
            }
            _ => {}
        }
    }
    out.extend(local);
    out.extend(nested);
}

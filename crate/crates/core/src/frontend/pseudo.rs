//! Loop-nest pseudocode. Maps print as `forall` loops, or as serial `for`
//! loops when they reduce; lower-case `t` names are local values and
//! upper-case names live in global memory, reached by `load` and `store`.
//! Accumulators are zeroed before their loop.

use std::collections::BTreeMap;

use crate::ir::{BlockGraph, BlockProgram, FuncOp, MapRange, NodeId, NodeKind, OutMode, PortMode, PortRef};

pub fn to_pseudocode(p: &BlockProgram) -> String {
    let mut e = Emitter::default();
    e.graph(&p.graph, 0, &[], &[], None, &[], &mut BTreeMap::new());
    let mut out = e.lines.join("\n");
    if !out.is_empty() {
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
struct Val {
    text: String,
    global: bool,
}

/// Where a body's yield `k` goes.
#[derive(Debug, Clone)]
enum Target {
    Collect(String),
    Reduce(String),
}

#[derive(Default)]
struct Emitter {
    lines: Vec<String>,
    next_t: usize,
    next_i: usize,
}

impl Emitter {
    fn line(&mut self, depth: usize, s: String) {
        self.lines.push(format!("{}{s}", "    ".repeat(depth)));
    }

    fn temp(&mut self) -> String {
        self.next_t += 1;
        format!("t{}", self.next_t)
    }

    /// A fresh global buffer, one per iteration of the enclosing loops.
    fn global(&mut self, vars: &[String]) -> String {
        self.next_i += 1;
        let idx: String = vars.iter().map(|v| format!("[{v}]")).collect();
        format!("I{}{idx}", self.next_i)
    }

    /// A local name for `v`, loading it first if it lives in global memory.
    fn local(&mut self, v: &Val, depth: usize, loads: &mut BTreeMap<String, String>) -> String {
        if !v.global {
            return v.text.clone();
        }
        if let Some(t) = loads.get(&v.text) {
            return t.clone();
        }
        let t = self.temp();
        self.line(depth, format!("{t} = load {}", v.text));
        loads.insert(v.text.clone(), t.clone());
        t
    }

    #[allow(clippy::too_many_arguments)]
    fn graph(
        &mut self,
        g: &BlockGraph,
        depth: usize,
        params: &[Val],
        targets: &[Target],
        var: Option<&str>,
        vars: &[String],
        loads: &mut BTreeMap<String, String>,
    ) {
        let order = g.topological_order().unwrap_or_else(|_| g.ids());
        let mut env: BTreeMap<PortRef, Val> = BTreeMap::new();
        let args = |env: &BTreeMap<PortRef, Val>, id: NodeId| -> Vec<Val> {
            let mut ins = g.in_edges(id);
            ins.sort_by_key(|e| e.dst.port);
            ins.iter().map(|e| env.get(&e.src).cloned().unwrap_or(Val { text: "?".into(), global: false })).collect()
        };
        for id in order {
            let kind = g.kind(id).expect("ordered node exists");
            let out = PortRef::new(id, 0);
            match kind {
                NodeKind::Input { name, .. } => {
                    env.insert(out, Val { text: name.clone(), global: true });
                }
                NodeKind::Param { index, .. } => {
                    let v = params.get(*index).cloned().unwrap_or(Val { text: format!("param{index}"), global: false });
                    env.insert(out, v);
                }
                NodeKind::Functional { op } => {
                    let ins: Vec<String> = args(&env, id).iter().map(|v| self.local(v, depth, loads)).collect();
                    let t = self.temp();
                    let call = match op {
                        FuncOp::Elementwise { expr, .. } => format!("({expr})({})", ins.join(", ")),
                        _ => format!("{}({})", op.name(), ins.join(", ")),
                    };
                    self.line(depth, format!("{t} = {call}"));
                    env.insert(out, Val { text: t, global: false });
                }
                NodeKind::Reduction { .. } => {
                    let list = args(&env, id).remove(0);
                    let dim = g.incoming(PortRef::new(id, 0)).and_then(|e| e.desc.lists.first().cloned());
                    let v = fresh_var(dim.as_ref().map_or("i", |d| d.as_str()), vars);
                    let acc = self.temp();
                    self.line(depth, format!("{acc} = 0"));
                    self.line(depth, format!("for {v} in {}:", dim.map_or("?".into(), |d| d.to_string())));
                    self.line(depth + 1, format!("{acc} += load {}[{v}]", list.text));
                    env.insert(out, Val { text: acc, global: false });
                }
                NodeKind::Select => {
                    let src = args(&env, id).remove(0);
                    env.insert(out, Val { text: format!("{}[0]", src.text), global: src.global });
                }
                NodeKind::Cons => {
                    let a = args(&env, id);
                    let head = self.local(&a[0], depth, loads);
                    let name = self.global(vars);
                    self.line(depth, format!("store {name} = cons({head}, {})", a[1].text));
                    env.insert(out, Val { text: name, global: true });
                }
                NodeKind::Misc { name, outputs, .. } => {
                    let ins: Vec<String> = args(&env, id).into_iter().map(|v| v.text).collect();
                    let outs: Vec<String> = outputs.iter().map(|_| self.global(vars)).collect();
                    self.line(depth, format!("{} = {name}({})", outs.join(", "), ins.join(", ")));
                    for (j, o) in outs.into_iter().enumerate() {
                        env.insert(PortRef::new(id, j), Val { text: o, global: true });
                    }
                }
                NodeKind::Output { name, .. } => {
                    let v = args(&env, id).remove(0);
                    if v.text != *name {
                        if v.global {
                            self.line(depth, format!("{name} = {}", v.text));
                        } else {
                            self.line(depth, format!("store {name} = {}", v.text));
                        }
                    }
                }
                NodeKind::Yield { index } => {
                    let v = args(&env, id).remove(0);
                    match targets.get(*index) {
                        Some(Target::Collect(t)) => {
                            let slot = format!("{t}[{}]", var.unwrap_or("?"));
                            // An inner map that already wrote into the slot needs no copy.
                            if v.text != slot {
                                let copy = if v.global { "" } else { "store " };
                                self.line(depth, format!("{copy}{slot} = {}", v.text));
                            }
                        }
                        Some(Target::Reduce(acc)) => {
                            let l = self.local(&v, depth, loads);
                            self.line(depth, format!("{acc} += {l}"));
                        }
                        None => {}
                    }
                }
                NodeKind::Map(m) => {
                    let v = fresh_var(m.dim.as_str(), vars);
                    let mut inner_targets = Vec::new();
                    for (j, mode) in m.outputs.iter().enumerate() {
                        let port = PortRef::new(id, j);
                        let (target, val) = match mode {
                            OutMode::Collect => {
                                let cons = g.consumers(port);
                                let name = match cons.as_slice() {
                                    [e] => match g.kind(e.dst.node) {
                                        Some(NodeKind::Output { name, .. }) => Some(name.clone()),
                                        Some(NodeKind::Yield { index }) => match (targets.get(*index), var) {
                                            (Some(Target::Collect(t)), Some(ov)) => Some(format!("{t}[{ov}]")),
                                            _ => None,
                                        },
                                        _ => None,
                                    },
                                    _ => None,
                                };
                                let name = name.unwrap_or_else(|| self.global(vars));
                                (Target::Collect(name.clone()), Val { text: name, global: true })
                            }
                            OutMode::Reduce(_) => {
                                let acc = self.temp();
                                self.line(depth, format!("{acc} = 0"));
                                (Target::Reduce(acc.clone()), Val { text: acc, global: false })
                            }
                        };
                        inner_targets.push(target);
                        env.insert(port, val);
                    }
                    let inner_params: Vec<Val> = args(&env, id)
                        .into_iter()
                        .zip(&m.inputs)
                        .map(|(a, mode)| match mode {
                            PortMode::Iterate => Val { text: format!("{}[{v}]", a.text), global: a.global },
                            PortMode::Broadcast => a,
                        })
                        .collect();
                    let serial = m.outputs.iter().any(|o| matches!(o, OutMode::Reduce(_)));
                    let range = if m.range == MapRange::Tail { format!("{}[1:]", m.dim) } else { m.dim.to_string() };
                    self.line(depth, format!("{} {v} in {range}:", if serial { "for" } else { "forall" }));
                    let mut inner_vars = vars.to_vec();
                    inner_vars.push(v.clone());
                    let mut inner_loads = loads.clone();
                    self.graph(
                        &m.body,
                        depth + 1,
                        &inner_params,
                        &inner_targets,
                        Some(&v),
                        &inner_vars,
                        &mut inner_loads,
                    );
                }
            }
        }
    }
}

fn fresh_var(dim: &str, taken: &[String]) -> String {
    let base = dim.to_lowercase();
    if !taken.contains(&base) {
        return base;
    }
    (2..).map(|i| format!("{base}{i}")).find(|v| !taken.contains(v)).expect("unbounded")
}

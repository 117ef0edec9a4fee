use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};

use super::{DimBinding, ExecError, Value};
use crate::ir::{BlockGraph, BlockProgram, FuncOp, MapRange, NodeKind, OutMode, PortMode, PortRef};

/// Executor for a `Misc` node: input values in, one value per output port out.
pub type MiscFn = Arc<dyn Fn(&[Value]) -> Result<Vec<Value>, String> + Send + Sync>;

/// Runs block programs on concrete matrices. Maps execute serially.
#[derive(Clone, Default)]
pub struct Interpreter {
    misc: BTreeMap<String, MiscFn>,
}

impl std::fmt::Debug for Interpreter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Interpreter").field("misc", &self.misc.keys().collect::<Vec<_>>()).finish()
    }
}

/// Execute with no misc executors registered.
pub fn execute(
    p: &BlockProgram,
    inputs: &BTreeMap<String, Array2<f64>>,
    binding: &DimBinding,
) -> Result<BTreeMap<String, Array2<f64>>, ExecError> {
    Interpreter::new().execute(p, inputs, binding)
}

struct Ctx<'a> {
    binding: &'a DimBinding,
    inputs: &'a BTreeMap<String, Array2<f64>>,
}

impl Interpreter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_misc(&mut self, name: &str, f: MiscFn) {
        self.misc.insert(name.to_string(), f);
    }

    /// Run `p`. `inputs` holds the stored (already transposed, where the
    /// input is marked so) dense matrix of every program input.
    pub fn execute(
        &self,
        p: &BlockProgram,
        inputs: &BTreeMap<String, Array2<f64>>,
        binding: &DimBinding,
    ) -> Result<BTreeMap<String, Array2<f64>>, ExecError> {
        let ctx = Ctx { binding, inputs };
        let (_, outs) = self.run_graph(&p.graph, &[], &ctx)?;
        let mut dense = BTreeMap::new();
        for node in p.graph.nodes.values() {
            if let NodeKind::Output { name, desc } = &node.kind {
                let v = outs.get(name).ok_or_else(|| ExecError::MissingInput(name.clone()))?;
                dense.insert(name.clone(), binding.to_matrix(desc, v)?);
            }
        }
        Ok(dense)
    }

    fn run_graph(
        &self,
        g: &BlockGraph,
        params: &[Value],
        ctx: &Ctx<'_>,
    ) -> Result<(Vec<Value>, BTreeMap<String, Value>), ExecError> {
        let mut env: HashMap<PortRef, Value> = HashMap::new();
        let mut yields: BTreeMap<usize, Value> = BTreeMap::new();
        let mut outputs = BTreeMap::new();
        for id in g.topological_order()? {
            let kind = g.kind(id).expect("id from topological order");
            let args = (0..kind.num_inputs())
                .map(|port| {
                    let e = g
                        .incoming(PortRef::new(id, port))
                        .ok_or(ExecError::Node { node: id, msg: format!("input port {port} is not connected") })?;
                    env.get(&e.src).ok_or(ExecError::Node { node: id, msg: "input not yet computed".into() })
                })
                .collect::<Result<Vec<&Value>, _>>()?;
            let wrap = |e: ExecError| match e {
                ExecError::Shape(msg) => ExecError::Node { node: id, msg },
                other => other,
            };
            let results: Vec<Value> = match kind {
                NodeKind::Input { name, desc, .. } => {
                    let m = ctx.inputs.get(name).ok_or_else(|| ExecError::MissingInput(name.clone()))?;
                    vec![ctx.binding.to_value(desc, m).map_err(wrap)?]
                }
                NodeKind::Output { name, .. } => {
                    outputs.insert(name.clone(), args[0].clone());
                    vec![]
                }
                NodeKind::Param { index, .. } => vec![params
                    .get(*index)
                    .cloned()
                    .ok_or(ExecError::Node { node: id, msg: format!("no value for param {index}") })?],
                NodeKind::Yield { index } => {
                    yields.insert(*index, args[0].clone());
                    vec![]
                }
                NodeKind::Functional { op } => vec![eval_func(op, &args, ctx.binding).map_err(wrap)?],
                NodeKind::Reduction { .. } => {
                    let items = args[0].as_list().map_err(wrap)?;
                    vec![items.iter().try_fold(Value::Zero, |acc, v| acc.add(v)).map_err(wrap)?]
                }
                NodeKind::Select => {
                    let items = args[0].as_list().map_err(wrap)?;
                    vec![items
                        .first()
                        .cloned()
                        .ok_or(ExecError::Node { node: id, msg: "select on empty list".into() })?]
                }
                NodeKind::Cons => {
                    let mut items = vec![args[0].clone()];
                    items.extend(args[1].as_list().map_err(wrap)?.iter().cloned());
                    vec![Value::List(items)]
                }
                NodeKind::Misc { name, outputs: descs, .. } => {
                    let f = self.misc.get(name).ok_or_else(|| ExecError::UnregisteredMisc(name.clone()))?;
                    let owned: Vec<Value> = args.iter().map(|v| (*v).clone()).collect();
                    let out = f(&owned).map_err(|msg| ExecError::Node { node: id, msg })?;
                    if out.len() != descs.len() {
                        return Err(ExecError::Node { node: id, msg: "misc executor returned wrong arity".into() });
                    }
                    out
                }
                NodeKind::Map(m) => {
                    let count = ctx.binding.count(&m.dim)?;
                    let start = match m.range {
                        MapRange::All => 0,
                        MapRange::Tail => 1,
                    };
                    for (port, (mode, v)) in m.inputs.iter().zip(&args).enumerate() {
                        if *mode == PortMode::Iterate {
                            let len = v.as_list().map_err(wrap)?.len();
                            if len != count {
                                return Err(ExecError::Node {
                                    node: id,
                                    msg: format!("port {port} list has {len} items, {} is bound to {count}", m.dim),
                                });
                            }
                        }
                    }
                    let mut acc: Vec<Value> = m
                        .outputs
                        .iter()
                        .map(|o| match o {
                            OutMode::Collect => Value::List(Vec::new()),
                            OutMode::Reduce(_) => Value::Zero,
                        })
                        .collect();
                    for i in start..count {
                        let inner: Vec<Value> = m
                            .inputs
                            .iter()
                            .zip(&args)
                            .map(|(mode, v)| match (mode, v) {
                                (PortMode::Iterate, Value::List(items)) => items[i].clone(),
                                _ => (*v).clone(),
                            })
                            .collect();
                        let (ys, _) = self.run_graph(&m.body, &inner, ctx)?;
                        for ((slot, mode), y) in acc.iter_mut().zip(&m.outputs).zip(ys) {
                            match (mode, slot) {
                                (OutMode::Collect, Value::List(items)) => items.push(y),
                                (OutMode::Reduce(_), slot) => *slot = slot.add(&y).map_err(wrap)?,
                                _ => unreachable!(),
                            }
                        }
                    }
                    acc
                }
            };
            for (port, v) in results.into_iter().enumerate() {
                env.insert(PortRef::new(id, port), v);
            }
        }
        let n = yields.len();
        let ys: Vec<Value> = yields.into_values().collect();
        debug_assert_eq!(ys.len(), n);
        Ok((ys, outputs))
    }
}

fn eval_func(op: &FuncOp, args: &[&Value], binding: &DimBinding) -> Result<Value, ExecError> {
    let shape = |m: String| ExecError::Shape(m);
    Ok(match op {
        FuncOp::Add => args[0].add(args[1])?,
        FuncOp::Mul => Value::zip_map(args, |x| x[0] * x[1])?,
        FuncOp::RowShift | FuncOp::RowScale => {
            let x = args[0].as_block()?;
            let v = args[1].as_vector()?;
            if v.len() != x.nrows() {
                return Err(shape(format!("row vector of {} for {} rows", v.len(), x.nrows())));
            }
            let col = v.view().insert_axis(Axis(1));
            Value::Block(if matches!(op, FuncOp::RowShift) { x + &col } else { x * &col })
        }
        FuncOp::RowSum => Value::Vector(args[0].as_block()?.sum_axis(Axis(1))),
        FuncOp::Dot => {
            let (a, b) = (args[0].as_block()?, args[1].as_block()?);
            if a.ncols() != b.ncols() {
                return Err(shape(format!("dot of {:?} with {:?}", a.dim(), b.dim())));
            }
            Value::Block(a.dot(&b.t()))
        }
        FuncOp::Outer => {
            let (a, b) = (args[0].as_vector()?, args[1].as_vector()?);
            Value::Block(outer(a, b))
        }
        FuncOp::Elementwise { expr, .. } => {
            let ext = binding.extents_for(expr)?;
            Value::zip_map(args, |x| expr.eval(x, &ext))?
        }
    })
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

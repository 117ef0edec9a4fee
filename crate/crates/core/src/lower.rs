//! Array programs and their lowering into unfused block programs.
//!
//! Every array operator is replaced by a fixed block-graph template. All
//! values passed between templates are blocked matrices in global memory.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interp::{reference, ExecError};
use crate::ir::{
    BlockProgram, DimSym, FuncOp, GraphError, NodeKind, OutMode, PortMode, PortRef, ScalarExpr, ValueDesc,
};

/// Whole-matrix operator kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ArrayOpKind {
    /// `expr` applied to every element; `Var(i)` is argument i.
    Elementwise {
        expr: ScalarExpr,
    },
    /// `a · b`. The right operand must be a program input; it is stored
    /// transposed in the block program.
    Matmul,
    Softmax,
    /// Row normalization to zero mean and unit deviation, no affine part.
    Layernorm,
    Rmsnorm {
        #[serde(default)]
        eps: f64,
    },
    Hadamard,
    /// Any operator without a template. Output has the shape of argument 0.
    Misc {
        name: String,
    },
}

impl ArrayOpKind {
    pub fn elementwise(expr: ScalarExpr) -> Self {
        ArrayOpKind::Elementwise { expr }
    }

    pub fn divide_by(c: ScalarExpr) -> Self {
        Self::elementwise(ScalarExpr::divide_by(c))
    }

    pub fn swish() -> Self {
        Self::elementwise(ScalarExpr::swish())
    }

    pub fn name(&self) -> String {
        match self {
            ArrayOpKind::Elementwise { expr } => format!("elementwise({expr})"),
            ArrayOpKind::Matmul => "matmul".into(),
            ArrayOpKind::Softmax => "softmax".into(),
            ArrayOpKind::Layernorm => "layernorm".into(),
            ArrayOpKind::Rmsnorm { .. } => "rmsnorm".into(),
            ArrayOpKind::Hadamard => "hadamard".into(),
            ArrayOpKind::Misc { name } => name.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum ArrayNode {
    /// A `rows` x `cols` matrix. `transposed` requests transposed storage;
    /// lowering also sets it for every right matmul operand.
    Input {
        name: String,
        rows: DimSym,
        cols: DimSym,
        #[serde(default)]
        transposed: bool,
    },
    Op {
        #[serde(flatten)]
        op: ArrayOpKind,
        args: Vec<usize>,
    },
    Output {
        name: String,
        src: usize,
    },
}

/// Operator DAG over whole matrices. Edges are node indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ArrayProgram {
    pub nodes: Vec<ArrayNode>,
}

#[derive(Debug, Error)]
pub enum LowerError {
    #[error("node {node} refers to missing node {target}")]
    Dangling { node: usize, target: usize },
    #[error("node {0} refers to an output node")]
    ReadsOutput(usize),
    #[error("array program has a cycle through node {0}")]
    Cycle(usize),
    #[error("node {node} ({op}): {msg}")]
    Shape { node: usize, op: String, msg: String },
    #[error("input {0:?}: {1}")]
    Transpose(String, String),
    #[error("name {0:?} used twice")]
    DuplicateName(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

impl ArrayProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn input(&mut self, name: &str, rows: &str, cols: &str) -> usize {
        self.nodes.push(ArrayNode::Input {
            name: name.into(),
            rows: rows.into(),
            cols: cols.into(),
            transposed: false,
        });
        self.nodes.len() - 1
    }

    pub fn op(&mut self, op: ArrayOpKind, args: &[usize]) -> usize {
        self.nodes.push(ArrayNode::Op { op, args: args.to_vec() });
        self.nodes.len() - 1
    }

    pub fn output(&mut self, name: &str, src: usize) -> usize {
        self.nodes.push(ArrayNode::Output { name: name.into(), src });
        self.nodes.len() - 1
    }

    fn args(&self, i: usize) -> Vec<usize> {
        match &self.nodes[i] {
            ArrayNode::Input { .. } => vec![],
            ArrayNode::Op { args, .. } => args.clone(),
            ArrayNode::Output { src, .. } => vec![*src],
        }
    }

    /// Node indices with every argument before its user.
    pub fn topological_order(&self) -> Result<Vec<usize>, LowerError> {
        let n = self.nodes.len();
        let mut names = BTreeSet::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let ArrayNode::Input { name, .. } | ArrayNode::Output { name, .. } = node {
                if !names.insert(name.clone()) {
                    return Err(LowerError::DuplicateName(name.clone()));
                }
            }
            for a in self.args(i) {
                if a >= n {
                    return Err(LowerError::Dangling { node: i, target: a });
                }
                if matches!(self.nodes[a], ArrayNode::Output { .. }) {
                    return Err(LowerError::ReadsOutput(i));
                }
            }
        }
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; n];
        let mut order = Vec::with_capacity(n);
        for root in 0..n {
            if state[root] != 0 {
                continue;
            }
            let mut stack = vec![(root, 0usize)];
            state[root] = 1;
            while let Some((v, k)) = stack.pop() {
                let args = self.args(v);
                if k < args.len() {
                    stack.push((v, k + 1));
                    let a = args[k];
                    match state[a] {
                        0 => {
                            state[a] = 1;
                            stack.push((a, 0));
                        }
                        1 => return Err(LowerError::Cycle(a)),
                        _ => {}
                    }
                } else {
                    state[v] = 2;
                    order.push(v);
                }
            }
        }
        Ok(order)
    }

    /// (rows, cols) of every non-output node.
    pub fn shapes(&self) -> Result<BTreeMap<usize, (DimSym, DimSym)>, LowerError> {
        let mut shapes: BTreeMap<usize, (DimSym, DimSym)> = BTreeMap::new();
        for i in self.topological_order()? {
            let shape = match &self.nodes[i] {
                ArrayNode::Input { rows, cols, .. } => (rows.clone(), cols.clone()),
                ArrayNode::Output { .. } => continue,
                ArrayNode::Op { op, args } => {
                    let ins: Vec<&(DimSym, DimSym)> = args.iter().map(|a| &shapes[a]).collect();
                    op_shape(op, &ins).map_err(|msg| LowerError::Shape { node: i, op: op.name(), msg })?
                }
            };
            shapes.insert(i, shape);
        }
        Ok(shapes)
    }

    /// Names of inputs stored transposed in the lowered program.
    pub fn transposed_inputs(&self) -> Result<BTreeSet<String>, LowerError> {
        let mut right = BTreeSet::new();
        let mut other = BTreeSet::new();
        for node in &self.nodes {
            match node {
                ArrayNode::Op { op: ArrayOpKind::Matmul, args } if args.len() == 2 => {
                    other.insert(args[0]);
                    right.insert(args[1]);
                }
                ArrayNode::Op { args, .. } => other.extend(args.iter().copied()),
                ArrayNode::Output { src, .. } => {
                    other.insert(*src);
                }
                ArrayNode::Input { .. } => {}
            }
        }
        let mut out = BTreeSet::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let is_right = right.contains(&i);
            match node {
                ArrayNode::Input { name, transposed, .. } => {
                    if is_right && other.contains(&i) {
                        return Err(LowerError::Transpose(
                            name.clone(),
                            "used both as a right matmul operand and elsewhere".into(),
                        ));
                    }
                    if *transposed && !is_right {
                        return Err(LowerError::Transpose(
                            name.clone(),
                            "transposed storage is only supported for right matmul operands".into(),
                        ));
                    }
                    if is_right {
                        out.insert(name.clone());
                    }
                }
                _ if is_right => {
                    return Err(LowerError::Shape {
                        node: i,
                        op: "matmul".into(),
                        msg: "right operand must be a program input".into(),
                    })
                }
                _ => {}
            }
        }
        Ok(out)
    }

    /// Map from dimension to its element count, read off concrete inputs.
    pub fn extents(&self, inputs: &BTreeMap<String, Array2<f64>>) -> Result<BTreeMap<DimSym, usize>, LowerError> {
        let mut ext = BTreeMap::new();
        for node in &self.nodes {
            if let ArrayNode::Input { name, rows, cols, .. } = node {
                let m = inputs.get(name).ok_or_else(|| ExecError::MissingInput(name.clone()))?;
                for (d, n) in [(rows, m.nrows()), (cols, m.ncols())] {
                    if let Some(prev) = ext.insert(d.clone(), n) {
                        if prev != n {
                            return Err(ExecError::Shape(format!("dimension {d} is both {prev} and {n}")).into());
                        }
                    }
                }
            }
        }
        Ok(ext)
    }

    /// Dense evaluation on logical (untransposed) input matrices.
    pub fn evaluate(
        &self,
        inputs: &BTreeMap<String, Array2<f64>>,
    ) -> Result<BTreeMap<String, Array2<f64>>, LowerError> {
        let ext: BTreeMap<DimSym, f64> = self.extents(inputs)?.into_iter().map(|(d, n)| (d, n as f64)).collect();
        let mut vals: BTreeMap<usize, Array2<f64>> = BTreeMap::new();
        let mut out = BTreeMap::new();
        for i in self.topological_order()? {
            match &self.nodes[i] {
                ArrayNode::Input { name, .. } => {
                    vals.insert(i, inputs[name].clone());
                }
                ArrayNode::Output { name, src } => {
                    out.insert(name.clone(), vals[src].clone());
                }
                ArrayNode::Op { op, args } => {
                    let a: Vec<&Array2<f64>> = args.iter().map(|j| &vals[j]).collect();
                    let v = eval_op(op, &a, &ext).map_err(|e| match e {
                        ExecError::Shape(msg) => LowerError::Shape { node: i, op: op.name(), msg },
                        other => other.into(),
                    })?;
                    vals.insert(i, v);
                }
            }
        }
        Ok(out)
    }

    /// Stored input matrices for the lowered program: logical inputs with
    /// the right matmul operands transposed.
    pub fn block_inputs(
        &self,
        logical: &BTreeMap<String, Array2<f64>>,
    ) -> Result<BTreeMap<String, Array2<f64>>, LowerError> {
        let t = self.transposed_inputs()?;
        Ok(logical.iter().map(|(k, m)| (k.clone(), if t.contains(k) { m.t().to_owned() } else { m.clone() })).collect())
    }
}

fn op_shape(op: &ArrayOpKind, ins: &[&(DimSym, DimSym)]) -> Result<(DimSym, DimSym), String> {
    let unary = |n: usize| -> Result<(), String> {
        if ins.len() == n {
            Ok(())
        } else {
            Err(format!("expects {n} arguments, got {}", ins.len()))
        }
    };
    match op {
        ArrayOpKind::Matmul => {
            unary(2)?;
            if ins[0].1 != ins[1].0 {
                return Err(format!("inner dimensions differ ({} vs {})", ins[0].1, ins[1].0));
            }
            Ok((ins[0].0.clone(), ins[1].1.clone()))
        }
        ArrayOpKind::Softmax | ArrayOpKind::Layernorm | ArrayOpKind::Rmsnorm { .. } => {
            unary(1)?;
            Ok(ins[0].clone())
        }
        ArrayOpKind::Hadamard | ArrayOpKind::Elementwise { .. } => {
            if let ArrayOpKind::Elementwise { expr } = op {
                if expr.arity().max(1) != ins.len() {
                    return Err(format!("expression {expr} needs {} arguments, got {}", expr.arity(), ins.len()));
                }
            } else {
                unary(2)?;
            }
            if ins.iter().any(|s| s != &ins[0]) {
                return Err("argument shapes differ".into());
            }
            Ok(ins[0].clone())
        }
        ArrayOpKind::Misc { .. } => ins.first().map(|s| (*s).clone()).ok_or_else(|| "needs an argument".into()),
    }
}

fn eval_op(op: &ArrayOpKind, a: &[&Array2<f64>], ext: &BTreeMap<DimSym, f64>) -> Result<Array2<f64>, ExecError> {
    Ok(match op {
        ArrayOpKind::Elementwise { expr } => {
            let mut out = a[0].clone();
            for (idx, v) in out.indexed_iter_mut() {
                let args: Vec<f64> = a.iter().map(|m| m[idx]).collect();
                *v = expr.eval(&args, ext);
            }
            out
        }
        ArrayOpKind::Matmul => reference::matmul(a[0], a[1])?,
        ArrayOpKind::Softmax => reference::softmax_rows(a[0]),
        ArrayOpKind::Layernorm => reference::layernorm_rows(a[0]),
        ArrayOpKind::Rmsnorm { eps } => reference::rmsnorm_rows(a[0], *eps),
        ArrayOpKind::Hadamard => reference::hadamard(a[0], a[1])?,
        ArrayOpKind::Misc { name } => return Err(ExecError::UnregisteredMisc(name.clone())),
    })
}

/// A blocked matrix flowing between templates: `list[rows][cols]` of
/// `Block(rows, cols)`.
#[derive(Debug, Clone)]
struct Blocked {
    port: PortRef,
    rows: DimSym,
    cols: DimSym,
}

/// Per-operator block-graph builder.
#[derive(Debug, Clone, PartialEq)]
pub enum Template {
    Elementwise(ScalarExpr),
    Matmul,
    Softmax,
    Layernorm,
    Rmsnorm { eps: f64 },
    Hadamard,
    Misc(String),
}

pub fn template_for(kind: &ArrayOpKind) -> Template {
    match kind {
        ArrayOpKind::Elementwise { expr } => Template::Elementwise(expr.clone()),
        ArrayOpKind::Matmul => Template::Matmul,
        ArrayOpKind::Softmax => Template::Softmax,
        ArrayOpKind::Layernorm => Template::Layernorm,
        ArrayOpKind::Rmsnorm { eps } => Template::Rmsnorm { eps: *eps },
        ArrayOpKind::Hadamard => Template::Hadamard,
        ArrayOpKind::Misc { name } => Template::Misc(name.clone()),
    }
}

type R<T> = Result<T, GraphError>;

/// R-map{ C-map{ op(args...) } } over same-shaped blocked matrices.
fn blockwise(p: &mut BlockProgram, op: FuncOp, args: &[&Blocked]) -> R<PortRef> {
    let (rows, cols) = (args[0].rows.clone(), args[0].cols.clone());
    let outer: Vec<(PortRef, PortMode)> = args.iter().map(|a| (a.port, PortMode::Iterate)).collect();
    let m = p.add_map(&[], rows, &outer, |p, path, params| {
        let inner: Vec<(PortRef, PortMode)> = params.iter().map(|q| (*q, PortMode::Iterate)).collect();
        let c = p.add_map(path, cols, &inner, |p, path, params| {
            Ok(vec![(p.add_func(path, op, params)?, OutMode::Collect)])
        })?;
        Ok(vec![(PortRef::new(c, 0), OutMode::Collect)])
    })?;
    Ok(PortRef::new(m, 0))
}

/// Per block row, the row sums of `x` as a `list[rows]` of `Vector(rows)`.
fn row_sums(p: &mut BlockProgram, x: &Blocked) -> R<PortRef> {
    let cols = x.cols.clone();
    let m = p.add_map(&[], x.rows.clone(), &[(x.port, PortMode::Iterate)], |p, path, params| {
        let c = p.add_map(path, cols, &[(params[0], PortMode::Iterate)], |p, path, params| {
            Ok(vec![(p.add_func(path, FuncOp::RowSum, &[params[0]])?, OutMode::Collect)])
        })?;
        let s = p.add_reduce(path, PortRef::new(c, 0))?;
        Ok(vec![(s, OutMode::Collect)])
    })?;
    Ok(PortRef::new(m, 0))
}

/// R-map{ expr(vectors...) } over `list[rows]` of row vectors.
fn per_row(p: &mut BlockProgram, rows: &DimSym, expr: ScalarExpr, vecs: &[PortRef]) -> R<PortRef> {
    let ins: Vec<(PortRef, PortMode)> = vecs.iter().map(|v| (*v, PortMode::Iterate)).collect();
    let m = p.add_map(&[], rows.clone(), &ins, |p, path, params| {
        Ok(vec![(p.add_func(path, FuncOp::elementwise(expr), params)?, OutMode::Collect)])
    })?;
    Ok(PortRef::new(m, 0))
}

/// R-map{ C-map{ op(x, v) } } with a per-row vector `v` broadcast over columns.
fn row_apply(p: &mut BlockProgram, op: FuncOp, x: &Blocked, v: PortRef) -> R<PortRef> {
    let cols = x.cols.clone();
    let m =
        p.add_map(&[], x.rows.clone(), &[(x.port, PortMode::Iterate), (v, PortMode::Iterate)], |p, path, params| {
            let c = p.add_map(
                path,
                cols,
                &[(params[0], PortMode::Iterate), (params[1], PortMode::Broadcast)],
                |p, path, params| Ok(vec![(p.add_func(path, op, params)?, OutMode::Collect)]),
            )?;
            Ok(vec![(PortRef::new(c, 0), OutMode::Collect)])
        })?;
    Ok(PortRef::new(m, 0))
}

impl Template {
    pub fn name(&self) -> &str {
        match self {
            Template::Elementwise(_) => "elementwise",
            Template::Matmul => "matmul",
            Template::Softmax => "softmax",
            Template::Layernorm => "layernorm",
            Template::Rmsnorm { .. } => "rmsnorm",
            Template::Hadamard => "hadamard",
            Template::Misc(name) => name,
        }
    }

    /// Emit the fragment at the top level of `p`. For `Matmul`, `args[1]`
    /// is the transposed right operand, blocked as `list[cols][inner]`.
    fn build(&self, p: &mut BlockProgram, args: &[Blocked]) -> R<Blocked> {
        let x = &args[0];
        let same = |port| Blocked { port, rows: x.rows.clone(), cols: x.cols.clone() };
        Ok(match self {
            Template::Elementwise(expr) => {
                same(blockwise(p, FuncOp::elementwise(expr.clone()), &args.iter().collect::<Vec<_>>())?)
            }
            Template::Hadamard => same(blockwise(p, FuncOp::Mul, &[&args[0], &args[1]])?),
            Template::Matmul => {
                let bt = &args[1];
                let (inner, out_cols) = (x.cols.clone(), bt.rows.clone());
                let oc = out_cols.clone();
                let m = p.add_map(
                    &[],
                    x.rows.clone(),
                    &[(x.port, PortMode::Iterate), (bt.port, PortMode::Broadcast)],
                    |p, path, params| {
                        let n = p.add_map(
                            path,
                            oc,
                            &[(params[0], PortMode::Broadcast), (params[1], PortMode::Iterate)],
                            |p, path, params| {
                                let k = p.add_map(
                                    path,
                                    inner,
                                    &[(params[0], PortMode::Iterate), (params[1], PortMode::Iterate)],
                                    |p, path, params| {
                                        Ok(vec![(p.add_func(path, FuncOp::Dot, params)?, OutMode::Collect)])
                                    },
                                )?;
                                let s = p.add_reduce(path, PortRef::new(k, 0))?;
                                Ok(vec![(s, OutMode::Collect)])
                            },
                        )?;
                        Ok(vec![(PortRef::new(n, 0), OutMode::Collect)])
                    },
                )?;
                Blocked { port: PortRef::new(m, 0), rows: x.rows.clone(), cols: out_cols }
            }
            Template::Softmax => {
                let e = same(blockwise(p, FuncOp::elementwise(ScalarExpr::x().exp()), &[x])?);
                let s = row_sums(p, &e)?;
                let c = per_row(p, &x.rows, ScalarExpr::x().recip(), &[s])?;
                same(row_apply(p, FuncOp::RowScale, &e, c)?)
            }
            Template::Layernorm => {
                let k = || ScalarExpr::extent(x.cols.clone());
                let s1 = row_sums(p, x)?;
                let sq = same(blockwise(p, FuncOp::elementwise(ScalarExpr::x().square()), &[x])?);
                let s2 = row_sums(p, &sq)?;
                let negmean = per_row(p, &x.rows, ScalarExpr::x().div(k()).neg(), &[s1])?;
                // 1 / sqrt(s2/k - (s1/k)^2), with s1 as var 0 and s2 as var 1
                let var = ScalarExpr::var(1).div(k()).sub(ScalarExpr::var(0).div(k()).square());
                let invstd = per_row(p, &x.rows, var.sqrt().recip(), &[s1, s2])?;
                let shifted = same(row_apply(p, FuncOp::RowShift, x, negmean)?);
                same(row_apply(p, FuncOp::RowScale, &shifted, invstd)?)
            }
            Template::Rmsnorm { eps } => {
                let sq = same(blockwise(p, FuncOp::elementwise(ScalarExpr::x().square()), &[x])?);
                let s = row_sums(p, &sq)?;
                let mean = ScalarExpr::x().div(ScalarExpr::extent(x.cols.clone()));
                let expr = if *eps == 0.0 { mean } else { mean.add(ScalarExpr::constant(*eps)) };
                let inv = per_row(p, &x.rows, expr.sqrt().recip(), &[s])?;
                same(row_apply(p, FuncOp::RowScale, x, inv)?)
            }
            Template::Misc(name) => {
                let desc = ValueDesc::blocked_matrix(x.rows.clone(), x.cols.clone());
                let kind = NodeKind::Misc { name: name.clone(), inputs: args.len(), outputs: vec![desc] };
                let ports: Vec<PortRef> = args.iter().map(|a| a.port).collect();
                same(PortRef::new(p.add_op(&[], kind, &ports)?, 0))
            }
        })
    }
}

/// Lower an array program into an unfused block program.
pub fn lower(ap: &ArrayProgram) -> Result<BlockProgram, LowerError> {
    let order = ap.topological_order()?;
    let shapes = ap.shapes()?;
    let transposed = ap.transposed_inputs()?;
    let mut p = BlockProgram::new();
    let mut vals: BTreeMap<usize, Blocked> = BTreeMap::new();
    for &i in &order {
        if let ArrayNode::Input { name, rows, cols, .. } = &ap.nodes[i] {
            let (rows, cols) = if transposed.contains(name) { (cols, rows) } else { (rows, cols) };
            let desc = ValueDesc::blocked_matrix(rows.clone(), cols.clone());
            let port = p.add_input(name, desc, transposed.contains(name));
            vals.insert(i, Blocked { port, rows: rows.clone(), cols: cols.clone() });
        }
    }
    for &i in &order {
        match &ap.nodes[i] {
            ArrayNode::Input { .. } => {}
            ArrayNode::Op { op, args } => {
                let a: Vec<Blocked> = args.iter().map(|j| vals[j].clone()).collect();
                let out = template_for(op).build(&mut p, &a)?;
                debug_assert_eq!((&out.rows, &out.cols), (&shapes[&i].0, &shapes[&i].1));
                vals.insert(i, out);
            }
            ArrayNode::Output { name, src } => {
                p.add_output(name, vals[src].port)?;
            }
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::validate_program;

    #[test]
    fn dangling_reference() {
        let mut ap = ArrayProgram::new();
        ap.op(ArrayOpKind::Softmax, &[5]);
        assert!(matches!(lower(&ap), Err(LowerError::Dangling { .. })));
    }

    #[test]
    fn cycle_detected() {
        let ap = ArrayProgram {
            nodes: vec![
                ArrayNode::Op { op: ArrayOpKind::Softmax, args: vec![1] },
                ArrayNode::Op { op: ArrayOpKind::Softmax, args: vec![0] },
            ],
        };
        assert!(matches!(ap.topological_order(), Err(LowerError::Cycle(_))));
    }

    #[test]
    fn input_wired_to_output() {
        let mut ap = ArrayProgram::new();
        let x = ap.input("X", "M", "N");
        ap.output("Y", x);
        let p = lower(&ap).unwrap();
        assert_eq!(p.graph.nodes.len(), 2);
        assert!(validate_program(&p).is_empty());
    }

    #[test]
    fn right_operand_must_be_input() {
        let mut ap = ArrayProgram::new();
        let a = ap.input("A", "M", "K");
        let b = ap.input("B", "K", "N");
        let s = ap.op(ArrayOpKind::Softmax, &[b]);
        let c = ap.op(ArrayOpKind::Matmul, &[a, s]);
        ap.output("C", c);
        assert!(matches!(lower(&ap), Err(LowerError::Shape { .. })));
    }

    #[test]
    fn shared_right_operand_rejected() {
        let mut ap = ArrayProgram::new();
        let a = ap.input("A", "M", "M");
        let c = ap.op(ArrayOpKind::Matmul, &[a, a]);
        ap.output("C", c);
        assert!(matches!(lower(&ap), Err(LowerError::Transpose(..))));
    }

    #[test]
    fn matmul_inner_dims_must_agree() {
        let mut ap = ArrayProgram::new();
        let a = ap.input("A", "M", "K");
        let b = ap.input("B", "J", "N");
        let c = ap.op(ArrayOpKind::Matmul, &[a, b]);
        ap.output("C", c);
        assert!(matches!(lower(&ap), Err(LowerError::Shape { .. })));
    }

    #[test]
    fn serde_shape() {
        let mut ap = ArrayProgram::new();
        let x = ap.input("X", "M", "N");
        let y = ap.op(ArrayOpKind::Rmsnorm { eps: 0.0 }, &[x]);
        ap.output("Y", y);
        let s = serde_json::to_string(&ap).unwrap();
        assert!(s.contains(r#""node":"op","op":"rmsnorm""#), "{s}");
        assert_eq!(serde_json::from_str::<ArrayProgram>(&s).unwrap(), ap);
    }
}

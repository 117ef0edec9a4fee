use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2};

use super::ExecError;
use crate::ir::{Base, DimSym, ScalarExpr, ValueDesc};

/// Runtime value. Lists nest exactly as deep as the edge's list dims.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Scalar(f64),
    Vector(Array1<f64>),
    Block(Array2<f64>),
    List(Vec<Value>),
    /// Additive identity of any shape; the result of an empty reduction.
    Zero,
}

impl Value {
    pub fn as_block(&self) -> Result<&Array2<f64>, ExecError> {
        match self {
            Value::Block(b) => Ok(b),
            other => Err(ExecError::Shape(format!("expected a block, got {}", other.kind_name()))),
        }
    }

    pub fn as_vector(&self) -> Result<&Array1<f64>, ExecError> {
        match self {
            Value::Vector(v) => Ok(v),
            other => Err(ExecError::Shape(format!("expected a vector, got {}", other.kind_name()))),
        }
    }

    pub fn as_list(&self) -> Result<&[Value], ExecError> {
        match self {
            Value::List(v) => Ok(v),
            other => Err(ExecError::Shape(format!("expected a list, got {}", other.kind_name()))),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Value::Scalar(_) => "scalar",
            Value::Vector(_) => "vector",
            Value::Block(_) => "block",
            Value::List(_) => "list",
            Value::Zero => "zero",
        }
    }

    /// Elementwise sum; lists add item by item.
    pub fn add(&self, other: &Value) -> Result<Value, ExecError> {
        Ok(match (self, other) {
            (Value::Zero, v) | (v, Value::Zero) => v.clone(),
            (Value::Scalar(a), Value::Scalar(b)) => Value::Scalar(a + b),
            (Value::Vector(a), Value::Vector(b)) if a.len() == b.len() => Value::Vector(a + b),
            (Value::Block(a), Value::Block(b)) if a.dim() == b.dim() => Value::Block(a + b),
            (Value::List(a), Value::List(b)) if a.len() == b.len() => {
                Value::List(a.iter().zip(b).map(|(x, y)| x.add(y)).collect::<Result<_, _>>()?)
            }
            (a, b) => return Err(ExecError::Shape(format!("cannot add {} and {}", a.describe(), b.describe()))),
        })
    }

    pub fn describe(&self) -> String {
        match self {
            Value::Block(b) => format!("block{:?}", b.dim()),
            Value::Vector(v) => format!("vector({})", v.len()),
            Value::List(l) => format!("list({})", l.len()),
            other => other.kind_name().to_string(),
        }
    }

    /// Apply `f` to the flattened elements of same-shaped local values.
    pub fn zip_map(args: &[&Value], f: impl Fn(&[f64]) -> f64) -> Result<Value, ExecError> {
        let first = args.first().ok_or_else(|| ExecError::Shape("no elementwise inputs".into()))?;
        let flat: Vec<Vec<f64>> = args
            .iter()
            .map(|v| match v {
                Value::Scalar(x) => Ok(vec![*x]),
                Value::Vector(a) => Ok(a.iter().copied().collect()),
                Value::Block(a) => Ok(a.iter().copied().collect()),
                other => Err(ExecError::Shape(format!("elementwise on {}", other.kind_name()))),
            })
            .collect::<Result<_, _>>()?;
        let same_shape = args.iter().all(|v| match (v, first) {
            (Value::Scalar(_), Value::Scalar(_)) => true,
            (Value::Vector(a), Value::Vector(b)) => a.len() == b.len(),
            (Value::Block(a), Value::Block(b)) => a.dim() == b.dim(),
            _ => false,
        });
        if !same_shape {
            return Err(ExecError::Shape("elementwise inputs differ in shape".into()));
        }
        let n = flat[0].len();
        let mut buf = vec![0.0; args.len()];
        let out: Vec<f64> = (0..n)
            .map(|i| {
                for (slot, col) in buf.iter_mut().zip(&flat) {
                    *slot = col[i];
                }
                f(&buf)
            })
            .collect();
        Ok(match first {
            Value::Scalar(_) => Value::Scalar(out[0]),
            Value::Vector(_) => Value::Vector(Array1::from(out)),
            Value::Block(b) => Value::Block(Array2::from_shape_vec(b.dim(), out).expect("same shape")),
            _ => unreachable!(),
        })
    }

    /// Largest absolute element difference and largest |a-b| / max(|a|,|b|).
    pub fn compare(&self, other: &Value) -> Result<(f64, f64), ExecError> {
        match (self, other) {
            (Value::List(a), Value::List(b)) if a.len() == b.len() => {
                a.iter().zip(b).try_fold((0.0f64, 0.0f64), |acc, (x, y)| {
                    let (ab, rel) = x.compare(y)?;
                    Ok((acc.0.max(ab), acc.1.max(rel)))
                })
            }
            (a, b) => {
                let d = Value::zip_map(&[a, b], |xs| xs[0] - xs[1])?;
                let m = Value::zip_map(&[a, b], |xs| xs[0].abs().max(xs[1].abs()))?;
                let (dv, mv) = (flatten(&d), flatten(&m));
                let mut abs = 0.0f64;
                let mut rel = 0.0f64;
                for (e, s) in dv.iter().zip(&mv) {
                    let e = e.abs();
                    if e.is_nan() {
                        return Ok((f64::INFINITY, f64::INFINITY));
                    }
                    abs = abs.max(e);
                    if *s > 0.0 {
                        rel = rel.max(e / s);
                    }
                }
                Ok((abs, rel))
            }
        }
    }
}

fn flatten(v: &Value) -> Vec<f64> {
    match v {
        Value::Scalar(x) => vec![*x],
        Value::Vector(a) => a.to_vec(),
        Value::Block(a) => a.iter().copied().collect(),
        Value::List(l) => l.iter().flat_map(flatten).collect(),
        Value::Zero => vec![],
    }
}

/// Block counts per dimension plus block edge lengths.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DimBinding {
    pub counts: BTreeMap<DimSym, usize>,
    pub edges: BTreeMap<DimSym, usize>,
    /// Edge length for dims without an explicit entry in `edges`.
    pub default_edge: Option<usize>,
}

impl DimBinding {
    pub fn new() -> Self {
        Self::default()
    }

    /// Bind `dims` to block counts, all blocks `edge` elements long.
    pub fn uniform(dims: &[(&str, usize)], edge: usize) -> Self {
        DimBinding {
            counts: dims.iter().map(|(d, n)| (DimSym::from(*d), *n)).collect(),
            edges: BTreeMap::new(),
            default_edge: Some(edge),
        }
    }

    pub fn with_count(mut self, dim: &str, count: usize) -> Self {
        self.counts.insert(DimSym::from(dim), count);
        self
    }

    pub fn with_edge(mut self, dim: &str, edge: usize) -> Self {
        self.edges.insert(DimSym::from(dim), edge);
        self
    }

    pub fn count(&self, dim: &DimSym) -> Result<usize, ExecError> {
        match self.counts.get(dim) {
            Some(0) => Err(ExecError::Shape(format!("dimension {dim} bound to zero blocks"))),
            Some(n) => Ok(*n),
            None => Err(ExecError::UnboundDim(dim.clone())),
        }
    }

    pub fn edge(&self, dim: &DimSym) -> Result<usize, ExecError> {
        self.edges.get(dim).copied().or(self.default_edge).ok_or_else(|| ExecError::UnboundDim(dim.clone()))
    }

    /// Total elements along `dim`.
    pub fn extent(&self, dim: &DimSym) -> Result<usize, ExecError> {
        Ok(self.count(dim)? * self.edge(dim)?)
    }

    pub fn extents_for(&self, expr: &ScalarExpr) -> Result<BTreeMap<DimSym, f64>, ExecError> {
        expr.extents().into_iter().map(|d| Ok((d.clone(), self.extent(&d)? as f64))).collect()
    }

    /// Number of f64 elements in a value of the given type.
    pub fn element_count(&self, desc: &ValueDesc) -> Result<usize, ExecError> {
        let base = match &desc.base {
            Base::Scalar => 1,
            Base::Vector(d) => self.edge(d)?,
            Base::Block(r, c) => self.edge(r)? * self.edge(c)?,
        };
        desc.lists.iter().try_fold(base, |acc, d| Ok(acc * self.count(d)?))
    }

    /// Dense matrix shape of a program input or output of type `desc`.
    pub fn matrix_shape(&self, desc: &ValueDesc) -> Result<(usize, usize), ExecError> {
        let unsupported = || ExecError::Shape(format!("no matrix layout for {desc}"));
        match &desc.base {
            Base::Block(r, c) => {
                let rows = if desc.lists.first() == Some(r) { self.extent(r)? } else { self.edge(r)? };
                let cols = if desc.lists.contains(c) { self.extent(c)? } else { self.edge(c)? };
                match desc.lists.as_slice() {
                    [] => {}
                    [a] if a == r => {}
                    [a, b] if a == r && b == c => {}
                    _ => return Err(unsupported()),
                }
                Ok((rows, cols))
            }
            Base::Vector(r) => match desc.lists.as_slice() {
                [] => Ok((self.edge(r)?, 1)),
                [a] if a == r => Ok((self.extent(r)?, 1)),
                _ => Err(unsupported()),
            },
            Base::Scalar if desc.lists.is_empty() => Ok((1, 1)),
            Base::Scalar => Err(unsupported()),
        }
    }

    /// Split a dense matrix into the runtime value of type `desc`.
    pub fn to_value(&self, desc: &ValueDesc, m: &Array2<f64>) -> Result<Value, ExecError> {
        let shape = self.matrix_shape(desc)?;
        if m.dim() != shape {
            return Err(ExecError::Shape(format!("matrix is {:?}, {desc} needs {:?}", m.dim(), shape)));
        }
        Ok(match (&desc.base, desc.lists.len()) {
            (Base::Block(..), 0) => Value::Block(m.clone()),
            (Base::Block(r, _), 1) => {
                let blocks = split_into_blocks(m, self.count(r)?, 1)?;
                Value::List(blocks.into_iter().map(|mut row| Value::Block(row.remove(0))).collect())
            }
            (Base::Block(r, c), _) => {
                let blocks = split_into_blocks(m, self.count(r)?, self.count(c)?)?;
                Value::List(
                    blocks.into_iter().map(|row| Value::List(row.into_iter().map(Value::Block).collect())).collect(),
                )
            }
            (Base::Vector(_), 0) => Value::Vector(m.column(0).to_owned()),
            (Base::Vector(r), _) => {
                let blocks = split_into_blocks(m, self.count(r)?, 1)?;
                Value::List(
                    blocks.into_iter().map(|mut row| Value::Vector(row.remove(0).column(0).to_owned())).collect(),
                )
            }
            (Base::Scalar, _) => Value::Scalar(m[[0, 0]]),
        })
    }

    /// Inverse of [`DimBinding::to_value`].
    pub fn to_matrix(&self, desc: &ValueDesc, v: &Value) -> Result<Array2<f64>, ExecError> {
        let col = |x: &Array1<f64>| x.clone().insert_axis(ndarray::Axis(1));
        let m = match (&desc.base, desc.lists.len(), v) {
            (Base::Block(..), 0, Value::Block(b)) => b.clone(),
            (Base::Block(..), 1, Value::List(rows)) => {
                let nested =
                    rows.iter().map(|b| Ok(vec![b.as_block()?.clone()])).collect::<Result<Vec<_>, ExecError>>()?;
                assemble(&nested)?
            }
            (Base::Block(..), 2, Value::List(rows)) => {
                let nested = rows
                    .iter()
                    .map(|row| row.as_list()?.iter().map(|b| Ok(b.as_block()?.clone())).collect())
                    .collect::<Result<Vec<Vec<_>>, ExecError>>()?;
                assemble(&nested)?
            }
            (Base::Vector(_), 0, Value::Vector(x)) => col(x),
            (Base::Vector(_), 1, Value::List(items)) => {
                let nested =
                    items.iter().map(|x| Ok(vec![col(x.as_vector()?)])).collect::<Result<Vec<_>, ExecError>>()?;
                assemble(&nested)?
            }
            (Base::Scalar, 0, Value::Scalar(x)) => Array2::from_elem((1, 1), *x),
            _ => return Err(ExecError::Shape(format!("value {} does not have type {desc}", v.describe()))),
        };
        let shape = self.matrix_shape(desc)?;
        if m.dim() != shape {
            return Err(ExecError::Shape(format!("assembled {:?}, expected {:?}", m.dim(), shape)));
        }
        Ok(m)
    }
}

/// Row-major list of lists of equal blocks.
pub fn split_into_blocks(
    m: &Array2<f64>,
    row_blocks: usize,
    col_blocks: usize,
) -> Result<Vec<Vec<Array2<f64>>>, ExecError> {
    let (rows, cols) = m.dim();
    if row_blocks == 0 || col_blocks == 0 || rows % row_blocks != 0 || cols % col_blocks != 0 {
        return Err(ExecError::NotDivisible { rows, cols, row_blocks, col_blocks });
    }
    let (br, bc) = (rows / row_blocks, cols / col_blocks);
    Ok((0..row_blocks)
        .map(|i| (0..col_blocks).map(|j| m.slice(s![i * br..(i + 1) * br, j * bc..(j + 1) * bc]).to_owned()).collect())
        .collect())
}

/// Concatenate a rectangular grid of blocks back into one matrix.
pub fn assemble(blocks: &[Vec<Array2<f64>>]) -> Result<Array2<f64>, ExecError> {
    let first =
        blocks.first().and_then(|r| r.first()).ok_or_else(|| ExecError::Shape("no blocks to assemble".into()))?;
    let (br, bc) = first.dim();
    let ncols = blocks[0].len();
    if blocks.iter().any(|r| r.len() != ncols) || blocks.iter().flatten().any(|b| b.dim() != (br, bc)) {
        return Err(ExecError::Shape("ragged block grid".into()));
    }
    let mut out = Array2::zeros((br * blocks.len(), bc * ncols));
    for (i, row) in blocks.iter().enumerate() {
        for (j, b) in row.iter().enumerate() {
            out.slice_mut(s![i * br..(i + 1) * br, j * bc..(j + 1) * bc]).assign(b);
        }
    }
    Ok(out)
}

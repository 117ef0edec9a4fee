//! Scalar expressions applied elementwise by `FuncOp::Elementwise`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::DimSym;

/// A pure scalar function of one or more positional variables.
///
/// `Var(i)` refers to the i'th input of the elementwise node. `Extent(d)`
/// is the total number of elements along dimension `d` (block count times
/// block edge length), resolved only when the program is interpreted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarExpr {
    Var(usize),
    Const(f64),
    Extent(DimSym),
    Neg(Box<ScalarExpr>),
    Add(Box<ScalarExpr>, Box<ScalarExpr>),
    Sub(Box<ScalarExpr>, Box<ScalarExpr>),
    Mul(Box<ScalarExpr>, Box<ScalarExpr>),
    Div(Box<ScalarExpr>, Box<ScalarExpr>),
    Exp(Box<ScalarExpr>),
    Sqrt(Box<ScalarExpr>),
    Recip(Box<ScalarExpr>),
    Square(Box<ScalarExpr>),
    Sigmoid(Box<ScalarExpr>),
    Relu(Box<ScalarExpr>),
}

impl ScalarExpr {
    pub fn x() -> Self {
        ScalarExpr::Var(0)
    }

    pub fn var(i: usize) -> Self {
        ScalarExpr::Var(i)
    }

    pub fn constant(c: f64) -> Self {
        ScalarExpr::Const(c)
    }

    pub fn extent(dim: impl Into<DimSym>) -> Self {
        ScalarExpr::Extent(dim.into())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, rhs: ScalarExpr) -> Self {
        ScalarExpr::Add(Box::new(self), Box::new(rhs))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, rhs: ScalarExpr) -> Self {
        ScalarExpr::Sub(Box::new(self), Box::new(rhs))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, rhs: ScalarExpr) -> Self {
        ScalarExpr::Mul(Box::new(self), Box::new(rhs))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn div(self, rhs: ScalarExpr) -> Self {
        ScalarExpr::Div(Box::new(self), Box::new(rhs))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(self) -> Self {
        ScalarExpr::Neg(Box::new(self))
    }

    pub fn exp(self) -> Self {
        ScalarExpr::Exp(Box::new(self))
    }

    pub fn sqrt(self) -> Self {
        ScalarExpr::Sqrt(Box::new(self))
    }

    pub fn recip(self) -> Self {
        ScalarExpr::Recip(Box::new(self))
    }

    pub fn square(self) -> Self {
        ScalarExpr::Square(Box::new(self))
    }

    pub fn sigmoid(self) -> Self {
        ScalarExpr::Sigmoid(Box::new(self))
    }

    pub fn relu(self) -> Self {
        ScalarExpr::Relu(Box::new(self))
    }

    /// `x * sigmoid(x)`
    pub fn swish() -> Self {
        Self::x().mul(Self::x().sigmoid())
    }

    /// `x / c`
    pub fn divide_by(c: ScalarExpr) -> Self {
        Self::x().div(c)
    }

    /// Number of positional variables the expression needs (max index + 1).
    pub fn arity(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |e| {
            if let ScalarExpr::Var(i) = e {
                n = n.max(i + 1);
            }
        });
        n
    }

    /// Dimensions referenced through `Extent`.
    pub fn extents(&self) -> Vec<DimSym> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let ScalarExpr::Extent(d) = e {
                if !out.contains(d) {
                    out.push(d.clone());
                }
            }
        });
        out
    }

    fn visit(&self, f: &mut impl FnMut(&ScalarExpr)) {
        f(self);
        match self {
            ScalarExpr::Var(_) | ScalarExpr::Const(_) | ScalarExpr::Extent(_) => {}
            ScalarExpr::Neg(a)
            | ScalarExpr::Exp(a)
            | ScalarExpr::Sqrt(a)
            | ScalarExpr::Recip(a)
            | ScalarExpr::Square(a)
            | ScalarExpr::Sigmoid(a)
            | ScalarExpr::Relu(a) => a.visit(f),
            ScalarExpr::Add(a, b) | ScalarExpr::Sub(a, b) | ScalarExpr::Mul(a, b) | ScalarExpr::Div(a, b) => {
                a.visit(f);
                b.visit(f);
            }
        }
    }

    /// Rewrite every variable through `f`.
    pub fn map_vars(&self, f: &impl Fn(usize) -> ScalarExpr) -> ScalarExpr {
        use ScalarExpr::*;
        let un = |a: &ScalarExpr| Box::new(a.map_vars(f));
        match self {
            Var(i) => f(*i),
            Const(c) => Const(*c),
            Extent(d) => Extent(d.clone()),
            Neg(a) => Neg(un(a)),
            Exp(a) => Exp(un(a)),
            Sqrt(a) => Sqrt(un(a)),
            Recip(a) => Recip(un(a)),
            Square(a) => Square(un(a)),
            Sigmoid(a) => Sigmoid(un(a)),
            Relu(a) => Relu(un(a)),
            Add(a, b) => Add(un(a), un(b)),
            Sub(a, b) => Sub(un(a), un(b)),
            Mul(a, b) => Mul(un(a), un(b)),
            Div(a, b) => Div(un(a), un(b)),
        }
    }

    /// Substitute `inner` for variable `slot` of `self`.
    ///
    /// Variables of `self` other than `slot` keep their relative order and
    /// come first; the variables of `inner` follow them.
    pub fn compose(&self, slot: usize, inner: &ScalarExpr) -> ScalarExpr {
        let outer_arity = self.arity().max(slot + 1);
        let base = outer_arity - 1;
        let shifted = inner.map_vars(&|j| ScalarExpr::Var(base + j));
        self.map_vars(&|i| {
            if i == slot {
                shifted.clone()
            } else if i < slot {
                ScalarExpr::Var(i)
            } else {
                ScalarExpr::Var(i - 1)
            }
        })
    }

    /// Evaluate with positional arguments and resolved dimension extents.
    pub fn eval(&self, args: &[f64], extents: &BTreeMap<DimSym, f64>) -> f64 {
        use ScalarExpr::*;
        match self {
            Var(i) => args[*i],
            Const(c) => *c,
            Extent(d) => extents.get(d).copied().unwrap_or(f64::NAN),
            Neg(a) => -a.eval(args, extents),
            Exp(a) => a.eval(args, extents).exp(),
            Sqrt(a) => a.eval(args, extents).sqrt(),
            Recip(a) => 1.0 / a.eval(args, extents),
            Square(a) => {
                let v = a.eval(args, extents);
                v * v
            }
            Sigmoid(a) => 1.0 / (1.0 + (-a.eval(args, extents)).exp()),
            Relu(a) => a.eval(args, extents).max(0.0),
            Add(a, b) => a.eval(args, extents) + b.eval(args, extents),
            Sub(a, b) => a.eval(args, extents) - b.eval(args, extents),
            Mul(a, b) => a.eval(args, extents) * b.eval(args, extents),
            Div(a, b) => a.eval(args, extents) / b.eval(args, extents),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            ScalarExpr::Add(..) | ScalarExpr::Sub(..) => 1,
            ScalarExpr::Mul(..) | ScalarExpr::Div(..) => 2,
            ScalarExpr::Neg(..) => 3,
            _ => 4,
        }
    }

    fn fmt_with(&self, f: &mut fmt::Formatter<'_>, parent: u8) -> fmt::Result {
        let own = self.precedence();
        let wrap = own < parent;
        if wrap {
            f.write_str("(")?;
        }
        match self {
            ScalarExpr::Var(0) => f.write_str("x")?,
            ScalarExpr::Var(i) => write!(f, "x{i}")?,
            ScalarExpr::Const(c) => write!(f, "{c}")?,
            ScalarExpr::Extent(d) => write!(f, "{d}")?,
            ScalarExpr::Neg(a) => {
                f.write_str("-")?;
                a.fmt_with(f, 4)?;
            }
            ScalarExpr::Add(a, b) | ScalarExpr::Sub(a, b) => {
                a.fmt_with(f, 1)?;
                f.write_str(if matches!(self, ScalarExpr::Add(..)) { " + " } else { " - " })?;
                b.fmt_with(f, 2)?;
            }
            ScalarExpr::Mul(a, b) | ScalarExpr::Div(a, b) => {
                a.fmt_with(f, 2)?;
                f.write_str(if matches!(self, ScalarExpr::Mul(..)) { " * " } else { " / " })?;
                b.fmt_with(f, 3)?;
            }
            ScalarExpr::Exp(a)
            | ScalarExpr::Sqrt(a)
            | ScalarExpr::Recip(a)
            | ScalarExpr::Square(a)
            | ScalarExpr::Sigmoid(a)
            | ScalarExpr::Relu(a) => {
                let name = match self {
                    ScalarExpr::Exp(_) => "exp",
                    ScalarExpr::Sqrt(_) => "sqrt",
                    ScalarExpr::Recip(_) => "recip",
                    ScalarExpr::Square(_) => "square",
                    ScalarExpr::Sigmoid(_) => "sigmoid",
                    _ => "relu",
                };
                write!(f, "{name}(")?;
                a.fmt_with(f, 0)?;
                f.write_str(")")?;
            }
        }
        if wrap {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_with(f, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_extents() -> BTreeMap<DimSym, f64> {
        BTreeMap::new()
    }

    #[test]
    fn compose_divide_then_exp() {
        let div = ScalarExpr::divide_by(ScalarExpr::extent("D").sqrt());
        let exp = ScalarExpr::x().exp();
        let fused = exp.compose(0, &div);
        assert_eq!(fused.to_string(), "exp(x / sqrt(D))");
        let mut ext = BTreeMap::new();
        ext.insert(DimSym::from("D"), 16.0);
        assert!((fused.eval(&[2.0], &ext) - (0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn compose_into_second_slot_renumbers() {
        // outer(a, b) = a - b, inner(c) = c * 2 substituted for b
        let outer = ScalarExpr::var(0).sub(ScalarExpr::var(1));
        let inner = ScalarExpr::x().mul(ScalarExpr::constant(2.0));
        let fused = outer.compose(1, &inner);
        assert_eq!(fused.arity(), 2);
        assert_eq!(fused.eval(&[5.0, 1.5], &no_extents()), 2.0);
        let fused0 = outer.compose(0, &inner);
        // remaining var b moves to slot 0, inner's var to slot 1
        assert_eq!(fused0.eval(&[1.0, 3.0], &no_extents()), 5.0);
    }

    #[test]
    fn swish_matches_definition() {
        let s = ScalarExpr::swish();
        let v: f64 = 0.7;
        assert!((s.eval(&[v], &no_extents()) - v / (1.0 + (-v).exp())).abs() < 1e-15);
        assert_eq!(s.arity(), 1);
    }

    #[test]
    fn display_parenthesises() {
        let e = ScalarExpr::x().sub(ScalarExpr::constant(1.0)).div(ScalarExpr::constant(2.0));
        assert_eq!(e.to_string(), "(x - 1) / 2");
    }
}

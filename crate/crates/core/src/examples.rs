//! Built-in array programs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::interp::{reference, ExecError};
use crate::ir::ScalarExpr;
use crate::lower::{ArrayOpKind, ArrayProgram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Example {
    /// `softmax(Q·Kt / sqrt(D)) · V`
    Attention,
    /// `layernorm(X) · Y`
    LayernormMatmul,
    /// `(swish(n·W) ⊙ (n·V)) · U` with `n = rmsnorm(X)`
    RmsSwiglu,
    /// `relu(A · B)`
    MatmulRelu,
}

impl Example {
    pub const ALL: [Example; 4] =
        [Example::Attention, Example::LayernormMatmul, Example::RmsSwiglu, Example::MatmulRelu];

    pub fn name(self) -> &'static str {
        match self {
            Example::Attention => "attention",
            Example::LayernormMatmul => "layernorm-matmul",
            Example::RmsSwiglu => "rms-swiglu",
            Example::MatmulRelu => "matmul-relu",
        }
    }

    pub fn program(self) -> ArrayProgram {
        match self {
            Example::Attention => attention(),
            Example::LayernormMatmul => layernorm_matmul(),
            Example::RmsSwiglu => rms_swiglu(),
            Example::MatmulRelu => matmul_relu(),
        }
    }

    /// Dimension names used by the program, each to be bound to a block count.
    pub fn dims(self) -> &'static [&'static str] {
        match self {
            Example::Attention => &["M", "D", "N", "L"],
            Example::LayernormMatmul => &["M", "K", "N"],
            Example::RmsSwiglu => &["M", "D", "K", "N"],
            Example::MatmulRelu => &["M", "K", "N"],
        }
    }

    /// Dense evaluation straight from the defining formula, on logical
    /// (untransposed) inputs.
    pub fn reference(self, inputs: &BTreeMap<String, Array2<f64>>) -> Result<BTreeMap<String, Array2<f64>>, ExecError> {
        let get = |n: &str| inputs.get(n).ok_or_else(|| ExecError::MissingInput(n.to_string()));
        let (name, out) = match self {
            Example::Attention => ("O", reference::attention(get("Q")?, get("Kt")?, get("V")?)?),
            Example::LayernormMatmul => ("O", reference::layernorm_matmul(get("X")?, get("Y")?)?),
            Example::RmsSwiglu => ("O", reference::rms_swiglu(get("X")?, get("W")?, get("V")?, get("U")?, 0.0)?),
            Example::MatmulRelu => ("C", reference::matmul(get("A")?, get("B")?)?.mapv(|v| v.max(0.0))),
        };
        Ok(BTreeMap::from([(name.to_string(), out)]))
    }
}

impl fmt::Display for Example {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Example {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Example::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| {
            format!("unknown example {s:?}; expected one of attention, layernorm-matmul, rms-swiglu, matmul-relu")
        })
    }
}

fn attention() -> ArrayProgram {
    let mut ap = ArrayProgram::new();
    let q = ap.input("Q", "M", "D");
    let kt = ap.input("Kt", "D", "N");
    let v = ap.input("V", "N", "L");
    let s = ap.op(ArrayOpKind::Matmul, &[q, kt]);
    let scaled = ap.op(ArrayOpKind::divide_by(ScalarExpr::extent("D").sqrt()), &[s]);
    let p = ap.op(ArrayOpKind::Softmax, &[scaled]);
    let o = ap.op(ArrayOpKind::Matmul, &[p, v]);
    ap.output("O", o);
    ap
}

fn layernorm_matmul() -> ArrayProgram {
    let mut ap = ArrayProgram::new();
    let x = ap.input("X", "M", "K");
    let y = ap.input("Y", "K", "N");
    let n = ap.op(ArrayOpKind::Layernorm, &[x]);
    let o = ap.op(ArrayOpKind::Matmul, &[n, y]);
    ap.output("O", o);
    ap
}

fn rms_swiglu() -> ArrayProgram {
    let mut ap = ArrayProgram::new();
    let x = ap.input("X", "M", "D");
    let w = ap.input("W", "D", "K");
    let v = ap.input("V", "D", "K");
    let u = ap.input("U", "K", "N");
    let n = ap.op(ArrayOpKind::Rmsnorm { eps: 0.0 }, &[x]);
    let h1 = ap.op(ArrayOpKind::Matmul, &[n, w]);
    let h2 = ap.op(ArrayOpKind::Matmul, &[n, v]);
    let g = ap.op(ArrayOpKind::swish(), &[h1]);
    let p = ap.op(ArrayOpKind::Hadamard, &[g, h2]);
    let o = ap.op(ArrayOpKind::Matmul, &[p, u]);
    ap.output("O", o);
    ap
}

fn matmul_relu() -> ArrayProgram {
    let mut ap = ArrayProgram::new();
    let a = ap.input("A", "M", "K");
    let b = ap.input("B", "K", "N");
    let c = ap.op(ArrayOpKind::Matmul, &[a, b]);
    let r = ap.op(ArrayOpKind::elementwise(ScalarExpr::x().relu()), &[c]);
    ap.output("C", r);
    ap
}
